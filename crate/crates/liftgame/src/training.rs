//! Offline generator training on a dataset of initial states, and online
//! self-play learning in the receding-horizon loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use liftgame_core::bimatrix::BimatrixError;
use liftgame_core::generator::{generate, generate_vjp, GeneratorParams, GeneratorShape};
use liftgame_core::lifted_game::{GameError, LiftedGame, Player};
use liftgame_core::tag_env::{sample_initial_state, PlayerState, TagEnvSpec};
use liftgame_core::traj_opt::TrajError;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::save_checkpoint;
use crate::sim::ClosedLoop;
use crate::stats::Summary;

/// Largest dataset trained full-batch when no batch size is set.
pub const FULL_BATCH_LIMIT: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rates: [f64; 2],
    pub batch_size: Option<usize>,
    pub iterations: usize,
    pub dataset_size: usize,
    pub candidates: [usize; 2],
    /// Planning horizon; the environment's when unset.
    pub horizon: Option<usize>,
    pub seed: u64,
    pub penalty_weight: f64,
    /// Save checkpoints every this many iterations; 0 saves only the end.
    pub checkpoint_every: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rates: [1e-2, 1e-2],
            batch_size: None,
            iterations: 200,
            dataset_size: 64,
            candidates: [2, 2],
            horizon: None,
            seed: 0,
            penalty_weight: liftgame_core::lifted_game::DEFAULT_PENALTY_WEIGHT,
            checkpoint_every: 0,
            hidden: vec![64, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(self.rates.iter().all(|r| *r >= 0.0 && r.is_finite()), "rates must be nonnegative");
        anyhow::ensure!(self.dataset_size >= 1, "dataset_size must be positive");
        anyhow::ensure!(self.batch_size != Some(0), "batch_size must be positive");
        anyhow::ensure!(!self.candidates.contains(&0), "candidates must be positive");
        anyhow::ensure!(self.horizon.is_none_or(|h| h >= 2), "horizon must be at least 2");
        anyhow::ensure!(self.penalty_weight >= 0.0, "penalty_weight must be nonnegative");
        anyhow::ensure!(!self.hidden.contains(&0), "hidden widths must be positive");
        Ok(())
    }

    pub fn batch(&self) -> usize {
        match self.batch_size {
            Some(b) => b.min(self.dataset_size),
            None => self.dataset_size.min(FULL_BATCH_LIMIT),
        }
    }

    pub fn env(&self, env: &TagEnvSpec) -> TagEnvSpec {
        match self.horizon {
            Some(h) => env.clone().with_horizon(h),
            None => env.clone(),
        }
    }

    pub fn game(&self, env: &TagEnvSpec) -> Result<LiftedGame, TrainError> {
        let mut game = LiftedGame::tag(env).map_err(|source| TrainError::Setup { source })?;
        game.penalty_weight = self.penalty_weight;
        Ok(game)
    }

    /// Freshly initialized generators; the evader's seed is offset.
    pub fn init_generators(&self, env: &TagEnvSpec) -> Result<[GeneratorParams; 2], TrainError> {
        let make = |player: Player, seed: u64| {
            let n = self.candidates[player.index()];
            let shape = GeneratorShape::tag_with_hidden(env, player, n, self.hidden.clone());
            GeneratorParams::init(shape, seed).map_err(|e| TrainError::Generator(e.to_string()))
        };
        Ok([make(Player::Pursuer, self.seed)?, make(Player::Evader, self.seed.wrapping_add(1))?])
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("cannot set up the trajectory problems: {source}")]
    Setup { source: TrajError },
    #[error("generator: {0}")]
    Generator(String),
    #[error("iteration {iteration}, sample {sample}: {source}")]
    Game { iteration: usize, sample: usize, source: GameError },
    #[error("non-finite loss at iteration {iteration}{}", checkpoint_note(.checkpoint))]
    NonFinite { iteration: usize, checkpoint: Option<PathBuf> },
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

fn checkpoint_note(c: &Option<PathBuf>) -> String {
    c.as_ref().map(|p| format!(" (last parameters saved to {})", p.display())).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub states: Vec<(PlayerState, PlayerState)>,
}

/// `d` joint initial states; deterministic per seed.
pub fn sample_dataset(env: &TagEnvSpec, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset { states: (0..d).map(|_| sample_initial_state(env, &mut rng)).collect() }
}

/// Whether an error comes from a derivative taken at a degenerate point.
pub fn is_degenerate(e: &GameError) -> bool {
    matches!(
        e,
        GameError::Bimatrix(BimatrixError::NonIsolated)
            | GameError::Traj { source: TrajError::DegenerateDerivative, .. }
    )
}

/// Batch-mean losses and parameter gradients at fixed parameters.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub mean_losses: [f64; 2],
    pub gradients: [GeneratorParams; 2],
    pub used: usize,
    pub skipped: Vec<usize>,
}

struct SampleGradient {
    losses: [f64; 2],
    gradients: [GeneratorParams; 2],
}

fn sample_gradient(
    game: &LiftedGame,
    theta: &[GeneratorParams; 2],
    x1: &PlayerState,
    x2: &PlayerState,
) -> Result<SampleGradient, GameError> {
    let (a1, a2) = (x1.to_array(), x2.to_array());
    let bundle = |p: usize| {
        generate(&theta[p], &a1, &a2).expect("generator input is a pair of states")
    };
    let (b1, b2) = (bundle(0), bundle(1));
    let constraints = game.build_constraints(&a1, &a2)?;
    let sol = game.forward_with(&b1, &b2, &constraints, None)?;
    let grads = game.player_gradients(&sol, [&b1, &b2], &constraints, false)?;
    let vjp = |p: usize| {
        generate_vjp(&theta[p], &a1, &a2, &grads.gradients[p]).expect("cotangent matches the bundle")
    };
    Ok(SampleGradient {
        losses: [sol.losses.0 + grads.penalties[0], sol.losses.1 + grads.penalties[1]],
        gradients: [vjp(0), vjp(1)],
    })
}

/// Gradients of the batch-mean objectives over `indices`, both at `theta`.
/// Samples are evaluated in parallel and summed in index order.
pub fn batch_gradients(
    game: &LiftedGame,
    theta: &[GeneratorParams; 2],
    dataset: &Dataset,
    indices: &[usize],
    iteration: usize,
) -> Result<BatchGradients, TrainError> {
    let results: Vec<Result<SampleGradient, GameError>> = indices
        .par_iter()
        .map(|&k| {
            let (x1, x2) = &dataset.states[k];
            sample_gradient(game, theta, x1, x2)
        })
        .collect();
    let mut sum = [theta[0].zeros_like(), theta[1].zeros_like()];
    let mut losses = [0.0; 2];
    let mut used = 0;
    let mut skipped = Vec::new();
    for (&k, r) in indices.iter().zip(results) {
        match r {
            Ok(s) => {
                for p in 0..2 {
                    sum[p].axpy(1.0, &s.gradients[p]);
                    losses[p] += s.losses[p];
                }
                used += 1;
            }
            Err(e) if is_degenerate(&e) => {
                log::debug!("iteration {iteration}: skipping sample {k}: {e}");
                skipped.push(k);
            }
            Err(source) => return Err(TrainError::Game { iteration, sample: k, source }),
        }
    }
    if used > 0 {
        let inv = 1.0 / used as f64;
        for p in 0..2 {
            sum[p].scale(inv);
            losses[p] *= inv;
        }
    }
    Ok(BatchGradients { mean_losses: losses, gradients: sum, used, skipped })
}

/// Minibatch of iteration `it`: everything when the batch covers the
/// dataset, otherwise a draw without replacement seeded by `(seed, it)`.
pub fn batch_indices(config: &TrainConfig, iteration: usize) -> Vec<usize> {
    let (d, b) = (config.dataset_size, config.batch());
    if b >= d {
        return (0..d).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(iteration as u64 + 1));
    let mut idx = sample_indices(&mut rng, d, b).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Batch-mean objectives including the sticky penalty.
    pub mean_l1: f64,
    pub mean_l2: f64,
    pub grad_norms: [f64; 2],
    pub skipped: usize,
    pub wall_time: f64,
}

/// Parameters plus the next iteration to run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub theta: [GeneratorParams; 2],
    pub next_iteration: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub theta: [GeneratorParams; 2],
    pub trace: Vec<IterationRecord>,
    pub skipped_samples: usize,
}

pub fn checkpoint_paths(dir: &Path, tag: &str) -> [PathBuf; 2] {
    [dir.join(format!("pursuer{tag}.json")), dir.join(format!("evader{tag}.json"))]
}

fn save_pair(dir: &Path, tag: &str, theta: &[GeneratorParams; 2], iteration: usize) -> anyhow::Result<PathBuf> {
    let paths = checkpoint_paths(dir, tag);
    for (p, path) in paths.iter().enumerate() {
        save_checkpoint(path, &theta[p], iteration)?;
    }
    Ok(paths[0].clone())
}

/// Offline training from freshly initialized generators. With `out`, a
/// JSON-lines log and checkpoints are written there.
pub fn train_offline(config: &TrainConfig, env: &TagEnvSpec, out: Option<&Path>) -> Result<TrainOutput, TrainError> {
    let env = config.env(env);
    let state = TrainState { theta: config.init_generators(&env)?, next_iteration: 0 };
    train_from(config, &env, state, out)
}

/// Continues training from `state` up to `config.iterations`.
pub fn train_from(
    config: &TrainConfig,
    env: &TagEnvSpec,
    state: TrainState,
    out: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    let env = config.env(env);
    let game = config.game(&env)?;
    let dataset = sample_dataset(&env, config.dataset_size, config.seed);
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(anyhow::Error::from)?;
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("train_log.jsonl"))
                .map_err(anyhow::Error::from)?;
            Some(BufWriter::new(f))
        }
        None => None,
    };
    let TrainState { mut theta, next_iteration } = state;
    let mut trace = Vec::new();
    let mut skipped_samples = 0;
    let start = Instant::now();
    for iteration in next_iteration..config.iterations {
        let indices = batch_indices(config, iteration);
        let batch = batch_gradients(&game, &theta, &dataset, &indices, iteration)?;
        if batch.mean_losses.iter().any(|l| !l.is_finite())
            || batch.gradients.iter().any(|g| !g.is_finite())
        {
            let checkpoint = out.map(|dir| save_pair(dir, "_failed", &theta, iteration)).transpose()?;
            return Err(TrainError::NonFinite { iteration, checkpoint });
        }
        if !batch.skipped.is_empty() {
            log::info!("iteration {iteration}: skipped {} degenerate samples", batch.skipped.len());
        }
        skipped_samples += batch.skipped.len();
        for p in 0..2 {
            theta[p].axpy(-config.rates[p], &batch.gradients[p]);
        }
        let record = IterationRecord {
            iteration,
            mean_l1: batch.mean_losses[0],
            mean_l2: batch.mean_losses[1],
            grad_norms: [batch.gradients[0].norm(), batch.gradients[1].norm()],
            skipped: batch.skipped.len(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &record).map_err(anyhow::Error::from)?;
            w.write_all(b"\n").map_err(anyhow::Error::from)?;
        }
        trace.push(record);
        let done = iteration + 1;
        if let Some(dir) = out {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations {
                save_pair(dir, &format!("_{done:06}"), &theta, done)?;
            }
        }
    }
    if let Some(dir) = out {
        save_pair(dir, "", &theta, config.iterations.max(next_iteration))?;
    }
    if let Some(w) = log.as_mut() {
        w.flush().map_err(anyhow::Error::from)?;
    }
    Ok(TrainOutput { theta, trace, skipped_samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayConfig {
    pub train: TrainConfig,
    pub turns: usize,
    pub replan_interval: usize,
    pub window: usize,
    /// Record strategy snapshots every this many turns.
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    /// Expected pursuer cost of the turn's lifted game.
    pub planned_value: f64,
    /// Pursuer cost of the motion executed this turn.
    pub realized_value: f64,
    pub grad_norms: [f64; 2],
    pub sampled: [usize; 2],
    pub forward_ms: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStat {
    pub end_turn: usize,
    pub mean: f64,
    pub sem: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySnapshot {
    pub turn: usize,
    pub state: (PlayerState, PlayerState),
    pub weights: [Vec<f64>; 2],
    pub positions: [Vec<Vec<[f64; 2]>>; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfPlayTrace {
    pub turns: Vec<TurnRecord>,
    /// Moving-window statistics of the realized value.
    pub windows: Vec<WindowStat>,
    pub snapshots: Vec<StrategySnapshot>,
    pub closed_loop: ClosedLoop,
}

impl SelfPlayTrace {
    /// Mean combined gradient norm over the first and last `window` turns.
    pub fn gradient_norm_windows(&self, window: usize) -> (f64, f64) {
        let norms: Vec<f64> = self
            .turns
            .iter()
            .filter(|t| !t.skipped)
            .map(|t| t.grad_norms[0].hypot(t.grad_norms[1]))
            .collect();
        let w = window.clamp(1, norms.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&norms[..w.min(norms.len())]), mean(&norms[norms.len().saturating_sub(w)..]))
    }

    pub fn mean_forward_ms(&self) -> f64 {
        self.turns.iter().map(|t| t.forward_ms).sum::<f64>() / self.turns.len().max(1) as f64
    }

    /// Relative change of the windowed mean over the last `window` turns.
    pub fn window_drift(&self, window: usize) -> Option<f64> {
        let last = self.windows.last()?;
        let earlier = self.windows.iter().rev().find(|w| w.end_turn + window <= last.end_turn)?;
        Some(((last.mean - earlier.mean) / earlier.mean.abs().max(1e-12)).abs())
    }
}

/// Receding-horizon self-play from untrained generators: every turn both
/// players take one simultaneous gradient step on the current joint state,
/// then each executes a candidate sampled from its mixed strategy.
pub fn self_play_learn(config: &SelfPlayConfig, env: &TagEnvSpec) -> Result<SelfPlayTrace, TrainError> {
    config.train.validate()?;
    let env = config.train.env(env);
    let game = config.train.game(&env)?;
    let mut theta = config.train.init_generators(&env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let (x1, x2) = sample_initial_state(&env, &mut rng);
    let mut sampling = [
        ChaCha8Rng::seed_from_u64(config.train.seed.wrapping_add(11)),
        ChaCha8Rng::seed_from_u64(config.train.seed.wrapping_add(12)),
    ];
    let mut closed_loop = ClosedLoop::start(x1, x2);
    let mut turns = Vec::with_capacity(config.turns);
    let mut windows = Vec::new();
    let mut snapshots = Vec::new();
    for turn in 0..config.turns {
        let (s1, s2) = closed_loop.current();
        let (a1, a2) = (s1.to_array(), s2.to_array());
        let b1 = generate(&theta[0], &a1, &a2).map_err(|e| TrainError::Generator(e.to_string()))?;
        let b2 = generate(&theta[1], &a1, &a2).map_err(|e| TrainError::Generator(e.to_string()))?;
        let game_err = |source| TrainError::Game { iteration: turn, sample: 0, source };
        let constraints = game.build_constraints(&a1, &a2).map_err(game_err)?;
        let t0 = Instant::now();
        let sol = game.forward_with(&b1, &b2, &constraints, None).map_err(game_err)?;
        let forward_ms = t0.elapsed().as_secs_f64() * 1e3;
        if !sol.losses.0.is_finite() {
            return Err(TrainError::NonFinite { iteration: turn, checkpoint: None });
        }
        let (grad_norms, skipped) = match game.player_gradients(&sol, [&b1, &b2], &constraints, false) {
            Ok(g) => {
                let mut norms = [0.0; 2];
                let mut updates = Vec::with_capacity(2);
                for p in 0..2 {
                    let d = generate_vjp(&theta[p], &a1, &a2, &g.gradients[p])
                        .map_err(|e| TrainError::Generator(e.to_string()))?;
                    norms[p] = d.norm();
                    updates.push(d);
                }
                for (p, d) in updates.iter().enumerate() {
                    theta[p].axpy(-config.train.rates[p], d);
                }
                (norms, false)
            }
            Err(e) if is_degenerate(&e) => {
                log::debug!("turn {turn}: skipping update: {e}");
                ([0.0; 2], true)
            }
            Err(e) => return Err(game_err(e)),
        };
        let sampled = [
            sol.sample_candidate(Player::Pursuer, &mut sampling[0]),
            sol.sample_candidate(Player::Evader, &mut sampling[1]),
        ];
        let before = closed_loop.len();
        closed_loop.execute(
            [sol.trajectory(Player::Pursuer, sampled[0]), sol.trajectory(Player::Evader, sampled[1])],
            config.replan_interval,
            &env,
        );
        let realized_value = closed_loop.value_from(before, &env);
        if config.snapshot_every > 0 && turn % config.snapshot_every == 0 {
            let pos = |p: Player| {
                sol.trajectories(p)
                    .map(|t| liftgame_core::tag_env::positions(t.as_slice(), &env))
                    .collect()
            };
            snapshots.push(StrategySnapshot {
                turn,
                state: (s1, s2),
                weights: [sol.equilibrium.q1.iter().copied().collect(), sol.equilibrium.q2.iter().copied().collect()],
                positions: [pos(Player::Pursuer), pos(Player::Evader)],
            });
        }
        turns.push(TurnRecord {
            turn,
            planned_value: sol.losses.0,
            realized_value,
            grad_norms,
            sampled,
            forward_ms,
            skipped,
        });
        let start = turns.len().saturating_sub(config.window);
        let values: Vec<f64> = turns[start..].iter().map(|t| t.realized_value).collect();
        if let Some(s) = Summary::of(&values) {
            windows.push(WindowStat { end_turn: turn + 1, mean: s.mean, sem: s.sem });
        }
    }
    Ok(SelfPlayTrace { turns, windows, snapshots, closed_loop })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            iterations: 3,
            dataset_size: 3,
            horizon: Some(5),
            hidden: vec![6],
            rates: [0.5, 0.5],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn dataset_is_reproducible_and_feasible() {
        let env = TagEnvSpec::default();
        let a = sample_dataset(&env, 1, 3);
        assert_eq!(a, sample_dataset(&env, 1, 3));
        for (x1, x2) in sample_dataset(&env, 200, 4).states {
            assert!(env.state_feasible(&x1, 0.0) && env.state_feasible(&x2, 0.0));
        }
    }

    #[test]
    fn minibatches() {
        let mut c = TrainConfig { dataset_size: 10, ..TrainConfig::default() };
        assert_eq!(batch_indices(&c, 0), (0..10).collect::<Vec<_>>());
        c.batch_size = Some(4);
        let b = batch_indices(&c, 3);
        assert_eq!(b.len(), 4);
        assert_eq!(b, batch_indices(&c, 3));
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn zero_rates_keep_parameters() {
        let env = TagEnvSpec::default();
        let mut c = small_config();
        c.rates = [0.0, 0.0];
        let init = c.init_generators(&c.env(&env)).unwrap();
        let out = train_offline(&c, &env, None).unwrap();
        assert_eq!(out.theta, init);
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn zero_sum_batch_losses() {
        let env = TagEnvSpec::default();
        let mut c = small_config();
        c.penalty_weight = 0.0;
        let out = train_offline(&c, &env, None).unwrap();
        for r in &out.trace {
            assert!((r.mean_l1 + r.mean_l2).abs() < 1e-12);
        }
    }
}
