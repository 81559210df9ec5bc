//! Monte Carlo studies on tag and the scalar interval game.
//!
//! Every trial draws from its own ChaCha stream keyed by the master seed, a
//! stream tag and the trial index, so results do not depend on scheduling.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use liftgame_core::generator::{generate, GeneratorParams};
use liftgame_core::lifted_game::{
    GameCosts, GameError, GradientPlayConfig, GradientPlayResult, IntervalCosts, LiftedGame, LiftedSolution, Player,
    ReferenceBundle,
};
use liftgame_core::tag_env::{pursuer_cost, sample_initial_state, PlayerState, TagEnvSpec};
use liftgame_core::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, StrategyKind};
use crate::io::write_json;
use crate::sim::ClosedLoop;
use crate::stats::{combined_sem, Summary};
use crate::training::{self_play_learn, train_offline, SelfPlayConfig, SelfPlayTrace, TrainConfig};

mod tags {
    pub const STATES: u64 = 1;
    pub const EVADER_GOALS: u64 = 2;
    pub const BASELINE_GOALS: u64 = 3;
    pub const LEARNED_GOALS: u64 = 4;
    pub const CONVERGENCE: u64 = 5;
    pub const TOURNAMENT: u64 = 6;
    pub const RECEDING: u64 = 7;
    pub const TOY: u64 = 8;
}

/// Independent stream for `(tag, index)` under the master seed.
pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) ^ index);
    rng
}

/// The `k`-th sampled initial state; shared by all tag studies.
pub fn initial_state(env: &TagEnvSpec, seed: u64, k: usize) -> (PlayerState, PlayerState) {
    sample_initial_state(env, &mut stream(seed, tags::STATES, k as u64))
}

/// Plans for the player controlled by a solver.
pub trait Policy {
    fn label(&self) -> String;
    fn plan(&mut self, x1: &PlayerState, x2: &PlayerState) -> Result<LiftedSolution, GameError>;
}

/// Run-time evaluation of trained generators: one forward pass per plan.
#[derive(Debug, Clone)]
pub struct GeneratorPolicy {
    pub game: LiftedGame,
    pub theta: [GeneratorParams; 2],
    pub label: String,
}

impl Policy for GeneratorPolicy {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn plan(&mut self, x1: &PlayerState, x2: &PlayerState) -> Result<LiftedSolution, GameError> {
        let (a1, a2) = (x1.to_array(), x2.to_array());
        let b1 = generate(&self.theta[0], &a1, &a2).expect("generator sized for tag states");
        let b2 = generate(&self.theta[1], &a1, &a2).expect("generator sized for tag states");
        self.game.forward(&b1, &b2, &a1, &a2)
    }
}

/// Gradient play from random references at every plan.
#[derive(Debug, Clone)]
pub struct GradientPlayPolicy {
    pub game: LiftedGame,
    pub config: GradientPlayConfig,
    pub counts: [usize; 2],
    pub rng: ChaCha8Rng,
    pub label: String,
}

impl Policy for GradientPlayPolicy {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn plan(&mut self, x1: &PlayerState, x2: &PlayerState) -> Result<LiftedSolution, GameError> {
        let r = self
            .game
            .gradient_play_references(&x1.to_array(), &x2.to_array(), self.counts, &self.config, &mut self.rng)?;
        Ok(r.solution)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seeds: [u64; 2],
    pub labels: [String; 2],
    /// Candidate each player executed at every replanning instant.
    pub sampled: Vec<[usize; 2]>,
    pub closed_loop: ClosedLoop,
    /// Pursuer cost of the whole executed motion.
    pub value: f64,
    /// Planning latency per turn and player (ms).
    pub plan_ms: Vec<[f64; 2]>,
}

impl EpisodeRecord {
    pub fn mean_plan_ms(&self) -> f64 {
        let n = self.plan_ms.len().max(1) as f64;
        self.plan_ms.iter().map(|p| (p[0] + p[1]) / 2.0).sum::<f64>() / n
    }
}

/// Model-predictive game play: at every replanning instant each player
/// solves its own game from the joint state, samples one candidate from its
/// own mixed strategy with its private stream, and executes it for
/// `replan_interval` steps.
#[allow(clippy::too_many_arguments)]
pub fn mpgp_simulate(
    pursuer: &mut dyn Policy,
    evader: &mut dyn Policy,
    x1: PlayerState,
    x2: PlayerState,
    total_turns: usize,
    replan_interval: usize,
    env: &TagEnvSpec,
    seeds: [u64; 2],
) -> Result<EpisodeRecord> {
    anyhow::ensure!(
        (1..=env.horizon).contains(&replan_interval),
        "replan interval {replan_interval} must lie in 1..={}",
        env.horizon
    );
    let mut rngs = seeds.map(ChaCha8Rng::seed_from_u64);
    let mut cl = ClosedLoop::start(x1, x2);
    let mut sampled = Vec::with_capacity(total_turns);
    let mut plan_ms = Vec::with_capacity(total_turns);
    for turn in 0..total_turns {
        let (s1, s2) = cl.current();
        let t0 = Instant::now();
        let p_sol = pursuer.plan(&s1, &s2).with_context(|| format!("turn {turn}: pursuer ({})", pursuer.label()))?;
        let t1 = Instant::now();
        let e_sol = evader.plan(&s1, &s2).with_context(|| format!("turn {turn}: evader ({})", evader.label()))?;
        let t2 = Instant::now();
        plan_ms.push([(t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3]);
        let c1 = p_sol.sample_candidate(Player::Pursuer, &mut rngs[0]);
        let c2 = e_sol.sample_candidate(Player::Evader, &mut rngs[1]);
        sampled.push([c1, c2]);
        cl.execute(
            [p_sol.trajectory(Player::Pursuer, c1), e_sol.trajectory(Player::Evader, c2)],
            replan_interval,
            env,
        );
    }
    let value = cl.value(env);
    Ok(EpisodeRecord {
        seeds,
        labels: [pursuer.label(), evader.label()],
        sampled,
        closed_loop: cl,
        value,
        plan_ms,
    })
}

fn kind_label(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Pure => "pure",
        StrategyKind::Lifted => "lifted",
    }
}

fn kind_counts(kind: StrategyKind, lifted: [usize; 2]) -> [usize; 2] {
    match kind {
        StrategyKind::Pure => [1, 1],
        StrategyKind::Lifted => lifted,
    }
}

/// Uniform goal positions over the arena.
fn goal_bundle<R: Rng + ?Sized>(env: &TagEnvSpec, player: Player, n: usize, rng: &mut R) -> ReferenceBundle {
    let refs = (0..n).map(|_| DVector::from_row_slice(&env.arena.sample_uniform(rng))).collect();
    ReferenceBundle::new(player, refs)
}

// ---------------------------------------------------------------------------
// Sampled vs learned candidates

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledVsLearnedTrial {
    pub trial: usize,
    /// Baseline value for `n₁ = 1, 2, …`.
    pub baseline: Vec<f64>,
    pub learned: f64,
    pub learned_weights: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledVsLearnedReport {
    pub goal_distribution: String,
    /// Index `k` summarizes `n₁ = k + 1`.
    pub baseline: Vec<Summary>,
    pub learned: Option<Summary>,
    pub trials: Vec<SampledVsLearnedTrial>,
}

pub fn exp_sampled_vs_learned(config: &RunConfig) -> Result<SampledVsLearnedReport> {
    let env = &config.env;
    let e = &config.experiments;
    let game = LiftedGame::tag_goal(env, e.goal_control_weight)?;
    let gp = GradientPlayConfig { rates: [e.goal_rate, 0.0], ..config.gradient_play.clone() };
    let n = config.counts().sampled_vs_learned;
    let trials: Vec<SampledVsLearnedTrial> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<SampledVsLearnedTrial> {
            let (x1, x2) = initial_state(env, config.seed, k);
            let (a1, a2) = (x1.to_array(), x2.to_array());
            let evader = goal_bundle(env, Player::Evader, e.evader_goals, &mut stream(config.seed, tags::EVADER_GOALS, k as u64));
            // Nested prefixes of one draw, so larger bundles extend smaller ones.
            let pool = goal_bundle(env, Player::Pursuer, e.max_sampled, &mut stream(config.seed, tags::BASELINE_GOALS, k as u64));
            let mut baseline = Vec::with_capacity(e.max_sampled);
            for n1 in 1..=e.max_sampled {
                let b1 = ReferenceBundle::new(Player::Pursuer, pool.references[..n1].to_vec());
                baseline.push(game.forward(&b1, &evader, &a1, &a2)?.losses.0);
            }
            let init = goal_bundle(env, Player::Pursuer, e.learned_candidates, &mut stream(config.seed, tags::LEARNED_GOALS, k as u64));
            let learned = game.gradient_play([init, evader], &a1, &a2, &gp)?;
            Ok(SampledVsLearnedTrial {
                trial: k,
                baseline,
                learned: learned.value(),
                learned_weights: learned.solution.equilibrium.q1.iter().copied().collect(),
            })
        })
        .collect::<Result<_>>()?;
    let baseline = (0..e.max_sampled)
        .filter_map(|i| Summary::of(&trials.iter().map(|t| t.baseline[i]).collect::<Vec<_>>()))
        .collect();
    let learned = Summary::of(&trials.iter().map(|t| t.learned).collect::<Vec<_>>());
    Ok(SampledVsLearnedReport {
        goal_distribution: "goal positions uniform over the arena polygon".into(),
        baseline,
        learned,
        trials,
    })
}

// ---------------------------------------------------------------------------
// Pure vs lifted equilibrium convergence

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub trace: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub final_grad_norms: [f64; 2],
    pub weights: [Vec<f64>; 2],
}

impl ConvergenceRun {
    fn from_result(r: &GradientPlayResult) -> Self {
        Self {
            trace: r.trace.clone(),
            value: r.value(),
            converged: r.converged,
            final_grad_norms: r.grad_norms.last().copied().unwrap_or([0.0; 2]),
            weights: [
                r.solution.equilibrium.q1.iter().copied().collect(),
                r.solution.equilibrium.q2.iter().copied().collect(),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStats {
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
    pub final_value: Option<Summary>,
    /// `(max − min) / |mean|` of the averaged trace over its last 50 iterations.
    pub tail_drift: f64,
}

impl TraceStats {
    fn of(runs: &[&ConvergenceRun], steps: usize) -> Self {
        let mut mean = Vec::with_capacity(steps);
        let mut sem = Vec::with_capacity(steps);
        for k in 0..steps {
            // Runs that stopped early hold their last value.
            let vals: Vec<f64> = runs.iter().map(|r| r.trace[k.min(r.trace.len() - 1)]).collect();
            let s = Summary::of(&vals).expect("at least one run");
            mean.push(s.mean);
            sem.push(s.sem_or_zero());
        }
        let tail = &mean[mean.len().saturating_sub(50)..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let m = tail.iter().sum::<f64>() / tail.len() as f64;
        Self {
            mean,
            sem,
            final_value: Summary::of(&runs.iter().map(|r| r.value).collect::<Vec<_>>()),
            tail_drift: (hi - lo) / m.abs().max(1e-12),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub pure: Option<TraceStats>,
    pub lifted: Option<TraceStats>,
    pub runs: Vec<[ConvergenceRun; 2]>,
    pub tolerance: f64,
}

pub fn exp_equilibrium_convergence(config: &RunConfig) -> Result<ConvergenceReport> {
    let env = &config.env;
    let game = LiftedGame::tag(env)?;
    let gp = &config.gradient_play;
    let lifted_counts = config.solver.candidates;
    let n = config.counts().convergence;
    let runs: Vec<[ConvergenceRun; 2]> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<[ConvergenceRun; 2]> {
            let (x1, x2) = initial_state(env, config.seed, k);
            let (a1, a2) = (x1.to_array(), x2.to_array());
            let run = |counts: [usize; 2], sub: u64| -> Result<ConvergenceRun> {
                let mut rng = stream(config.seed, tags::CONVERGENCE, 2 * k as u64 + sub);
                let r = game.gradient_play_references(&a1, &a2, counts, gp, &mut rng)?;
                Ok(ConvergenceRun::from_result(&r))
            };
            Ok([run([1, 1], 0)?, run(lifted_counts, 1)?])
        })
        .collect::<Result<_>>()?;
    let stats = |i: usize| {
        (!runs.is_empty()).then(|| TraceStats::of(&runs.iter().map(|r| &r[i]).collect::<Vec<_>>(), gp.steps))
    };
    Ok(ConvergenceReport { pure: stats(0), lifted: stats(1), runs, tolerance: gp.tolerance })
}

// ---------------------------------------------------------------------------
// Tournaments

/// Values of one solver pairing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TournamentResult {
    pub pursuer: StrategyKind,
    pub evader: StrategyKind,
    pub values: Vec<f64>,
    pub summary: Option<Summary>,
}

impl TournamentResult {
    fn new(pursuer: StrategyKind, evader: StrategyKind, values: Vec<f64>) -> Self {
        let summary = Summary::of(&values);
        Self { pursuer, evader, values, summary }
    }

    pub fn mean(&self) -> f64 {
        self.summary.map_or(f64::NAN, |s| s.mean)
    }
}

/// Rows: pursuer (lifted, pure); columns: evader (lifted, pure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TournamentGrid {
    pub cells: [[TournamentResult; 2]; 2],
}

pub const KINDS: [StrategyKind; 2] = [StrategyKind::Lifted, StrategyKind::Pure];

impl TournamentGrid {
    fn from_values(values: &[[[f64; 2]; 2]]) -> Self {
        let cell = |i: usize, j: usize| TournamentResult::new(KINDS[i], KINDS[j], values.iter().map(|v| v[i][j]).collect());
        Self { cells: [[cell(0, 0), cell(0, 1)], [cell(1, 0), cell(1, 1)]] }
    }

    pub fn get(&self, pursuer: StrategyKind, evader: StrategyKind) -> &TournamentResult {
        let idx = |k| KINDS.iter().position(|&x| x == k).expect("known kind");
        &self.cells[idx(pursuer)][idx(evader)]
    }

    /// Checks `(Pure, Lifted) > (Lifted, Lifted) > (Lifted, Pure) > (Pure, Pure)`
    /// with each gap at least `sems` combined SEM. Returns the gaps in SEM units.
    pub fn ordering(&self, sems: f64) -> (bool, [f64; 3]) {
        use StrategyKind::{Lifted, Pure};
        let chain = [self.get(Pure, Lifted), self.get(Lifted, Lifted), self.get(Lifted, Pure), self.get(Pure, Pure)];
        let mut gaps = [0.0; 3];
        let mut ok = true;
        for i in 0..3 {
            let (Some(a), Some(b)) = (chain[i].summary, chain[i + 1].summary) else {
                return (false, gaps);
            };
            let c = combined_sem(&a, &b);
            gaps[i] = (a.mean - b.mean) / c.max(1e-300);
            ok &= a.mean - b.mean >= sems * c && a.mean > b.mean;
        }
        (ok, gaps)
    }
}

/// Whether `(Pure, Lifted) > (Lifted, Lifted) > (Lifted, Pure) > (Pure, Pure)`
/// holds with every gap at least one combined SEM.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub holds: bool,
    pub gaps_in_sem: [f64; 3],
}

impl OrderingCheck {
    fn of(grid: &TournamentGrid) -> Self {
        let (holds, gaps_in_sem) = grid.ordering(1.0);
        Self { holds, gaps_in_sem }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopTrial {
    pub state: usize,
    /// `values[i][j]`: pursuer kind `KINDS[i]` against evader kind `KINDS[j]`.
    pub values: [[f64; 2]; 2],
    /// Sampled candidate per (role, kind).
    pub sampled: [[usize; 2]; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub grid: Option<TournamentGrid>,
    pub ordering: Option<OrderingCheck>,
    pub trials: Vec<OpenLoopTrial>,
}

pub fn exp_open_loop_tournament(config: &RunConfig) -> Result<OpenLoopReport> {
    let env = &config.env;
    let game = LiftedGame::tag(env)?;
    let gp = &config.gradient_play;
    let lifted = config.solver.candidates;
    let n = config.counts().open_loop;
    let trials: Vec<OpenLoopTrial> = (0..n)
        .into_par_iter()
        .map(|k| -> Result<OpenLoopTrial> {
            let (x1, x2) = initial_state(env, config.seed, k);
            let (a1, a2) = (x1.to_array(), x2.to_array());
            // plans[role][kind]: each role runs its own solver instance.
            let mut plans: [[Option<DVector<f64>>; 2]; 2] = Default::default();
            let mut sampled = [[0; 2]; 2];
            for role in Player::BOTH {
                for (ki, &kind) in KINDS.iter().enumerate() {
                    let id = (k as u64) * 4 + (role.index() as u64) * 2 + ki as u64;
                    let mut rng = stream(config.seed, tags::TOURNAMENT, id);
                    let r = game.gradient_play_references(&a1, &a2, kind_counts(kind, lifted), gp, &mut rng)?;
                    let c = r.solution.sample_candidate(role, &mut rng);
                    sampled[role.index()][ki] = c;
                    plans[role.index()][ki] = Some(r.solution.trajectory(role, c).clone());
                }
            }
            let mut values = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    let t1 = plans[0][i].as_ref().expect("planned");
                    let t2 = plans[1][j].as_ref().expect("planned");
                    values[i][j] = pursuer_cost(t1.as_slice(), t2.as_slice(), env);
                }
            }
            Ok(OpenLoopTrial { state: k, values, sampled })
        })
        .collect::<Result<_>>()?;
    let grid = (!trials.is_empty()).then(|| TournamentGrid::from_values(&trials.iter().map(|t| t.values).collect::<Vec<_>>()));
    let ordering = grid.as_ref().map(OrderingCheck::of);
    Ok(OpenLoopReport { grid, ordering, trials })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecedingTrial {
    pub state: usize,
    pub pursuer: StrategyKind,
    pub evader: StrategyKind,
    pub value: f64,
    pub violations: usize,
    pub steps: usize,
    pub mean_plan_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub kind: StrategyKind,
    pub first_l1: f64,
    pub last_l1: f64,
    pub skipped_samples: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecedingReport {
    pub grid: Option<TournamentGrid>,
    pub ordering: Option<OrderingCheck>,
    pub trials: Vec<RecedingTrial>,
    pub training: Vec<TrainingSummary>,
}

/// Trains one generator pair per strategy class for the receding-horizon
/// tournament.
pub fn train_generators(config: &RunConfig, out: Option<&Path>) -> Result<([[GeneratorParams; 2]; 2], Vec<TrainingSummary>)> {
    let mut thetas = Vec::with_capacity(2);
    let mut summaries = Vec::with_capacity(2);
    for kind in KINDS {
        let tc = TrainConfig {
            candidates: kind_counts(kind, config.train.candidates),
            seed: config.train.seed ^ config.seed,
            ..config.train.clone()
        };
        let t0 = Instant::now();
        let dir = out.map(|d| d.join(format!("generators_{}", kind_label(kind))));
        let trained = train_offline(&tc, &config.env, dir.as_deref())?;
        summaries.push(TrainingSummary {
            kind,
            first_l1: trained.trace.first().map_or(f64::NAN, |r| r.mean_l1),
            last_l1: trained.trace.last().map_or(f64::NAN, |r| r.mean_l1),
            skipped_samples: trained.skipped_samples,
            seconds: t0.elapsed().as_secs_f64(),
        });
        thetas.push(trained.theta);
    }
    let lifted = thetas.remove(0);
    let pure = thetas.remove(0);
    Ok(([lifted, pure], summaries))
}

pub fn exp_receding_horizon_tournament(config: &RunConfig, out: Option<&Path>) -> Result<RecedingReport> {
    let env = &config.env;
    let (thetas, training) = train_generators(config, out)?;
    let game = LiftedGame::tag(env)?;
    let e = &config.experiments;
    let n = config.counts().receding;
    let jobs: Vec<(usize, usize, usize)> =
        (0..n).flat_map(|k| (0..2).flat_map(move |i| (0..2).map(move |j| (k, i, j)))).collect();
    let trials: Vec<RecedingTrial> = jobs
        .into_par_iter()
        .map(|(k, i, j)| -> Result<RecedingTrial> {
            let (x1, x2) = initial_state(env, config.seed, k);
            let policy = |ki: usize| GeneratorPolicy { game: game.clone(), theta: thetas[ki].clone(), label: kind_label(KINDS[ki]).into() };
            let (mut p, mut ev) = (policy(i), policy(j));
            let base = (k as u64) * 4 + (i as u64) * 2 + j as u64;
            let seeds = [0, 1].map(|r| {
                let mut s = stream(config.seed, tags::RECEDING, 2 * base + r);
                s.random::<u64>()
            });
            let ep = mpgp_simulate(&mut p, &mut ev, x1, x2, e.receding_updates, e.replan_interval, env, seeds)?;
            Ok(RecedingTrial {
                state: k,
                pursuer: KINDS[i],
                evader: KINDS[j],
                value: ep.value,
                violations: ep.closed_loop.violations,
                steps: ep.closed_loop.len(),
                mean_plan_ms: ep.mean_plan_ms(),
            })
        })
        .collect::<Result<_>>()?;
    let grid = (n > 0).then(|| {
        let per_state: Vec<[[f64; 2]; 2]> = (0..n)
            .map(|k| {
                let mut v = [[0.0; 2]; 2];
                for t in trials.iter().filter(|t| t.state == k) {
                    let idx = |x| KINDS.iter().position(|&y| y == x).expect("known kind");
                    v[idx(t.pursuer)][idx(t.evader)] = t.value;
                }
                v
            })
            .collect();
        TournamentGrid::from_values(&per_state)
    });
    let ordering = grid.as_ref().map(OrderingCheck::of);
    Ok(RecedingReport { grid, ordering, trials, training })
}

// ---------------------------------------------------------------------------
// Self-play

pub fn exp_self_play(config: &RunConfig) -> Result<SelfPlayTrace> {
    let turns = config.counts().self_play_turns;
    let sp = SelfPlayConfig {
        train: TrainConfig {
            seed: config.train.seed ^ config.seed,
            rates: config.experiments.self_play_rates,
            ..config.train.clone()
        },
        turns,
        replan_interval: config.experiments.replan_interval,
        window: config.experiments.self_play_window,
        snapshot_every: (turns / 5).max(1),
    };
    Ok(self_play_learn(&sp, &config.env)?)
}

// ---------------------------------------------------------------------------
// Interval game

pub const TOY_CORNERS: [[f64; 2]; 2] = [[-1.0, -1.0], [1.0, 1.0]];
/// Distance within which a limit point is attributed to a corner.
pub const CORNER_TOL: f64 = 1e-3;
/// Slack allowed in the local-equilibrium check.
pub const NASH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyRun {
    pub start: [f64; 2],
    pub limit: [f64; 2],
    pub steps: usize,
    /// Stopped early on the gradient-norm tolerance.
    pub stopped_early: bool,
    pub local_equilibrium: bool,
    /// Index into [`TOY_CORNERS`], if the limit is one of them.
    pub corner: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyVariantReport {
    pub regularization: f64,
    pub runs: Vec<ToyRun>,
    pub stopped_early: usize,
    pub at_equilibrium: usize,
    pub corner_counts: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyReport {
    pub regularized: ToyVariantReport,
    pub unregularized: ToyVariantReport,
}

/// Whether neither player gains more than [`NASH_TOL`] by moving within
/// `radius` of its current point inside `[−1, 1]`.
pub fn is_local_equilibrium(costs: &IntervalCosts, t1: f64, t2: f64, radius: f64) -> bool {
    let eval = |a: f64, b: f64| costs.evaluate(&DVector::from_element(1, a), &DVector::from_element(1, b));
    let (f1, f2) = eval(t1, t2);
    (0..=200).all(|i| {
        let d = radius * (i as f64 / 100.0 - 1.0);
        let a = (t1 + d).clamp(-1.0, 1.0);
        let b = (t2 + d).clamp(-1.0, 1.0);
        eval(a, t2).0 >= f1 - NASH_TOL && eval(t1, b).1 >= f2 - NASH_TOL
    })
}

fn toy_variant(config: &RunConfig, regularization: f64) -> Result<ToyVariantReport> {
    let e = &config.experiments;
    let game = LiftedGame::interval(regularization)?;
    let costs = IntervalCosts { regularization };
    let gp = GradientPlayConfig { steps: e.toy_steps, rates: [e.toy_rate; 2], tolerance: config.gradient_play.tolerance };
    let mut starts = vec![[0.5, 0.5]];
    let mut rng = stream(config.seed, tags::TOY, regularization.to_bits());
    starts.extend((1..e.toy_starts).map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]));
    let runs: Vec<ToyRun> = starts
        .iter()
        .map(|&start| -> Result<ToyRun> {
            let init = [
                ReferenceBundle::new(Player::Pursuer, vec![DVector::from_element(1, start[0])]),
                ReferenceBundle::new(Player::Evader, vec![DVector::from_element(1, start[1])]),
            ];
            let r = game.gradient_play(init, &[], &[], &gp)?;
            let limit = [r.solution.trajectory(Player::Pursuer, 0)[0], r.solution.trajectory(Player::Evader, 0)[0]];
            let corner = TOY_CORNERS
                .iter()
                .position(|c| (c[0] - limit[0]).hypot(c[1] - limit[1]) <= CORNER_TOL);
            Ok(ToyRun {
                start,
                limit,
                steps: r.trace.len(),
                stopped_early: r.converged,
                local_equilibrium: is_local_equilibrium(&costs, limit[0], limit[1], 0.05),
                corner,
            })
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&ToyRun) -> bool| runs.iter().filter(|r| f(r)).count();
    Ok(ToyVariantReport {
        regularization,
        stopped_early: count(&|r| r.stopped_early),
        at_equilibrium: count(&|r| r.local_equilibrium),
        corner_counts: [count(&|r| r.corner == Some(0)), count(&|r| r.corner == Some(1))],
        runs,
    })
}

pub fn exp_toy_interval(config: &RunConfig) -> Result<ToyReport> {
    Ok(ToyReport { regularized: toy_variant(config, 1.0)?, unregularized: toy_variant(config, 0.0)? })
}

// ---------------------------------------------------------------------------
// Dispatch and output

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum Report {
    SampledVsLearned(SampledVsLearnedReport),
    EquilibriumConvergence(ConvergenceReport),
    OpenLoopTournament(OpenLoopReport),
    RecedingHorizonTournament(RecedingReport),
    SelfPlay(SelfPlayTrace),
    ToyInterval(ToyReport),
}

pub fn run_experiment(config: &RunConfig, out: Option<&Path>) -> Result<Report> {
    Ok(match config.experiment.as_str() {
        "sampled_vs_learned" => Report::SampledVsLearned(exp_sampled_vs_learned(config)?),
        "equilibrium_convergence" => Report::EquilibriumConvergence(exp_equilibrium_convergence(config)?),
        "open_loop_tournament" => Report::OpenLoopTournament(exp_open_loop_tournament(config)?),
        "receding_horizon_tournament" => Report::RecedingHorizonTournament(exp_receding_horizon_tournament(config, out)?),
        "self_play" => Report::SelfPlay(exp_self_play(config)?),
        "toy_interval" => Report::ToyInterval(exp_toy_interval(config)?),
        other => anyhow::bail!("unknown experiment {other:?}"),
    })
}

fn fmt_summary(s: &Option<Summary>) -> String {
    match s {
        Some(Summary { mean, sem: Some(sem), .. }) => format!("{mean:.4} ± {sem:.4}"),
        Some(Summary { mean, sem: None, .. }) => format!("{mean:.4}"),
        None => "n/a".into(),
    }
}

fn grid_lines(title: &str, grid: &Option<TournamentGrid>, ordering: &Option<OrderingCheck>) -> Vec<String> {
    let Some(g) = grid else {
        return vec![format!("{title}: no trials")];
    };
    let mut lines = vec![format!("{title} (rows: pursuer, columns: evader)"), format!("{:>10} {:>20} {:>20}", "", "lifted", "pure")];
    for (i, kind) in KINDS.iter().enumerate() {
        lines.push(format!(
            "{:>10} {:>20} {:>20}",
            kind_label(*kind),
            fmt_summary(&g.cells[i][0].summary),
            fmt_summary(&g.cells[i][1].summary)
        ));
    }
    if let Some(o) = ordering {
        let g = o.gaps_in_sem.map(|x| format!("{x:.2}"));
        lines.push(format!(
            "  (P,L) > (L,L) > (L,P) > (P,P) by >= 1 SEM: {} (gaps in SEM: {})",
            if o.holds { "yes" } else { "no" },
            g.join(", ")
        ));
    }
    lines
}

impl Report {
    /// Human-readable summary table.
    pub fn summary_lines(&self) -> Vec<String> {
        match self {
            Report::SampledVsLearned(r) => {
                let mut lines = vec![format!("sampled vs learned ({} trials, {})", r.trials.len(), r.goal_distribution)];
                for (i, s) in r.baseline.iter().enumerate() {
                    lines.push(format!("  baseline n1={:<2} {}", i + 1, fmt_summary(&Some(*s))));
                }
                lines.push(format!("  learned (2)   {}", fmt_summary(&r.learned)));
                lines
            }
            Report::EquilibriumConvergence(r) => {
                let f = |t: &Option<TraceStats>| match t {
                    Some(t) => format!("{} (tail drift {:.2}%)", fmt_summary(&t.final_value), 100.0 * t.tail_drift),
                    None => "n/a".into(),
                };
                vec![
                    format!("equilibrium convergence ({} states)", r.runs.len()),
                    format!("  pure   {}", f(&r.pure)),
                    format!("  lifted {}", f(&r.lifted)),
                ]
            }
            Report::OpenLoopTournament(r) => grid_lines("open-loop tournament", &r.grid, &r.ordering),
            Report::RecedingHorizonTournament(r) => grid_lines("receding-horizon tournament", &r.grid, &r.ordering),
            Report::SelfPlay(t) => {
                let w = t.windows.last();
                vec![
                    format!("self-play ({} turns)", t.turns.len()),
                    format!("  final window value {}", w.map_or("n/a".into(), |w| fmt_summary(&Some(Summary { n: 0, mean: w.mean, sem: w.sem })))),
                    format!("  executed-state violations {}", t.closed_loop.violations),
                    format!("  mean forward pass {:.3} ms", t.mean_forward_ms()),
                ]
            }
            Report::ToyInterval(r) => {
                let v = |name: &str, x: &ToyVariantReport| {
                    format!(
                        "  {name}: {} runs, {} stopped early, {} at a local equilibrium, limits (-1,-1): {}, (1,1): {}, elsewhere: {}",
                        x.runs.len(),
                        x.stopped_early,
                        x.at_equilibrium,
                        x.corner_counts[0],
                        x.corner_counts[1],
                        x.runs.len() - x.corner_counts[0] - x.corner_counts[1]
                    )
                };
                let mut lines = vec!["interval game limit points".to_string(), v("regularized", &r.regularized), v("unregularized", &r.unregularized)];
                for (name, x) in [("regularized", &r.regularized), ("unregularized", &r.unregularized)] {
                    let pts: Vec<String> = x.runs.iter().take(5).map(|r| format!("({:.3}, {:.3})", r.limit[0], r.limit[1])).collect();
                    lines.push(format!("  {name} sample limits: {}", pts.join(" ")));
                }
                lines
            }
        }
    }

    /// Writes `summary.json` plus one CSV row per trial.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("summary.json"), self)?;
        let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
        match self {
            Report::SampledVsLearned(r) => {
                let mut header = vec!["trial".to_string(), "learned".into()];
                header.extend((1..=r.baseline.len()).map(|n| format!("baseline_{n}")));
                w.write_record(&header)?;
                for t in &r.trials {
                    let mut row = vec![t.trial.to_string(), t.learned.to_string()];
                    row.extend(t.baseline.iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
            Report::EquilibriumConvergence(r) => {
                w.write_record(["state", "pure_value", "lifted_value", "pure_converged", "lifted_converged"])?;
                for (k, [p, l]) in r.runs.iter().enumerate() {
                    w.write_record([k.to_string(), p.value.to_string(), l.value.to_string(), p.converged.to_string(), l.converged.to_string()])?;
                }
                let mut t = csv::Writer::from_path(dir.join("traces.csv"))?;
                t.write_record(["iteration", "pure_mean", "pure_sem", "lifted_mean", "lifted_sem"])?;
                if let (Some(p), Some(l)) = (&r.pure, &r.lifted) {
                    for k in 0..p.mean.len() {
                        t.write_record([k.to_string(), p.mean[k].to_string(), p.sem[k].to_string(), l.mean[k].to_string(), l.sem[k].to_string()])?;
                    }
                }
                t.flush()?;
            }
            Report::OpenLoopTournament(r) => {
                w.write_record(["state", "pursuer", "evader", "value"])?;
                for t in &r.trials {
                    for i in 0..2 {
                        for j in 0..2 {
                            w.write_record([t.state.to_string(), kind_label(KINDS[i]).into(), kind_label(KINDS[j]).into(), t.values[i][j].to_string()])?;
                        }
                    }
                }
            }
            Report::RecedingHorizonTournament(r) => {
                w.write_record(["state", "pursuer", "evader", "value", "steps", "violations", "mean_plan_ms"])?;
                for t in &r.trials {
                    w.write_record([
                        t.state.to_string(),
                        kind_label(t.pursuer).into(),
                        kind_label(t.evader).into(),
                        t.value.to_string(),
                        t.steps.to_string(),
                        t.violations.to_string(),
                        t.mean_plan_ms.to_string(),
                    ])?;
                }
            }
            Report::SelfPlay(s) => {
                w.write_record(["turn", "planned_value", "realized_value", "grad_norm_pursuer", "grad_norm_evader", "forward_ms", "window_mean", "window_sem"])?;
                for (t, win) in s.turns.iter().zip(&s.windows) {
                    w.write_record([
                        t.turn.to_string(),
                        t.planned_value.to_string(),
                        t.realized_value.to_string(),
                        t.grad_norms[0].to_string(),
                        t.grad_norms[1].to_string(),
                        t.forward_ms.to_string(),
                        win.mean.to_string(),
                        win.sem.map_or(String::new(), |s| s.to_string()),
                    ])?;
                }
            }
            Report::ToyInterval(r) => {
                w.write_record(["variant", "start_1", "start_2", "limit_1", "limit_2", "steps", "stopped_early", "local_equilibrium"])?;
                for (name, v) in [("regularized", &r.regularized), ("unregularized", &r.unregularized)] {
                    for run in &v.runs {
                        w.write_record([
                            name.to_string(),
                            run.start[0].to_string(),
                            run.start[1].to_string(),
                            run.limit[0].to_string(),
                            run.limit[1].to_string(),
                            run.steps.to_string(),
                            run.stopped_early.to_string(),
                            run.local_equilibrium.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_check_on_corners() {
        let reg = IntervalCosts { regularization: 1.0 };
        assert!(is_local_equilibrium(&reg, 1.0, 1.0, 0.05));
        assert!(is_local_equilibrium(&reg, -1.0, -1.0, 0.05));
        assert!(!is_local_equilibrium(&reg, 0.0, 0.0, 0.05));
        let zero_sum = IntervalCosts { regularization: 0.0 };
        // The evader gains by stepping away from a pursuer on top of it.
        assert!(!is_local_equilibrium(&zero_sum, 1.0, 1.0, 0.05));
    }

    #[test]
    fn streams_are_independent() {
        let a: u64 = stream(1, 2, 3).random();
        assert_eq!(a, stream(1, 2, 3).random::<u64>());
        assert_ne!(a, stream(1, 2, 4).random::<u64>());
        assert_ne!(a, stream(1, 3, 3).random::<u64>());
    }

    #[test]
    fn empty_tournament() {
        let mut c = RunConfig::default();
        c.experiments.open_loop_states = Some(0);
        let r = exp_open_loop_tournament(&c).unwrap();
        assert!(r.grid.is_none() && r.trials.is_empty());
    }
}
