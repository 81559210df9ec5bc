//! Run configuration: one JSON document, with dotted-path overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use liftgame_core::lifted_game::GradientPlayConfig;
use liftgame_core::tag_env::TagEnvSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::training::TrainConfig;

pub const EXPERIMENTS: [&str; 6] = [
    "sampled_vs_learned",
    "equilibrium_convergence",
    "open_loop_tournament",
    "receding_horizon_tournament",
    "self_play",
    "toy_interval",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Paper,
    Ci,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Pure,
    #[default]
    Lifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverModeConfig {
    pub kind: StrategyKind,
    /// Candidate counts used by the lifted solver.
    pub candidates: [usize; 2],
}

impl Default for SolverModeConfig {
    fn default() -> Self {
        Self { kind: StrategyKind::Lifted, candidates: [2, 2] }
    }
}

impl SolverModeConfig {
    pub fn counts(&self) -> [usize; 2] {
        match self.kind {
            StrategyKind::Pure => [1, 1],
            StrategyKind::Lifted => self.candidates,
        }
    }
}

/// Trial counts and experiment knobs. Unset counts come from the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sampled_vs_learned_trials: Option<usize>,
    pub convergence_states: Option<usize>,
    pub open_loop_states: Option<usize>,
    pub receding_states: Option<usize>,
    pub self_play_turns: Option<usize>,
    /// Largest baseline pursuer bundle in the sampled-vs-learned study.
    pub max_sampled: usize,
    pub evader_goals: usize,
    pub learned_candidates: usize,
    /// Control regularization of the goal-reference problems.
    pub goal_control_weight: f64,
    pub goal_rate: f64,
    pub receding_updates: usize,
    pub replan_interval: usize,
    pub toy_starts: usize,
    pub toy_steps: usize,
    pub toy_rate: f64,
    /// Window of the self-play moving statistics.
    pub self_play_window: usize,
    /// Online learning rates; one step per turn from untrained generators.
    pub self_play_rates: [f64; 2],
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sampled_vs_learned_trials: None,
            convergence_states: None,
            open_loop_states: None,
            receding_states: None,
            self_play_turns: None,
            max_sampled: 20,
            evader_goals: 20,
            learned_candidates: 2,
            goal_control_weight: 0.1,
            goal_rate: 1.0,
            receding_updates: 500,
            replan_interval: 9,
            toy_starts: 100,
            toy_steps: 2000,
            toy_rate: 0.05,
            self_play_window: 500,
            self_play_rates: [1e-2, 1e-2],
        }
    }
}

/// Trial counts after applying the preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialCounts {
    pub sampled_vs_learned: usize,
    pub convergence: usize,
    pub open_loop: usize,
    pub receding: usize,
    pub self_play_turns: usize,
}

impl TrialCounts {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self { sampled_vs_learned: 50, convergence: 20, open_loop: 100, receding: 5, self_play_turns: 2500 },
            Preset::Ci => Self { sampled_vs_learned: 10, convergence: 5, open_loop: 20, receding: 2, self_play_turns: 500 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub preset: Preset,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker cap; `None` uses every core.
    pub threads: Option<usize>,
    pub env: TagEnvSpec,
    pub solver: SolverModeConfig,
    pub gradient_play: GradientPlayConfig,
    pub train: TrainConfig,
    pub experiments: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "toy_interval".into(),
            preset: Preset::Paper,
            seed: 0,
            output_dir: PathBuf::from("results"),
            threads: None,
            env: TagEnvSpec::default(),
            solver: SolverModeConfig::default(),
            gradient_play: default_gradient_play(),
            train: default_train(),
            experiments: ExperimentConfig::default(),
        }
    }
}

/// Gradient play on control references.
pub fn default_gradient_play() -> GradientPlayConfig {
    GradientPlayConfig { steps: 400, rates: [2.0, 2.0], tolerance: 1e-6 }
}

/// Offline training for the experiments. The library default rate of 1e-2
/// barely moves the generators within a few hundred iterations.
pub fn default_train() -> TrainConfig {
    TrainConfig { rates: [1.0, 1.0], iterations: 300, ..TrainConfig::default() }
}

impl RunConfig {
    pub fn counts(&self) -> TrialCounts {
        let base = TrialCounts::preset(self.preset);
        let e = &self.experiments;
        TrialCounts {
            sampled_vs_learned: e.sampled_vs_learned_trials.unwrap_or(base.sampled_vs_learned),
            convergence: e.convergence_states.unwrap_or(base.convergence),
            open_loop: e.open_loop_states.unwrap_or(base.open_loop),
            receding: e.receding_states.unwrap_or(base.receding),
            self_play_turns: e.self_play_turns.unwrap_or(base.self_play_turns),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !EXPERIMENTS.contains(&self.experiment.as_str()) {
            bail!("unknown experiment {:?}; expected one of {}", self.experiment, EXPERIMENTS.join(", "));
        }
        self.env.validate().context("env")?;
        if self.env.horizon < 2 {
            bail!("env.horizon must be at least 2");
        }
        let gp = &self.gradient_play;
        if gp.steps == 0 || gp.rates.iter().any(|r| !(*r > 0.0)) {
            bail!("gradient_play needs steps ≥ 1 and positive rates");
        }
        if self.solver.candidates.contains(&0) {
            bail!("solver.candidates must be positive");
        }
        self.train.validate().context("train")?;
        let e = &self.experiments;
        if e.replan_interval == 0 || e.replan_interval > self.env.horizon {
            bail!("experiments.replan_interval must lie in 1..=env.horizon");
        }
        if e.max_sampled == 0 || e.evader_goals == 0 || e.learned_candidates == 0 {
            bail!("experiment candidate counts must be positive");
        }
        if !(e.goal_rate > 0.0 && e.toy_rate > 0.0 && e.goal_control_weight > 0.0) {
            bail!("experiment rates and weights must be positive");
        }
        if e.self_play_rates.iter().any(|r| !(*r >= 0.0)) {
            bail!("experiments.self_play_rates must be nonnegative");
        }
        if e.self_play_window == 0 {
            bail!("experiments.self_play_window must be positive");
        }
        Ok(())
    }
}

/// Parses a configuration, applies `path=value` overrides, and validates.
/// An empty text yields the defaults.
pub fn load_config(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value: Value = if text.trim().is_empty() {
        Value::Object(Default::default())
    } else {
        serde_json::from_str(text).map_err(|e| anyhow::anyhow!("line {}, column {}: {e}", e.line(), e.column()))?
    };
    for (path, raw) in overrides {
        set_path(&mut value, path, parse_override(raw))?;
    }
    let config: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
    config.validate()?;
    Ok(config)
}

pub fn load_config_file(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(RunConfig, String)> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let config = load_config(&text, overrides).with_context(|| match path {
        Some(p) => format!("config {}", p.display()),
        None => "default config".into(),
    })?;
    Ok((config, text))
}

/// JSON if it parses, a string otherwise.
fn parse_override(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("bad override path {path:?}");
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            bail!("override {path:?}: {} is not an object", keys[..i].join("."));
        };
        if i + 1 == keys.len() {
            map.insert((*key).to_string(), new);
            return Ok(());
        }
        node = map.entry((*key).to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

/// Splits `a.b=value`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected PATH=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = load_config("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(load_config(&text, &[]).unwrap(), c);
    }

    #[test]
    fn dotted_overrides() {
        let o = vec![
            ("seed".to_string(), "7".to_string()),
            ("env.horizon".to_string(), "10".to_string()),
            ("experiment".to_string(), "self_play".to_string()),
            ("gradient_play.rates".to_string(), "[0.5, 0.25]".to_string()),
        ];
        let c = load_config("{\"preset\": \"ci\"}", &o).unwrap();
        assert_eq!((c.seed, c.env.horizon, c.experiment.as_str()), (7, 10, "self_play"));
        assert_eq!(c.gradient_play.rates, [0.5, 0.25]);
        assert_eq!(c.counts().open_loop, 20);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(load_config("{\"experiment\": \"nope\"}", &[]).is_err());
        assert!(load_config("{\"sed\": 1}", &[]).is_err());
        let err = load_config("{\n  \"seed\": ,\n}", &[]).unwrap_err();
        assert!(format!("{err}").starts_with("line 2"), "{err}");
        assert!(load_config("", &[("seed.x".into(), "1".into())]).is_err());
        assert!(load_config("", &[("env.v_max".into(), "-1".into())]).is_err());
    }
}
