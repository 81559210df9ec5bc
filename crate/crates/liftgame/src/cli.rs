//! `liftgame` command line.
//!
//! Exit codes: 0 success, 1 run failure, 2 invalid arguments, config or input file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use liftgame_core::bimatrix::{bmg, verify_equilibrium};
use liftgame_core::generator::GeneratorParams;
use liftgame_core::lifted_game::{LiftedGame, Player};
use liftgame_core::tag_env::{STATE_DIM, TagEnvSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{load_config_file, parse_assignment, Preset, RunConfig};
use crate::experiments::{initial_state, mpgp_simulate, run_experiment, GeneratorPolicy, Policy};
use crate::io::{load_checkpoint, parse_bimatrix, write_json, SolutionDump};
use crate::training::train_offline;

#[derive(Debug, Parser)]
#[command(name = "liftgame", version, about = "Lifted trajectory games: experiments, training and tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its results.
    Run(ConfigArgs),
    /// Train a generator pair offline.
    Train(ConfigArgs),
    /// Receding-horizon episode between two trained generator pairs.
    Play(PlayArgs),
    /// Solve a bimatrix game read from a file.
    SolveBimatrix {
        file: PathBuf,
    },
    /// Write the lifted solution at one initial state as JSON.
    DumpTrajectories(DumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub experiment: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Cap on worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `--set env.horizon=10`.
    #[arg(long = "set", value_parser = parse_assignment)]
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone, Args)]
pub struct PlayArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Pursuer checkpoint. The file beside it with `evader` in place of
    /// `pursuer` in the name is the pursuer's model of its opponent.
    #[arg(long)]
    pub pursuer: PathBuf,
    /// Evader checkpoint, paired the same way.
    #[arg(long)]
    pub evader: PathBuf,
    /// Replanning instants; defaults to `experiments.receding_updates`.
    #[arg(long)]
    pub turns: Option<usize>,
    /// Index of the sampled initial state.
    #[arg(long, default_value_t = 0)]
    pub state: usize,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    pub state: usize,
    /// Generator checkpoints to plan with instead of gradient play.
    #[arg(long, requires = "evader")]
    pub pursuer: Option<PathBuf>,
    #[arg(long, requires = "pursuer")]
    pub evader: Option<PathBuf>,
}

/// Failure split by exit code.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Run(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

trait InputContext<T> {
    fn input(self) -> Result<T, CliError>;
    fn run(self) -> Result<T, CliError>;
}

impl<T> InputContext<T> for Result<T> {
    fn input(self) -> Result<T, CliError> {
        self.map_err(CliError::Input)
    }

    fn run(self) -> Result<T, CliError> {
        self.map_err(CliError::Run)
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LIFTGAME_LOG", "warn")).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let (CliError::Input(err) | CliError::Run(err)) = &e;
            eprintln!("error: {err:#}");
            e.code()
        }
    }
}

/// Loads the config and applies command-line flags on top of `--set` paths.
pub fn resolve_config(args: &ConfigArgs) -> Result<(RunConfig, String)> {
    let mut overrides = args.overrides.clone();
    let mut push = |k: &str, v: String| overrides.push((k.to_string(), v));
    if let Some(e) = &args.experiment {
        push("experiment", serde_json::to_string(e)?);
    }
    if let Some(s) = args.seed {
        push("seed", s.to_string());
    }
    if let Some(p) = args.preset {
        push("preset", serde_json::to_string(&p)?);
    }
    if let Some(t) = args.threads {
        push("threads", t.to_string());
    }
    if let Some(d) = &args.output_dir {
        push("output_dir", serde_json::to_string(d)?);
    }
    load_config_file(args.config.as_deref(), &overrides)
}

fn init_threads(config: &RunConfig) {
    if let Some(n) = config.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Creates the output directory and records the configuration: the input file
/// verbatim, plus the resolved document with all flags applied.
fn prepare_output(config: &RunConfig, raw: &str) -> Result<PathBuf> {
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    if !raw.is_empty() {
        std::fs::write(dir.join("config.input.json"), raw)?;
    }
    write_json(&dir.join("config.json"), config)?;
    Ok(dir)
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let (config, raw) = resolve_config(&args).input()?;
            init_threads(&config);
            let dir = prepare_output(&config, &raw).input()?;
            log::info!("running {} (seed {}, preset {:?})", config.experiment, config.seed, config.preset);
            let report = run_experiment(&config, Some(&dir))
                .with_context(|| format!("experiment {}", config.experiment))
                .run()?;
            report.write(&dir).run()?;
            for line in report.summary_lines() {
                println!("{line}");
            }
            println!("results written to {}", dir.display());
            Ok(())
        }
        Command::Train(args) => {
            let (config, raw) = resolve_config(&args).input()?;
            init_threads(&config);
            let dir = prepare_output(&config, &raw).input()?;
            let tc = crate::training::TrainConfig { seed: config.train.seed ^ config.seed, ..config.train.clone() };
            let out = train_offline(&tc, &config.env, Some(&dir)).map_err(anyhow::Error::from).run()?;
            if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
                println!("iterations {}: mean L1 {:.4} -> {:.4}", out.trace.len(), first.mean_l1, last.mean_l1);
            }
            println!("skipped samples {}", out.skipped_samples);
            println!("checkpoints written to {}", dir.display());
            Ok(())
        }
        Command::Play(args) => play(&args),
        Command::SolveBimatrix { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display())).input()?;
            let pair = parse_bimatrix(&text).with_context(|| format!("parsing {}", file.display())).input()?;
            let sol = bmg(&pair).map_err(anyhow::Error::from).run()?;
            let (ok, residual) = verify_equilibrium(&pair, &sol.q1, &sol.q2, 1e-9);
            let (c1, c2) = pair.expected_costs(&sol.q1, &sol.q2);
            let fmt = |v: &liftgame_core::DVector<f64>| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
            println!("player 1 strategy: {}", fmt(&sol.q1));
            println!("player 2 strategy: {}", fmt(&sol.q2));
            println!("expected costs: {c1:.6} {c2:.6}");
            println!("verification residual: {residual:.3e} ({})", if ok { "equilibrium" } else { "NOT an equilibrium" });
            if ok {
                Ok(())
            } else {
                Err(CliError::Run(anyhow::anyhow!("solution failed verification")))
            }
        }
        Command::DumpTrajectories(args) => dump(&args),
    }
}

fn load_generator(path: &Path, env: &TagEnvSpec, role: Player) -> Result<GeneratorParams> {
    let (theta, _) = load_checkpoint(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let s = &theta.shape;
    anyhow::ensure!(
        s.input_dim() == 2 * STATE_DIM && s.reference_dim == env.control_reference_dim(),
        "checkpoint {} does not fit a tag game with horizon {}",
        path.display(),
        env.horizon
    );
    anyhow::ensure!(s.player == role, "checkpoint {} belongs to the {}", path.display(), s.player);
    Ok(theta)
}

/// The other side's generator sits next to `path` with the role swapped in
/// its file name, e.g. `pursuer.json` beside `evader.json`.
fn load_pair(path: &Path, env: &TagEnvSpec, owner: Player) -> Result<[GeneratorParams; 2]> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let (own, other) = (owner.to_string(), owner.other().to_string());
    anyhow::ensure!(name.contains(&own), "checkpoint name {name:?} must contain {own:?}");
    let sibling = path.with_file_name(name.replacen(&own, &other, 1));
    let mine = load_generator(path, env, owner)?;
    let theirs = load_generator(&sibling, env, owner.other())?;
    Ok(match owner {
        Player::Pursuer => [mine, theirs],
        Player::Evader => [theirs, mine],
    })
}

fn play(args: &PlayArgs) -> Result<(), CliError> {
    let (config, raw) = resolve_config(&args.config).input()?;
    init_threads(&config);
    let env = &config.env;
    let game = LiftedGame::tag(env).map_err(anyhow::Error::from).input()?;
    // Each side runs its own pair of generators; the pursuer's pair comes
    // from the directory of `--pursuer`, the evader's from that of `--evader`.
    let p_theta = load_pair(&args.pursuer, env, Player::Pursuer).input()?;
    let e_theta = load_pair(&args.evader, env, Player::Evader).input()?;
    let dir = prepare_output(&config, &raw).input()?;
    let mut p = GeneratorPolicy { game: game.clone(), theta: p_theta, label: args.pursuer.display().to_string() };
    let mut e = GeneratorPolicy { game, theta: e_theta, label: args.evader.display().to_string() };
    let (x1, x2) = initial_state(env, config.seed, args.state);
    let turns = args.turns.unwrap_or(config.experiments.receding_updates);
    let seeds = [config.seed.wrapping_mul(2), config.seed.wrapping_mul(2) + 1];
    let ep = mpgp_simulate(&mut p, &mut e, x1, x2, turns, config.experiments.replan_interval, env, seeds).run()?;
    write_json(&dir.join("episode.json"), &ep).run()?;
    println!("{} vs {}: value {:.4} over {} steps", p.label(), e.label(), ep.value, ep.closed_loop.len());
    println!("executed-state violations {}", ep.closed_loop.violations);
    println!("mean forward-pass latency per plan {:.3} ms", ep.mean_plan_ms());
    Ok(())
}

fn dump(args: &DumpArgs) -> Result<(), CliError> {
    let (config, raw) = resolve_config(&args.config).input()?;
    init_threads(&config);
    let env = &config.env;
    let game = LiftedGame::tag(env).map_err(anyhow::Error::from).input()?;
    let (x1, x2) = initial_state(env, config.seed, args.state);
    let sol = match (&args.pursuer, &args.evader) {
        (Some(p), Some(e)) => {
            let theta = [load_generator(p, env, Player::Pursuer).input()?, load_generator(e, env, Player::Evader).input()?];
            let mut policy = GeneratorPolicy { game, theta, label: "generators".into() };
            policy.plan(&x1, &x2).map_err(anyhow::Error::from).run()?
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            game.gradient_play_references(&x1.to_array(), &x2.to_array(), config.solver.counts(), &config.gradient_play, &mut rng)
                .map_err(anyhow::Error::from)
                .run()?
                .solution
        }
    };
    let dir = prepare_output(&config, &raw).input()?;
    let path = dir.join("trajectories.json");
    write_json(&path, &serde_json::json!({
        "initial_state": [x1, x2],
        "solution": SolutionDump::new(&sol, Some(env)),
    }))
    .run()?;
    println!("wrote {}", path.display());
    Ok(())
}
