//! `prism`: run the monitor-learning pipeline and its evaluation experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{parse_value, ConfigError, ExperimentConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "prism", version, about = "Learn and evaluate stoppability monitors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file (tables or dotted keys).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Environment: braking or cartpole.
    #[arg(long, global = true)]
    env: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Refinement iterations after the initial round.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Existing monitor checkpoint to evaluate instead of training one.
    #[arg(long, global = true)]
    monitor: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Print the resolved plan and exit without simulating or writing files.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Iterative refinement; writes per-iteration metrics and checkpoints.
    Run,
    /// Uniform-stride baseline against the iterative monitor on the oracle grid.
    Baseline,
    /// Agreement at each decision threshold.
    AlphaSweep,
    /// Zero-shot agreement under plant perturbations.
    DrAblation,
    /// Uniform-stride training at several strides.
    StrideAblation,
    /// Monte-Carlo reference labels over the state grid.
    Oracle,
    /// Monitor output along one nominal trajectory.
    Trace,
    /// Monitor values over a 2-D slice of state space.
    Grid,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Baseline => "baseline",
            Command::AlphaSweep => "alpha-sweep",
            Command::DrAblation => "dr-ablation",
            Command::StrideAblation => "stride-ablation",
            Command::Oracle => "oracle",
            Command::Trace => "trace",
            Command::Grid => "grid",
        }
    }
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        cfg.apply_toml(&text)?;
    }
    for pair in &cli.set {
        let (key, value) =
            pair.split_once('=').ok_or_else(|| ConfigError::Read(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        cfg.set(key.trim(), &parse_value(value.trim()))?;
    }
    use toml::Value;
    if let Some(env) = &cli.env {
        cfg.set("env", &Value::String(env.clone()))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(k) = cli.iters {
        cfg.prism.k_iters = k;
    }
    if let Some(b) = cli.beta {
        cfg.prism.beta = b;
    }
    if let Some(d) = cli.delta {
        cfg.prism.delta = d;
    }
    if let Some(a) = cli.alpha {
        cfg.prism.alpha = a;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(m) = &cli.monitor {
        cfg.eval.monitor = Some(m.clone());
    }
    cfg.finalize()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if cli.dry_run {
        print!("{}", commands::plan(cli.command, &cfg));
        return ExitCode::SUCCESS;
    }
    match commands::execute(cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
