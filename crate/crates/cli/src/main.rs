//! `pamlab`: batch experiments for the parabolic Anderson model.
//!
//! Exit codes: 0 success, 1 configuration error, 2 simulation or i/o
//! failure, 3 self-check failure.

mod commands;
mod config;
mod selfcheck;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::RunError;
use config::{Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pamlab", version, about = "Parabolic Anderson model experiments on the discrete torus")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Quenched (and annealed) Lyapunov exponents along a kappa grid
    Sweep(RunArgs),
    /// One trajectory, direct and Feynman-Kac solutions side by side
    Solve(RunArgs),
    /// Empirical two-point correlations against the exact formulas
    Correlate(RunArgs),
    /// Noisiness functionals E1, E2 and E4-bar over a grid of horizons
    Conditions(RunArgs),
    /// Built-in oracle suite; exits 3 if any check fails
    Selfcheck(RunArgs),
}

/// Every setting can also come from `--config`; flags win.
#[derive(Args)]
struct RunArgs {
    /// Plain-text `key = value` file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    workers: Option<usize>,
    /// isrw, sep, svm or constant:<c>
    #[arg(long)]
    kind: Option<String>,
    #[arg(long = "d")]
    d: Option<String>,
    /// Torus side length
    #[arg(long = "L")]
    side: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
    /// Comma-separated, ascending
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    t_end: Option<String>,
    #[arg(long)]
    n_env: Option<String>,
    #[arg(long)]
    n_paths: Option<String>,
    /// Annealed moments to add to a sweep, e.g. `1,2`
    #[arg(long)]
    p_list: Option<String>,
    /// delta or flat
    #[arg(long)]
    ic: Option<String>,
    /// Correlation times
    #[arg(long)]
    times: Option<String>,
    /// Noisiness horizons
    #[arg(long)]
    horizons: Option<String>,
    #[arg(long, visible_alias = "seed")]
    master_seed: Option<String>,
    /// CSV destination; `-` or absent for stdout
    #[arg(long, short)]
    output: Option<String>,
    /// Write the sampled trajectory here (solve)
    #[arg(long)]
    save_traj: Option<String>,
    /// Solve on a saved trajectory instead of sampling one
    #[arg(long)]
    load_traj: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        [
            ("kind", &self.kind),
            ("d", &self.d),
            ("L", &self.side),
            ("kappa", &self.kappa),
            ("kappa_grid", &self.kappa_grid),
            ("gamma", &self.gamma),
            ("rho", &self.rho),
            ("t_end", &self.t_end),
            ("n_env", &self.n_env),
            ("n_paths", &self.n_paths),
            ("p_list", &self.p_list),
            ("ic", &self.ic),
            ("times", &self.times),
            ("horizons", &self.horizons),
            ("master_seed", &self.master_seed),
            ("output", &self.output),
            ("save_traj", &self.save_traj),
            ("load_traj", &self.load_traj),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (command, args) = match &cli.command {
        Sub::Sweep(a) => (Command::Sweep, a),
        Sub::Solve(a) => (Command::Solve, a),
        Sub::Correlate(a) => (Command::Correlate, a),
        Sub::Conditions(a) => (Command::Conditions, a),
        Sub::Selfcheck(a) => (Command::Selfcheck, a),
    };
    let cfg = match ExperimentConfig::resolve(command, args.config.as_deref(), &args.overrides()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("pamlab: configuration error: {e}");
            return ExitCode::from(1);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        if n == 0 {
            eprintln!("pamlab: configuration error: --workers must be positive");
            return ExitCode::from(1);
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pamlab: cannot start workers: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| commands::run(&cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ RunError::Failed(_)) => {
            eprintln!("pamlab: {e}");
            ExitCode::from(3)
        }
        Err(e @ RunError::Config(_)) => {
            eprintln!("pamlab: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("pamlab: {e}");
            ExitCode::from(2)
        }
    }
}
