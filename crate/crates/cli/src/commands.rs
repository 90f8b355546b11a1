use std::fs::File;
use std::io::{BufWriter, Write};

use pamlab::environment::sample_trajectory;
use pamlab::lattice::{green_function_origin, return_and_neighbor, GREEN_WRAP_BOUND};
use pamlab::lyapunov::{kappa_sweep, SWEEP_CSV_HEADER};
use pamlab::rng::{replica_stream, ENV_LABEL, WALK_LABEL};
use pamlab::solver::{solve_direct, solve_feynman_kac, SOLVE_CSV_HEADER};
use pamlab::stats::{correlation_empirical_grid, correlation_exact, e2_over_t_exact, noisiness_profile, CorrelationCheck};
use pamlab::{EnvKind, EnvTrajectory};

use crate::config::{Command, ExperimentConfig};
use crate::selfcheck;

#[derive(Debug)]
pub enum RunError {
    Simulation(pamlab::Error),
    Io(std::io::Error),
    /// Settings that contradict a loaded trajectory.
    Config(String),
    /// The self-check ran to completion but some checks failed.
    Failed(usize),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Simulation(e) => write!(f, "simulation failed: {e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Failed(n) => write!(f, "{n} self-check(s) failed"),
        }
    }
}

impl From<pamlab::Error> for RunError {
    fn from(e: pamlab::Error) -> Self {
        RunError::Simulation(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

pub const SOLVE_EXTRA_COLUMNS: &str = "ic,direct_u0,fk_mean,fk_std_error,fk_accepted,z_score,closed_form";
pub const CORRELATION_CSV_HEADER: &str = "check_name,kind,d,L,rho,x,t,n,empirical,std_error,exact,z_score";
pub const CONDITIONS_CSV_HEADER: &str =
    "check_name,kind,d,L,rho,T,n,e1,e1_se,e2,e2_se,e4bar,e4bar_se,e2_over_t,e2_over_t_exact,e4bar_over_t2";

/// Runs the configured command and writes its CSV (header comment, column
/// line, rows) to the output path or stdout.
pub fn run(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let (columns, rows, failed) = match cfg.command {
        Command::Sweep => (SWEEP_CSV_HEADER.to_string(), sweep(cfg)?, 0),
        Command::Solve => (format!("{SOLVE_CSV_HEADER},{SOLVE_EXTRA_COLUMNS}"), solve(cfg)?, 0),
        Command::Correlate => (CORRELATION_CSV_HEADER.to_string(), correlate(cfg)?, 0),
        Command::Conditions => (CONDITIONS_CSV_HEADER.to_string(), conditions(cfg)?, 0),
        Command::Selfcheck => {
            let checks = selfcheck::run_all(cfg);
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                eprintln!("{} {}/{}", if c.passed { "PASS" } else { "FAIL" }, c.suite, c.name);
            }
            let rows = checks.iter().map(selfcheck::Check::csv_row).collect();
            (selfcheck::CSV_HEADER.to_string(), rows, failed)
        }
    };
    let mut out: Box<dyn Write> = match &cfg.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    writeln!(out, "{}", cfg.header())?;
    writeln!(out, "{columns}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    if failed > 0 {
        return Err(RunError::Failed(failed));
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    let result = kappa_sweep(
        cfg.kind,
        &cfg.params,
        cfg.torus,
        &cfg.kappa_grid,
        cfg.t_end,
        &cfg.p_list,
        cfg.n_env,
        cfg.master_seed,
    )?;
    Ok(result.csv_rows())
}

fn solve(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    let traj = match &cfg.load_traj {
        Some(path) => EnvTrajectory::read_from(std::io::BufReader::new(File::open(path)?))?,
        None => {
            let mut rng = replica_stream(cfg.master_seed, ENV_LABEL, 0);
            sample_trajectory(cfg.kind, cfg.torus, cfg.params.rho, cfg.t_end, &mut rng)?
        }
    };
    if traj.kind() != cfg.kind || traj.torus() != cfg.torus {
        return Err(RunError::Config(format!(
            "loaded trajectory is {} d={} L={}, settings say {} d={} L={}",
            traj.kind(),
            traj.torus().dim(),
            traj.torus().side(),
            cfg.kind,
            cfg.torus.dim(),
            cfg.torus.side()
        )));
    }
    if let Some(path) = &cfg.save_traj {
        traj.write_to(BufWriter::new(File::create(path)?))?;
    }
    let report = solve_direct(&traj, &cfg.params, cfg.ic, cfg.t_end)?;
    let walks = replica_stream(cfg.master_seed, WALK_LABEL, 0);
    let fk = solve_feynman_kac(&traj, &cfg.params, cfg.ic, cfg.t_end, cfg.n_paths, &walks)?;
    let direct_u0 = report.log_u0.exp();
    let closed_form = match traj.kind() {
        EnvKind::Constant(c) => {
            let spread = match cfg.ic {
                pamlab::InitialCondition::DeltaAtOrigin => {
                    return_and_neighbor(traj.torus(), cfg.params.kappa, cfg.t_end).0
                }
                pamlab::InitialCondition::FlatOne => 1.0,
            };
            (cfg.params.gamma * c * cfg.t_end).exp() * spread
        }
        _ => f64::NAN,
    };
    Ok(vec![format!(
        "{},{},{},{},{},{},{},{}",
        report.csv_row(cfg.master_seed, &traj, &cfg.params, cfg.t_end),
        cfg.ic.name(),
        direct_u0,
        fk.estimate.mean,
        fk.estimate.std_error,
        fk.accepted,
        fk.estimate.z_score(direct_u0),
        closed_form
    )])
}

fn correlate(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    let torus = cfg.torus;
    let rho = cfg.params.rho;
    let points: Vec<(usize, f64)> = [torus.origin(), torus.unit(0)]
        .into_iter()
        .flat_map(|x| cfg.times.iter().map(move |&t| (x, t)))
        .collect();
    let estimates = correlation_empirical_grid(cfg.kind, &points, rho, torus, cfg.n_env, cfg.master_seed)?;
    let green = match cfg.kind {
        EnvKind::Svm if torus.dim() >= 3 => {
            let t_cut = (GREEN_WRAP_BOUND * torus.sites() as f64).min(2000.0);
            green_function_origin(torus, t_cut).ok()
        }
        _ => None,
    };
    points
        .iter()
        .zip(estimates)
        .map(|(&(x, t), est)| {
            let exact = correlation_exact(cfg.kind, x, t, rho, torus, green.as_ref()).unwrap_or(f64::NAN);
            let check = CorrelationCheck::new(cfg.kind, x, t, est, exact);
            Ok(format!(
                "correlation,{},{},{},{},{},{},{},{},{},{},{}",
                cfg.kind,
                torus.dim(),
                torus.side(),
                rho,
                check.x,
                check.t,
                est.n,
                est.mean,
                est.std_error,
                check.exact,
                check.z_score
            ))
        })
        .collect()
}

fn conditions(cfg: &ExperimentConfig) -> Result<Vec<String>, RunError> {
    let torus = cfg.torus;
    let rho = cfg.params.rho;
    let profile = noisiness_profile(cfg.kind, rho, torus, &cfg.horizons, cfg.n_env, cfg.master_seed)?;
    Ok(profile
        .iter()
        .map(|p| {
            let exact = e2_over_t_exact(cfg.kind, rho, torus, p.t).unwrap_or(f64::NAN);
            format!(
                "noisiness,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                cfg.kind,
                torus.dim(),
                torus.side(),
                rho,
                p.t,
                p.e1.n,
                p.e1.mean,
                p.e1.std_error,
                p.e2.mean,
                p.e2.std_error,
                p.e4_bar.mean,
                p.e4_bar.std_error,
                p.e2.mean / p.t,
                exact,
                p.e4_bar.mean / (p.t * p.t)
            )
        })
        .collect())
}
