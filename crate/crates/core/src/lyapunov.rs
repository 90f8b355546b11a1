//! Quenched and annealed growth rates of `u(0, t)` from replica environments.
//!
//! Every estimate is the finite-`t` value at the largest simulated time, with
//! the earlier checkpoints attached; no asymptote is fitted. Replica `i` always
//! sees the environment drawn from stream `i` of the master seed, so runs at
//! different `κ` (or with different `p`) share their environments.

use rayon::prelude::*;

use crate::environment::{sample_trajectory, EnvKind};
use crate::error::{invalid, Error, Result};
use crate::lattice::{return_and_neighbor, Params, Torus};
use crate::rng::{replica_stream, seed_for, RngStream, ENV_LABEL, RESAMPLE_LABEL};
use crate::solver::{solve_window, InitialCondition, STEP_SAFETY};
use crate::stats::{bootstrap_std_error, Moments};

pub const MIN_QUENCHED_T: f64 = 10.0;
pub const MIN_QUENCHED_ENV: usize = 4;
pub const MIN_ANNEALED_ENV: usize = 100;
pub const MAX_ANNEALED_P: u32 = 2;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Largest single-replica share of the empirical moment before an annealed
/// estimate is flagged as heavy-tailed.
pub const HEAVY_TAIL_SHARE: f64 = 0.5;

/// `{t/8, t/4, t/2, t}`
pub fn default_checkpoints(t_end: f64) -> Vec<f64> {
    vec![t_end / 8.0, t_end / 4.0, t_end / 2.0, t_end]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LyapunovPoint {
    pub t: f64,
    /// `Λ_p(t)`
    pub lambda: f64,
    pub std_error: f64,
    /// `γρ + (1/t) log p_t^κ(0)`: the mean of the Jensen lower bound for the
    /// delta start, and the value of `Λ_p(t)` in a constant environment `ρ`.
    pub floor: f64,
    /// Largest single-replica share of the empirical moment (0 for `p = 0`).
    pub max_share: f64,
}

impl LyapunovPoint {
    pub fn heavy_tailed(&self) -> bool {
        self.max_share > HEAVY_TAIL_SHARE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovEstimate {
    /// 0 for the quenched exponent.
    pub p: u32,
    pub value: f64,
    pub std_error: f64,
    pub t_grid: Vec<LyapunovPoint>,
    pub replicas: usize,
    pub failures: usize,
    /// Raised when one replica carries more than half the moment at the
    /// final checkpoint.
    pub heavy_tail: bool,
}

/// `log u(0, t)` per replica at each checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct LogGrowth {
    pub params: Params,
    pub checkpoints: Vec<f64>,
    /// `log_u[i][k]` for replica `i` and checkpoint `k`.
    pub log_u: Vec<Vec<f64>>,
    pub failures: usize,
}

fn validate_checkpoints(checkpoints: &[f64]) -> Result<()> {
    if checkpoints.is_empty()
        || !(checkpoints[0] > 0.0)
        || checkpoints.windows(2).any(|w| w[1] <= w[0])
        || !checkpoints.iter().all(|t| t.is_finite())
    {
        return Err(invalid("checkpoints", "must be positive, finite and strictly increasing"));
    }
    Ok(())
}

/// Solves every replica environment once per `κ` in `kappas`. Replicas run in
/// parallel; results are in replica order regardless of scheduling.
pub fn sample_log_growth(
    kind: EnvKind,
    params: &Params,
    torus: Torus,
    kappas: &[f64],
    checkpoints: &[f64],
    n_env: usize,
    seed: u64,
    ic: InitialCondition,
) -> Result<Vec<Result<LogGrowth>>> {
    validate_checkpoints(checkpoints)?;
    kind.validate_rho(params.rho)?;
    let t_end = *checkpoints.last().expect("nonempty");
    kind.check_horizon(torus, t_end)?;
    if n_env == 0 {
        return Err(invalid("n_env", "must be positive"));
    }
    let per_kappa: Vec<Params> = kappas
        .iter()
        .map(|&k| params.with_kappa(k))
        .collect::<Result<_>>()?;

    let runs: Vec<Vec<Result<Vec<f64>>>> = (0..n_env)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_stream(seed, ENV_LABEL, i as u64);
            match sample_trajectory(kind, torus, params.rho, t_end, &mut rng) {
                Ok(traj) => per_kappa
                    .iter()
                    .map(|p| {
                        let r = solve_window(&traj, p, ic, 0.0, t_end, checkpoints, STEP_SAFETY)?;
                        Ok(r.checkpoints.into_iter().map(|(_, l)| l).collect())
                    })
                    .collect(),
                Err(e) => {
                    let msg = e.to_string();
                    per_kappa
                        .iter()
                        .map(|_| Err(Error::Unsupported(msg.clone())))
                        .collect()
                }
            }
        })
        .collect();

    let mut columns: Vec<Vec<Result<Vec<f64>>>> = per_kappa.iter().map(|_| Vec::with_capacity(n_env)).collect();
    for row in runs {
        for (j, r) in row.into_iter().enumerate() {
            columns[j].push(r);
        }
    }
    Ok(columns
        .into_iter()
        .zip(per_kappa)
        .map(|(col, p)| {
            let total = col.len();
            let mut log_u = Vec::with_capacity(total);
            let mut first = None;
            for r in col {
                match r {
                    Ok(v) => log_u.push(v),
                    Err(e) => {
                        first.get_or_insert(e);
                    }
                }
            }
            let failed = total - log_u.len();
            if 2 * failed > total {
                return Err(Error::TooManyFailures {
                    failed,
                    total,
                    first: Box::new(first.expect("at least one failure")),
                });
            }
            Ok(LogGrowth {
                params: p,
                checkpoints: checkpoints.to_vec(),
                log_u,
                failures: failed,
            })
        })
        .collect())
}

fn floor(params: &Params, torus: Torus, ic: InitialCondition, t: f64) -> f64 {
    let spread = match ic {
        InitialCondition::DeltaAtOrigin => return_and_neighbor(torus, params.kappa, t).0.ln() / t,
        InitialCondition::FlatOne => 0.0,
    };
    params.gamma * params.rho + spread
}

/// `(1/(pt)) log( mean_i exp(p a_i) )` and the largest share, by log-sum-exp.
fn annealed_point(log_u: &[f64], p: u32, t: f64) -> (f64, f64) {
    let scaled: Vec<f64> = log_u.iter().map(|&a| p as f64 * a).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scaled.iter().map(|&a| (a - max).exp()).sum();
    let log_mean = max + sum.ln() - (log_u.len() as f64).ln();
    (log_mean / (p as f64 * t), 1.0 / sum)
}

/// Turns replica growth into `Λ_p` at each checkpoint. `p = 0` is the
/// quenched mean of `(1/t) log u`; `p >= 1` the annealed moment rate with a
/// bootstrap standard error.
pub fn estimate_from_growth(
    growth: &LogGrowth,
    torus: Torus,
    ic: InitialCondition,
    p: u32,
    seed: u64,
) -> Result<LyapunovEstimate> {
    let n = growth.log_u.len();
    if n == 0 {
        return Err(Error::Degenerate { n: 0 });
    }
    let t_grid: Vec<LyapunovPoint> = growth
        .checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let column: Vec<f64> = growth.log_u.iter().map(|r| r[k]).collect();
            let fl = floor(&growth.params, torus, ic, t);
            if p == 0 {
                let mut m = Moments::default();
                column.iter().for_each(|&a| m.push(a / t));
                let e = m.estimate();
                LyapunovPoint {
                    t,
                    lambda: e.mean,
                    std_error: e.std_error,
                    floor: fl,
                    max_share: 0.0,
                }
            } else {
                let (lambda, max_share) = annealed_point(&column, p, t);
                let mut rng = RngStream::new(seed_for(seed, RESAMPLE_LABEL), p as u64).derive(k as u64);
                let std_error =
                    bootstrap_std_error(&column, BOOTSTRAP_RESAMPLES, &mut rng, |s| annealed_point(s, p, t).0);
                LyapunovPoint {
                    t,
                    lambda,
                    std_error,
                    floor: fl,
                    max_share,
                }
            }
        })
        .collect();
    let last = *t_grid.last().expect("checkpoints are nonempty");
    Ok(LyapunovEstimate {
        p,
        value: last.lambda,
        std_error: last.std_error,
        heavy_tail: last.heavy_tailed(),
        t_grid,
        replicas: n,
        failures: growth.failures,
    })
}

fn single(
    kind: EnvKind,
    params: &Params,
    torus: Torus,
    checkpoints: &[f64],
    n_env: usize,
    seed: u64,
) -> Result<LogGrowth> {
    sample_log_growth(
        kind,
        params,
        torus,
        &[params.kappa],
        checkpoints,
        n_env,
        seed,
        InitialCondition::DeltaAtOrigin,
    )?
    .pop()
    .expect("one kappa")
}

/// `λ₀` from `n_env` environments, delta start, checkpoints `{t/8, t/4, t/2, t}`.
pub fn quenched_lambda(
    kind: EnvKind,
    params: &Params,
    torus: Torus,
    t_end: f64,
    n_env: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if !(t_end >= MIN_QUENCHED_T) {
        return Err(invalid("t_end", format!("needs t_end >= {MIN_QUENCHED_T}, got {t_end}")));
    }
    if n_env < MIN_QUENCHED_ENV {
        return Err(invalid("n_env", format!("needs at least {MIN_QUENCHED_ENV} environments")));
    }
    let growth = single(kind, params, torus, &default_checkpoints(t_end), n_env, seed)?;
    estimate_from_growth(&growth, torus, InitialCondition::DeltaAtOrigin, 0, seed)
}

/// `λ_p` for `p ∈ {1, 2}` from `n_env` environments, delta start.
pub fn annealed_lambda(
    kind: EnvKind,
    params: &Params,
    torus: Torus,
    t_end: f64,
    p: u32,
    n_env: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    check_annealed(p, n_env)?;
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be positive"));
    }
    let growth = single(kind, params, torus, &default_checkpoints(t_end), n_env, seed)?;
    estimate_from_growth(&growth, torus, InitialCondition::DeltaAtOrigin, p, seed)
}

fn check_annealed(p: u32, n_env: usize) -> Result<()> {
    if !(1..=MAX_ANNEALED_P).contains(&p) {
        return Err(invalid("p", format!("annealed moments are limited to 1..={MAX_ANNEALED_P}, got {p}")));
    }
    if n_env < MIN_ANNEALED_ENV {
        return Err(invalid("n_env", format!("annealed estimates need at least {MIN_ANNEALED_ENV} environments")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub kappa: f64,
    /// Quenched estimate first, then one per requested `p`.
    pub estimates: Vec<LyapunovEstimate>,
    /// Set when the point failed; the sweep carries on.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub params: Params,
    pub kappa_grid: Vec<f64>,
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_CSV_HEADER: &str = "kappa,p,t,lambda_hat,std_error,replicas,heavy_tail_flag";

impl SweepResult {
    /// One row per `(κ, p, checkpoint)`; failed points become `#` comment lines.
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for point in &self.points {
            if let Some(err) = &point.error {
                rows.push(format!("# kappa={} failed: {}", point.kappa, err.replace('\n', " ")));
                continue;
            }
            for est in &point.estimates {
                for q in &est.t_grid {
                    rows.push(format!(
                        "{},{},{},{},{},{},{}",
                        point.kappa,
                        est.p,
                        q.t,
                        q.lambda,
                        q.std_error,
                        est.replicas,
                        u8::from(q.heavy_tailed())
                    ));
                }
            }
        }
        rows
    }
}

/// `λ₀` and each `λ_p` along a sorted `κ` grid. Every grid point reuses the
/// same replica environments (common random numbers).
#[allow(clippy::too_many_arguments)]
pub fn kappa_sweep(
    kind: EnvKind,
    params_base: &Params,
    torus: Torus,
    kappa_grid: &[f64],
    t_end: f64,
    p_list: &[u32],
    n_env: usize,
    seed: u64,
) -> Result<SweepResult> {
    if kappa_grid.is_empty() || kappa_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("kappa_grid", "must be nonempty and sorted ascending"));
    }
    for &p in p_list {
        check_annealed(p, n_env)?;
    }
    if !(t_end > 0.0) {
        return Err(invalid("t_end", "must be positive"));
    }
    let growth = sample_log_growth(
        kind,
        params_base,
        torus,
        kappa_grid,
        &default_checkpoints(t_end),
        n_env,
        seed,
        InitialCondition::DeltaAtOrigin,
    )?;
    let points = kappa_grid
        .iter()
        .zip(growth)
        .map(|(&kappa, g)| {
            let estimates = g.and_then(|g| {
                std::iter::once(0)
                    .chain(p_list.iter().copied())
                    .map(|p| estimate_from_growth(&g, torus, InitialCondition::DeltaAtOrigin, p, seed))
                    .collect::<Result<Vec<_>>>()
            });
            match estimates {
                Ok(estimates) => SweepPoint {
                    kappa,
                    estimates,
                    error: None,
                },
                Err(e) => SweepPoint {
                    kappa,
                    estimates: Vec::new(),
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(SweepResult {
        params: *params_base,
        kappa_grid: kappa_grid.to_vec(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(gamma: f64, c: f64, kappa: f64, torus: Torus, t: f64) -> f64 {
        gamma * c + return_and_neighbor(torus, kappa, t).0.ln() / t
    }

    #[test]
    fn constant_environment_quenched() {
        let torus = Torus::new(1, 8).unwrap();
        for kappa in [0.0, 0.3, 1.0] {
            let params = Params::new(kappa, 0.7, 1.5).unwrap();
            let est = quenched_lambda(EnvKind::Constant(1.5), &params, torus, 12.0, 4, 1).unwrap();
            let exact = closed_form(0.7, 1.5, kappa, torus, 12.0);
            assert!((est.value - exact).abs() < 1e-6, "{} vs {exact}", est.value);
            assert!(est.std_error < 1e-12);
            for q in &est.t_grid {
                assert!((q.lambda - q.floor).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_environment_annealed_equal_across_p() {
        let torus = Torus::new(1, 8).unwrap();
        let params = Params::new(0.5, 1.0, 0.4).unwrap();
        let a1 = annealed_lambda(EnvKind::Constant(0.4), &params, torus, 4.0, 1, 100, 2).unwrap();
        let a2 = annealed_lambda(EnvKind::Constant(0.4), &params, torus, 4.0, 2, 100, 2).unwrap();
        let exact = closed_form(1.0, 0.4, 0.5, torus, 4.0);
        assert!((a1.value - exact).abs() < 1e-6);
        assert!((a2.value - exact).abs() < 1e-6);
        // equal replicas share the moment evenly
        assert!((a1.t_grid[3].max_share - 0.01).abs() < 1e-9);
        assert!(!a1.heavy_tail);
    }

    #[test]
    fn preconditions() {
        let torus = Torus::new(1, 8).unwrap();
        let params = Params::new(0.5, 1.0, 1.0).unwrap();
        assert!(quenched_lambda(EnvKind::Isrw, &params, torus, 5.0, 4, 0).is_err());
        assert!(quenched_lambda(EnvKind::Isrw, &params, torus, 10.0, 3, 0).is_err());
        assert!(annealed_lambda(EnvKind::Isrw, &params, torus, 10.0, 1, 99, 0).is_err());
        assert!(annealed_lambda(EnvKind::Isrw, &params, torus, 10.0, 3, 100, 0).is_err());
        assert!(kappa_sweep(EnvKind::Isrw, &params, torus, &[1.0, 0.5], 10.0, &[], 4, 0).is_err());
    }

    #[test]
    fn sweep_rows_and_determinism() {
        let torus = Torus::new(1, 8).unwrap();
        let params = Params::new(0.0, 0.5, 1.0).unwrap();
        let a = kappa_sweep(EnvKind::Isrw, &params, torus, &[0.0, 0.5], 8.0, &[], 4, 11).unwrap();
        let b = kappa_sweep(EnvKind::Isrw, &params, torus, &[0.0, 0.5], 8.0, &[], 4, 11).unwrap();
        assert_eq!(a.csv_rows(), b.csv_rows());
        assert_eq!(a.csv_rows().len(), 2 * 4);
        assert!(a.points.iter().all(|p| p.error.is_none()));
    }

    #[test]
    fn annealed_share_detects_dominant_replica() {
        let (lambda, share) = annealed_point(&[0.0, 0.0, 10.0], 1, 1.0);
        assert!(share > 0.99);
        assert!((lambda - ((2.0 + 10f64.exp()) / 3.0).ln()).abs() < 1e-12);
    }
}
