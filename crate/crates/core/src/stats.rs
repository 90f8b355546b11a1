//! Replica statistics: estimates with standard errors, two-point correlations
//! of the catalyst, the noisiness functionals `E₁`, `E₂`, `Ē₄`, and the
//! Poisson large-deviation rate for walk jump counts.

use std::f64::consts::PI;

use rand::RngCore;
use rayon::prelude::*;

use crate::environment::{sample_trajectory, EnvKind};
use crate::error::{invalid, Error, Result};
use crate::lattice::{heat_kernel, rw_sample_path, unit_rate_kappa, GreenEstimate, Torus};
use crate::rng::{below, replica_stream, RngStream, ENV_LABEL, WALK_LABEL};

/// A point value with its standard error over `n` independent replicas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    /// Sample mean and `s / √n`. A single sample has infinite standard error.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate { n: 0 });
        }
        let mut m = Moments::default();
        samples.iter().for_each(|&v| m.push(v));
        Ok(m.estimate())
    }

    /// `(mean - exact) / std_error`. A zero-variance estimate that agrees
    /// with `exact` to rounding scores 0 rather than `±inf`.
    pub fn z_score(&self, exact: f64) -> f64 {
        let diff = self.mean - exact;
        let rounding = 1e-12 * self.mean.abs().max(exact.abs());
        if diff.abs() <= rounding && self.std_error <= rounding {
            0.0
        } else {
            diff / self.std_error
        }
    }
}

/// Streaming mean and centered second moment (Welford), mergeable in a fixed
/// order so parallel reductions stay deterministic.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let delta = v - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        let std_error = if self.n > 1 {
            (self.m2.max(0.0) / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Estimate {
            mean: self.mean,
            std_error,
            n: self.n,
        }
    }
}

/// Standard deviation of `stat` over `resamples` bootstrap resamples.
pub fn bootstrap_std_error<R: RngCore + ?Sized>(
    samples: &[f64],
    resamples: usize,
    rng: &mut R,
    stat: impl Fn(&[f64]) -> f64,
) -> f64 {
    let n = samples.len();
    if n < 2 || resamples < 2 {
        return f64::INFINITY;
    }
    let mut buf = vec![0.0; n];
    let mut m = Moments::default();
    for _ in 0..resamples {
        for v in buf.iter_mut() {
            *v = samples[below(rng, n as u64) as usize];
        }
        m.push(stat(&buf));
    }
    (m.m2 / (resamples - 1) as f64).sqrt()
}

/// Empirical two-point correlation beside its exact value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrelationCheck {
    pub kind: EnvKind,
    pub x: usize,
    pub t: f64,
    pub empirical: Estimate,
    pub exact: f64,
    pub z_score: f64,
}

impl CorrelationCheck {
    pub fn new(kind: EnvKind, x: usize, t: f64, empirical: Estimate, exact: f64) -> Self {
        Self {
            kind,
            x,
            t,
            empirical,
            exact,
            z_score: empirical.z_score(exact),
        }
    }
}

/// Visits every Fourier mode of the torus with the decay rate
/// `λ_m = (1/d) Σ_a (1 - cos θ_a)` of the rate-1 walk, the phase `θ·x` and
/// the mode index.
fn for_each_mode(torus: Torus, x: usize, mut f: impl FnMut(f64, f64, &[usize])) {
    let (d, side) = (torus.dim(), torus.side());
    let coords = torus.coords(x);
    let theta = |m: usize| 2.0 * PI * m as f64 / side as f64;
    let mut index = vec![0usize; d];
    loop {
        let lambda: f64 = index.iter().map(|&m| 1.0 - theta(m).cos()).sum::<f64>() / d as f64;
        let phase: f64 = index.iter().zip(&coords).map(|(&m, &c)| theta(m) * c as f64).sum();
        f(lambda, phase, &index);
        let mut axis = 0;
        loop {
            if axis == d {
                return;
            }
            index[axis] += 1;
            if index[axis] < side {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
    }
}

/// `C(x, t) = E[(ξ(0,0) - ρ)(ξ(x,t) - ρ)]` in equilibrium, with the torus
/// heat kernel of the rate-1 walk. SVM needs the truncated Green function and
/// `d >= 3`; its value is the infinite-volume formula with the torus kernel
/// substituted and the time integral cut at `green.t_cut`.
pub fn correlation_exact(
    kind: EnvKind,
    x: usize,
    t: f64,
    rho: f64,
    torus: Torus,
    green: Option<&GreenEstimate>,
) -> Result<f64> {
    if x >= torus.sites() {
        return Err(invalid("x", format!("site {x} is outside the torus")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("t", format!("{t} is not a finite time >= 0")));
    }
    kind.validate_rho(rho)?;
    let p = || -> Result<f64> { Ok(heat_kernel(torus, unit_rate_kappa(torus.dim()), t)?.get(x)) };
    match kind {
        EnvKind::Isrw => Ok(rho * p()?),
        EnvKind::Sep => Ok(rho * (1.0 - rho) * p()?),
        EnvKind::Constant(_) => Ok(0.0),
        EnvKind::Svm => {
            if torus.dim() < 3 {
                return Err(invalid("d", "the voter correlation needs d >= 3"));
            }
            let green = green.ok_or_else(|| invalid("green", "required for the voter model"))?;
            if !(green.value > 0.0) {
                return Err(invalid("green", "value must be positive"));
            }
            let t_cut = green.t_cut;
            let mut sum = 0.0;
            for_each_mode(torus, x, |lambda, phase, _| {
                sum += if lambda == 0.0 {
                    t_cut
                } else {
                    phase.cos() * (-lambda * t).exp() * -(-lambda * t_cut).exp_m1() / lambda
                };
            });
            Ok(rho * (1.0 - rho) / green.value * sum / torus.sites() as f64)
        }
    }
}

fn check_run(kind: EnvKind, rho: f64, torus: Torus, t: f64, n_env: usize) -> Result<()> {
    kind.validate_rho(rho)?;
    kind.check_horizon(torus, t)?;
    if n_env == 0 {
        return Err(invalid("n_env", "must be positive"));
    }
    Ok(())
}

/// Replica averages of `(ξ(0,0) - ρ)(ξ(x,t) - ρ)` for several `(x, t)` at once,
/// each replica contributing one sample per point.
pub fn correlation_empirical_grid(
    kind: EnvKind,
    points: &[(usize, f64)],
    rho: f64,
    torus: Torus,
    n_env: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let t_max = points.iter().map(|p| p.1).fold(0.0, f64::max);
    check_run(kind, rho, torus, t_max, n_env)?;
    if points.iter().any(|&(x, t)| x >= torus.sites() || !(t >= 0.0)) {
        return Err(invalid("points", "sites must be on the torus and times >= 0"));
    }
    let rows = (0..n_env)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_stream(seed, ENV_LABEL, i as u64);
            let traj = sample_trajectory(kind, torus, rho, t_max, &mut rng)?;
            let base = traj.initial().xi(torus.origin()) - rho;
            points
                .iter()
                .map(|&(x, t)| Ok(base * (traj.query(x, t)? - rho)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    (0..points.len())
        .map(|k| Estimate::from_samples(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

pub fn correlation_empirical(
    kind: EnvKind,
    x: usize,
    t: f64,
    rho: f64,
    torus: Torus,
    n_env: usize,
    seed: u64,
) -> Result<Estimate> {
    Ok(correlation_empirical_grid(kind, &[(x, t)], rho, torus, n_env, seed)?[0])
}

/// Noisiness functionals at one horizon `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoisinessPoint {
    pub t: f64,
    /// `E|I(0,T) - I(e,T)|`
    pub e1: Estimate,
    /// `E|I(0,T) - I(e,T)|²`
    pub e2: Estimate,
    /// `E|I(0,T)|⁴`
    pub e4_bar: Estimate,
}

/// `E₁`, `E₂`, `Ē₄` along an increasing grid of horizons, read from the same
/// replica environments.
pub fn noisiness_profile(
    kind: EnvKind,
    rho: f64,
    torus: Torus,
    horizons: &[f64],
    n_env: usize,
    seed: u64,
) -> Result<Vec<NoisinessPoint>> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || !(horizons[0] > 0.0) {
        return Err(invalid("T", "horizons must be positive and strictly increasing"));
    }
    let t_max = *horizons.last().expect("nonempty");
    check_run(kind, rho, torus, t_max, n_env)?;
    let e = torus.unit(0);
    let rows = (0..n_env)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_stream(seed, ENV_LABEL, i as u64);
            let traj = sample_trajectory(kind, torus, rho, t_max, &mut rng)?;
            let raw = traj.site_integrals(&[torus.origin(), e], horizons)?;
            Ok(horizons
                .iter()
                .enumerate()
                .map(|(k, &t)| (raw[0][k] - rho * t, raw[1][k] - rho * t))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    horizons
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let (mut e1, mut e2, mut e4) = (Moments::default(), Moments::default(), Moments::default());
            for r in &rows {
                let (a, b) = r[k];
                let diff = (a - b).abs();
                e1.push(diff);
                e2.push(diff * diff);
                e4.push(a.powi(4));
            }
            Ok(NoisinessPoint {
                t,
                e1: e1.estimate(),
                e2: e2.estimate(),
                e4_bar: e4.estimate(),
            })
        })
        .collect()
}

pub fn noisiness_e1(kind: EnvKind, rho: f64, torus: Torus, t: f64, n_env: usize, seed: u64) -> Result<Estimate> {
    Ok(noisiness_profile(kind, rho, torus, &[t], n_env, seed)?[0].e1)
}

pub fn noisiness_e2_e4(
    kind: EnvKind,
    rho: f64,
    torus: Torus,
    t: f64,
    n_env: usize,
    seed: u64,
) -> Result<(Estimate, Estimate)> {
    let p = noisiness_profile(kind, rho, torus, &[t], n_env, seed)?[0];
    Ok((p.e2, p.e4_bar))
}

/// `E₂(T) / T = 4c ∫_0^T (1 - t/T) [p_t(0) - p_t(e)] dt` with `c = ρ` (ISRW) or
/// `ρ(1-ρ)` (SEP), evaluated mode by mode in closed form.
pub fn e2_over_t_exact(kind: EnvKind, rho: f64, torus: Torus, t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid("T", format!("{t} is not a finite time > 0")));
    }
    kind.validate_rho(rho)?;
    let c = match kind {
        EnvKind::Isrw => rho,
        EnvKind::Sep => rho * (1.0 - rho),
        EnvKind::Constant(_) => return Ok(0.0),
        EnvKind::Svm => {
            return Err(Error::Unsupported(
                "no closed-form voter correlation on a finite torus".into(),
            ))
        }
    };
    let side = torus.side() as f64;
    let mut sum = 0.0;
    // p_t(0) - p_t(e) = (1/V) Σ_m (1 - cos θ_{m,0}) e^{-λ_m t}
    for_each_mode(torus, torus.origin(), |lambda, _, index| {
        let weight = 1.0 - (2.0 * PI * index[0] as f64 / side).cos();
        if lambda > 0.0 && weight > 0.0 {
            let lt = lambda * t;
            sum += weight * (1.0 / lambda - (-(-lt).exp_m1()) / (lambda * lt));
        }
    });
    Ok(4.0 * c * sum / torus.sites() as f64)
}

/// `I(M) = M log M - M + 1`, the rate function of Poisson jump counts.
pub fn poisson_rate(m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(invalid("M", format!("{m} is not a finite value > 0")));
    }
    Ok(m * m.ln() - m + 1.0)
}

/// `log P(Poisson(μ) > k)`, summed upward from `k + 1` in log space.
pub fn poisson_log_tail(mu: f64, k: u64) -> f64 {
    let n0 = k + 1;
    let log_first = -mu + n0 as f64 * mu.ln() - (1..=n0).map(|j| (j as f64).ln()).sum::<f64>();
    let mut term = 1.0;
    let mut total = 1.0;
    let mut n = n0;
    while term > 1e-18 * total {
        n += 1;
        term *= mu / n as f64;
        total += term;
        if n > n0 + 100_000 {
            break;
        }
    }
    log_first + total.ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdpCheck {
    /// `-(1/t) log P̂(J > 2dκMt)` from sampled paths.
    pub empirical_rate: f64,
    pub rate_std_error: f64,
    /// `-(1/t) log P(J > 2dκMt)` from the exact Poisson tail.
    pub oracle_rate: f64,
    /// `2dκ I(M)`, the `t → ∞` limit.
    pub exact_rate: f64,
    /// Sampled paths that landed in the tail event.
    pub hits: usize,
    pub n: usize,
}

/// Estimates the jump-count tail rate of the rate-`2dκ` walk by sampling
/// paths at the tilted rate `2dκM` and reweighting each by the likelihood
/// ratio `M^{-J} e^{(M-1) 2dκt}`, so the rare event is typical.
pub fn ldp_empirical_check(
    dim: usize,
    kappa: f64,
    t: f64,
    m: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LdpCheck> {
    if !(m > 1.0 && m.is_finite()) {
        return Err(invalid("M", format!("{m} is not a finite value > 1")));
    }
    if !(kappa > 0.0 && t > 0.0) {
        return Err(invalid("kappa", "kappa and t must be positive"));
    }
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be positive"));
    }
    let torus = Torus::new(dim, 16)?;
    let base = 2.0 * dim as f64 * kappa;
    let mu = base * t;
    let threshold = (m * mu).floor() as u64;
    let log_shift = (m - 1.0) * mu;
    let chunk = crate::solver::FK_CHUNK;
    let root = replica_stream(seed, WALK_LABEL, 0);
    let parts: Vec<(Moments, usize)> = (0..n_samples.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut rng: RngStream = root.derive(c as u64);
            let mut moments = Moments::default();
            let mut hits = 0;
            for _ in 0..chunk.min(n_samples - c * chunk) {
                let j = rw_sample_path(torus, kappa * m, t, &mut rng).jump_count() as u64;
                if j > threshold {
                    hits += 1;
                    moments.push((log_shift - j as f64 * m.ln()).exp());
                } else {
                    moments.push(0.0);
                }
            }
            (moments, hits)
        })
        .collect();
    let mut total = Moments::default();
    let mut hits = 0;
    for (mm, h) in parts {
        total.merge(&mm);
        hits += h;
    }
    if hits == 0 {
        return Err(Error::Degenerate { n: n_samples });
    }
    let p = total.estimate();
    Ok(LdpCheck {
        empirical_rate: -p.mean.ln() / t,
        rate_std_error: p.std_error / (p.mean * t),
        oracle_rate: -poisson_log_tail(mu, threshold) / t,
        exact_rate: base * poisson_rate(m)?,
        hits,
        n: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::green_function_origin;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let whole = Estimate::from_samples(&xs).unwrap();
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..17].iter().for_each(|&v| a.push(v));
        xs[17..].iter().for_each(|&v| b.push(v));
        a.merge(&b);
        let merged = a.estimate();
        assert!((merged.mean - whole.mean).abs() < 1e-14);
        assert!((merged.std_error - whole.std_error).abs() < 1e-14);
        assert_eq!(merged.n, 50);
    }

    #[test]
    fn estimate_edge_cases() {
        assert!(Estimate::from_samples(&[]).is_err());
        let one = Estimate::from_samples(&[2.0]).unwrap();
        assert!(one.std_error.is_infinite());
        let flat = Estimate::from_samples(&[3.0; 10]).unwrap();
        assert_eq!(flat.std_error, 0.0);
        assert_eq!(flat.z_score(3.0), 0.0);
    }

    #[test]
    fn poisson_rate_values() {
        assert_eq!(poisson_rate(1.0).unwrap(), 0.0);
        assert!((poisson_rate(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!((poisson_rate(2.0).unwrap() - 0.386_294_361_119_890_6).abs() < 1e-15);
        assert!(poisson_rate(0.0).is_err());
        assert!(poisson_rate(-1.0).is_err());
    }

    #[test]
    fn poisson_tail_small_case() {
        // P(Poisson(2) > 3) = 1 - e^{-2}(1 + 2 + 2 + 4/3)
        let exact = 1.0 - (-2.0f64).exp() * (1.0 + 2.0 + 2.0 + 4.0 / 3.0);
        assert!((poisson_log_tail(2.0, 3) - exact.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_correlations_at_time_zero() {
        let torus = Torus::new(1, 8).unwrap();
        assert_eq!(correlation_exact(EnvKind::Isrw, 0, 0.0, 1.3, torus, None).unwrap(), 1.3);
        assert_eq!(correlation_exact(EnvKind::Sep, 0, 0.0, 0.3, torus, None).unwrap(), 0.3 * 0.7);
        assert_eq!(correlation_exact(EnvKind::Sep, 1, 0.0, 0.3, torus, None).unwrap(), 0.0);
        assert!(correlation_exact(EnvKind::Svm, 0, 0.0, 0.3, torus, None).is_err());
    }

    #[test]
    fn voter_correlation_at_origin_time_zero_is_variance() {
        // at t = 0 the truncated integral is exactly the truncated Green value
        let torus = Torus::new(3, 24).unwrap();
        let g = green_function_origin(torus, 100.0).unwrap();
        let c = correlation_exact(EnvKind::Svm, 0, 0.0, 0.4, torus, Some(&g)).unwrap();
        assert!((c - 0.24).abs() < 1e-10);
        let far = correlation_exact(EnvKind::Svm, torus.unit(0), 1.0, 0.4, torus, Some(&g)).unwrap();
        assert!(far > 0.0 && far < c);
    }

    #[test]
    fn e2_exact_matches_quadrature() {
        let torus = Torus::new(1, 16).unwrap();
        let t = 6.0;
        let n = 6000;
        let h = t / n as f64;
        let kappa = unit_rate_kappa(1);
        let f = |s: f64| {
            let p = heat_kernel(torus, kappa, s).unwrap();
            (1.0 - s / t) * (p.get(0) - p.get(1))
        };
        let simpson: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                w * f(i as f64 * h)
            })
            .sum::<f64>()
            * h
            / 3.0;
        let exact = e2_over_t_exact(EnvKind::Isrw, 1.5, torus, t).unwrap();
        assert!((exact - 4.0 * 1.5 * simpson).abs() < 1e-9, "{exact} vs {}", 6.0 * simpson);
    }

    #[test]
    fn constant_environment_is_noiseless() {
        let torus = Torus::new(1, 8).unwrap();
        let c = correlation_empirical(EnvKind::Constant(0.5), 1, 1.0, 0.5, torus, 20, 1).unwrap();
        assert_eq!((c.mean, c.std_error), (0.0, 0.0));
        let p = noisiness_profile(EnvKind::Constant(0.5), 0.5, torus, &[1.0, 2.0], 5, 1).unwrap();
        for q in p {
            assert_eq!((q.e1.mean, q.e2.mean, q.e4_bar.mean), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn bootstrap_of_mean_tracks_standard_error() {
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..400).map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64).collect();
        let se = Estimate::from_samples(&xs).unwrap().std_error;
        let boot = bootstrap_std_error(&xs, 400, &mut rng, |s| s.iter().sum::<f64>() / s.len() as f64);
        assert!((boot / se - 1.0).abs() < 0.2, "{boot} vs {se}");
    }
}
