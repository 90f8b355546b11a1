//! Two independent solvers for `∂u/∂t = κΔu + γξu` on a realized environment.
//!
//! [`solve_direct`] integrates the lattice ODE system interval by interval
//! between environment events, where the generator `κΔ + γ diag(ξ)` is
//! constant. Each interval is cut into equal substeps no longer than
//! `0.1 / (γ max|ξ| + 4dκ)` and advanced with the integrating-factor
//! (Lawson) form of classical RK4: the diagonal part `γ diag(ξ)` is applied
//! through its exact exponential and RK4 handles the Laplacian. The scheme is
//! explicit and fourth order, and exact when `κ = 0`.
//!
//! [`solve_feynman_kac`] averages `exp(γ ∫ ξ(X_s, ·) ds)` over sampled walks.
//! For the delta start the endpoint indicator turns the walk into a bridge,
//! which is reversible, so the environment can be read forward in time; for
//! the flat start there is no bridge and the environment is read backward,
//! `ξ(X_s, t - s)`.

use rayon::prelude::*;

use crate::environment::{EnvTrajectory, SiteTimelines};
use crate::error::{invalid, Error, Result};
use crate::lattice::{rw_sample_path, Field, Params, Torus};
use crate::rng::RngStream;
use crate::stats::{Estimate, Moments};

/// Substep cap numerator: `h <= STEP_SAFETY / (γ max|ξ| + 4dκ)`.
pub const STEP_SAFETY: f64 = 0.1;

/// Fields are rescaled by a power of two when their max leaves
/// `[2^-RENORM_EXP, 2^RENORM_EXP]`.
const RENORM_EXP: i32 = 64;

/// Paths per Feynman-Kac work unit. Each unit has its own derived stream, so
/// the estimate does not depend on how units are spread over workers.
pub const FK_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialCondition {
    DeltaAtOrigin,
    FlatOne,
}

impl InitialCondition {
    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::DeltaAtOrigin => "delta",
            InitialCondition::FlatOne => "flat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "delta" => Ok(InitialCondition::DeltaAtOrigin),
            "flat" => Ok(InitialCondition::FlatOne),
            other => Err(invalid("ic", format!("`{other}` is not delta or flat"))),
        }
    }

    fn field(&self, torus: Torus) -> Field {
        match self {
            InitialCondition::DeltaAtOrigin => Field::delta(torus, torus.origin()),
            InitialCondition::FlatOne => Field::constant(torus, 1.0),
        }
    }
}

/// `u = field · exp(log_norm)` with `field >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledField {
    field: Field,
    log_norm: f64,
}

impl ScaledField {
    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// `log u(x)`; `-inf` where the field vanishes.
    pub fn log_value(&self, x: usize) -> f64 {
        self.field.get(x).ln() + self.log_norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    /// Field at the final time, scaled so its largest entry is 1.
    pub final_field: ScaledField,
    /// `log u(0, t_end)`.
    pub log_u0: f64,
    pub step_count: u64,
    /// Largest per-step bound `(h (γ max|ξ| + 4dκ))^5 / 120`.
    pub max_step_error_estimate: f64,
    /// `(t, log u(0, t))` at the requested checkpoints.
    pub checkpoints: Vec<(f64, f64)>,
}

pub const SOLVE_CSV_HEADER: &str = "seed,kind,d,L,kappa,gamma,rho,t_end,log_u0,step_count";

impl SolveReport {
    pub fn csv_row(
        &self,
        seed: u64,
        traj: &EnvTrajectory,
        params: &Params,
        t_end: f64,
    ) -> String {
        let torus = traj.torus();
        format!(
            "{seed},{},{},{},{},{},{},{},{},{}",
            traj.kind(),
            torus.dim(),
            torus.side(),
            params.kappa,
            params.gamma,
            params.rho,
            t_end,
            self.log_u0,
            self.step_count
        )
    }
}

/// Solves on `[0, t_end]` and reports `log u(0, t_end)` and the final field.
pub fn solve_direct(
    traj: &EnvTrajectory,
    params: &Params,
    u0: InitialCondition,
    t_end: f64,
) -> Result<SolveReport> {
    solve_window(traj, params, u0, 0.0, t_end, &[], STEP_SAFETY)
}

/// Solves with the environment shifted to start at `t_start`, i.e. with
/// potential `γ ξ(·, t_start + τ)` for `τ ∈ [0, t_end - t_start]`.
/// `checkpoints` are absolute times in `[t_start, t_end]`, sorted.
/// `safety` replaces [`STEP_SAFETY`] in the substep cap.
pub fn solve_window(
    traj: &EnvTrajectory,
    params: &Params,
    u0: InitialCondition,
    t_start: f64,
    t_end: f64,
    checkpoints: &[f64],
    safety: f64,
) -> Result<SolveReport> {
    if !(t_start >= 0.0 && t_start <= t_end && t_end <= traj.t_end()) {
        return Err(invalid(
            "window",
            format!(
                "[{t_start}, {t_end}] is not inside the trajectory window [0, {}]",
                traj.t_end()
            ),
        ));
    }
    if checkpoints.windows(2).any(|w| w[1] < w[0])
        || checkpoints.iter().any(|&c| c < t_start || c > t_end)
    {
        return Err(invalid("checkpoints", "must be sorted and inside the window"));
    }
    if !(safety.is_finite() && safety > 0.0) {
        return Err(invalid("safety", "must be positive"));
    }
    let torus = traj.torus();
    let mut stepper = Stepper::new(torus, params, safety);
    let mut u = u0.field(torus).into_values();
    let mut log_norm = 0.0;

    let mut cursor = traj.cursor();
    cursor.advance_through(t_start, |_, _, _| {});
    let mut xi = cursor.xi_values();

    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut pending = checkpoints.iter().copied().peekable();
    let mut now = t_start;
    loop {
        while let Some(&c) = pending.peek() {
            if c > now {
                break;
            }
            recorded.push((c, log_at_origin(&u, log_norm, c)?));
            pending.next();
        }
        if now >= t_end {
            break;
        }
        let mut until = t_end;
        if let Some(te) = cursor.next_event_time() {
            until = until.min(te);
        }
        if let Some(&c) = pending.peek() {
            until = until.min(c);
        }
        stepper.advance(&mut u, &mut log_norm, &xi, until - now, now)?;
        now = until;
        cursor.advance_through(now, |_, x, n| xi[x] = n as f64);
    }

    let max = u.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::VanishedAtOrigin { t: t_end });
    }
    for v in &mut u {
        *v /= max;
    }
    log_norm += max.ln();
    let log_u0 = log_at_origin(&u, log_norm, t_end)?;
    Ok(SolveReport {
        final_field: ScaledField {
            field: Field::from_values(torus, u)?,
            log_norm,
        },
        log_u0,
        step_count: stepper.steps,
        max_step_error_estimate: stepper.max_error,
        checkpoints: recorded,
    })
}

fn log_at_origin(u: &[f64], log_norm: f64, t: f64) -> Result<f64> {
    if u[0] > 0.0 {
        Ok(u[0].ln() + log_norm)
    } else {
        Err(Error::VanishedAtOrigin { t })
    }
}

struct Stepper {
    neighbors: Vec<usize>,
    degree: usize,
    kappa: f64,
    gamma: f64,
    spectral_radius_lap: f64,
    safety: f64,
    half: Vec<f64>,
    full: Vec<f64>,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    steps: u64,
    max_error: f64,
}

impl Stepper {
    fn new(torus: Torus, params: &Params, safety: f64) -> Self {
        let n = torus.sites();
        Self {
            neighbors: torus.neighbor_table(),
            degree: torus.degree(),
            kappa: params.kappa,
            gamma: params.gamma,
            spectral_radius_lap: 2.0 * torus.degree() as f64 * params.kappa,
            safety,
            half: vec![0.0; n],
            full: vec![0.0; n],
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            steps: 0,
            max_error: 0.0,
        }
    }

    /// `out = κΔv`
    fn apply_lap(neighbors: &[usize], degree: usize, kappa: f64, v: &[f64], out: &mut [f64]) {
        for (x, o) in out.iter_mut().enumerate() {
            let s: f64 = neighbors[x * degree..(x + 1) * degree]
                .iter()
                .map(|&y| v[y])
                .sum();
            *o = kappa * (s - degree as f64 * v[x]);
        }
    }

    fn advance(
        &mut self,
        u: &mut [f64],
        log_norm: &mut f64,
        xi: &[f64],
        length: f64,
        start: f64,
    ) -> Result<()> {
        if length <= 0.0 {
            return Ok(());
        }
        let max_xi = xi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rate = self.gamma * max_xi + self.spectral_radius_lap;
        let n = if rate > 0.0 {
            (length * rate / self.safety).ceil().max(1.0) as u64
        } else {
            1
        };
        let h = length / n as f64;
        for (x, &v) in xi.iter().enumerate() {
            self.half[x] = (0.5 * self.gamma * v * h).exp();
            self.full[x] = (self.gamma * v * h).exp();
        }
        self.max_error = self.max_error.max((h * rate).powi(5) / 120.0);

        for step in 0..n {
            if self.kappa == 0.0 {
                for (v, e) in u.iter_mut().zip(&self.full) {
                    *v *= e;
                }
            } else {
                self.lawson_step(u, h);
            }
            self.steps += 1;
            let max = u.iter().copied().fold(0.0, f64::max);
            if !max.is_finite() || u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    t: start + (step + 1) as f64 * h,
                });
            }
            let k = max.log2().floor() as i32;
            if max > 0.0 && !(-RENORM_EXP..RENORM_EXP).contains(&k) {
                let scale = 2f64.powi(-k);
                for v in u.iter_mut() {
                    *v *= scale;
                }
                *log_norm += k as f64 * std::f64::consts::LN_2;
            }
        }
        Ok(())
    }

    fn lawson_step(&mut self, u: &mut [f64], h: f64) {
        let (nb, deg, kappa) = (&self.neighbors[..], self.degree, self.kappa);
        Self::apply_lap(nb, deg, kappa, u, &mut self.k1);
        for x in 0..u.len() {
            self.tmp[x] = self.half[x] * (u[x] + 0.5 * h * self.k1[x]);
        }
        Self::apply_lap(nb, deg, kappa, &self.tmp, &mut self.k2);
        for x in 0..u.len() {
            self.tmp[x] = self.half[x] * u[x] + 0.5 * h * self.k2[x];
        }
        Self::apply_lap(nb, deg, kappa, &self.tmp, &mut self.k3);
        for x in 0..u.len() {
            self.tmp[x] = self.full[x] * u[x] + h * self.half[x] * self.k3[x];
        }
        Self::apply_lap(nb, deg, kappa, &self.tmp, &mut self.k4);
        for x in 0..u.len() {
            let next = self.full[x] * u[x]
                + h / 6.0
                    * (self.full[x] * self.k1[x]
                        + 2.0 * self.half[x] * (self.k2[x] + self.k3[x])
                        + self.k4[x]);
            u[x] = next.max(0.0);
        }
    }
}

/// `log χ(s, t)`: the delta-start solution over `[s, t]` read at the origin.
pub fn log_partition_function(traj: &EnvTrajectory, params: &Params, s: f64, t: f64) -> Result<f64> {
    Ok(solve_window(traj, params, InitialCondition::DeltaAtOrigin, s, t, &[], STEP_SAFETY)?.log_u0)
}

/// `χ(s, t)`; may overflow to infinity for long windows, where
/// [`log_partition_function`] should be used instead.
pub fn partition_function(traj: &EnvTrajectory, params: &Params, s: f64, t: f64) -> Result<f64> {
    Ok(log_partition_function(traj, params, s, t)?.exp())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FkEstimate {
    /// Estimate of `u(0, t_end)`.
    pub estimate: Estimate,
    /// Paths with nonzero weight (all of them for the flat start).
    pub accepted: usize,
}

/// Monte Carlo estimate of `u(0, t_end)` from `n_paths` walks.
pub fn solve_feynman_kac(
    traj: &EnvTrajectory,
    params: &Params,
    u0: InitialCondition,
    t_end: f64,
    n_paths: usize,
    rng: &RngStream,
) -> Result<FkEstimate> {
    if !(t_end >= 0.0 && t_end <= traj.t_end()) {
        return Err(Error::TimeOutOfRange {
            t: t_end,
            t_end: traj.t_end(),
        });
    }
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be positive"));
    }
    let torus = traj.torus();
    let lines = SiteTimelines::build(traj);
    let chunks = n_paths.div_ceil(FK_CHUNK);
    let parts: Vec<(Moments, usize)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut stream = rng.derive(chunk as u64);
            let count = FK_CHUNK.min(n_paths - chunk * FK_CHUNK);
            let mut moments = Moments::default();
            let mut accepted = 0;
            for _ in 0..count {
                let path = rw_sample_path(torus, params.kappa, t_end, &mut stream);
                let weight = match u0 {
                    InitialCondition::DeltaAtOrigin => {
                        if path.end_site() == torus.origin() {
                            let integral: f64 = path
                                .segments()
                                .map(|(a, b, x)| lines.integral(x, a, b))
                                .sum();
                            (params.gamma * integral).exp()
                        } else {
                            0.0
                        }
                    }
                    InitialCondition::FlatOne => {
                        let integral: f64 = path
                            .segments()
                            .map(|(a, b, x)| lines.integral(x, t_end - b, t_end - a))
                            .sum();
                        (params.gamma * integral).exp()
                    }
                };
                if weight > 0.0 {
                    accepted += 1;
                }
                moments.push(weight);
            }
            (moments, accepted)
        })
        .collect();
    let mut total = Moments::default();
    let mut accepted = 0;
    for (m, a) in parts {
        total.merge(&m);
        accepted += a;
    }
    if accepted == 0 {
        return Err(Error::Degenerate { n: n_paths });
    }
    Ok(FkEstimate {
        estimate: total.estimate(),
        accepted,
    })
}
