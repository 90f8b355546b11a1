//! Torus geometry, the discrete Laplacian and simple-random-walk kernels.
//!
//! Sites of the torus `(Z/LZ)^d` are indexed row-major with axis 0 fastest:
//! `site = x_0 + L x_1 + L^2 x_2 + ...`. Neighbor directions are numbered
//! `0..2d`, direction `2a` stepping `+1` along axis `a` and `2a + 1` stepping
//! `-1`.
//!
//! Heat kernels are computed from the circulant spectrum of the per-axis walk:
//! a walk that jumps to each of its `2d` neighbors at rate `r` factorizes into
//! `d` independent one-dimensional walks, and on a ring of side `L`
//!
//! ```text
//! q_t(k) = (1/L) Σ_m exp(-2 r t (1 - cos θ_m)) cos(θ_m k),   θ_m = 2πm/L.
//! ```
//!
//! This is exact up to rounding and has no truncation parameter.

use std::f64::consts::PI;

use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::rng::{below, exp_time};

/// Smallest side length accepted; below it `+e` and `-e` neighbors coincide
/// or wrap onto themselves too quickly to approximate `Z^d`.
pub const MIN_SIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Torus {
    dim: usize,
    side: usize,
    sites: usize,
}

impl Torus {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTorus("dimension must be positive".into()));
        }
        if side < MIN_SIDE {
            return Err(Error::InvalidTorus(format!(
                "side {side} is below the minimum {MIN_SIDE}"
            )));
        }
        let sites = (0..dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(side))
            .filter(|&n| n <= u32::MAX as usize)
            .ok_or_else(|| Error::InvalidTorus(format!("{side}^{dim} sites is too many")))?;
        Ok(Self { dim, side, sites })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Number of nearest neighbors, `2d`.
    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    pub fn origin(&self) -> usize {
        0
    }

    /// The unit vector along `axis` (the site `e` when `axis = 0`).
    pub fn unit(&self, axis: usize) -> usize {
        assert!(axis < self.dim);
        self.side.pow(axis as u32)
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        (0..self.dim)
            .map(|_| {
                let c = rest % self.side;
                rest /= self.side;
                c
            })
            .collect()
    }

    pub fn site_of(&self, coords: &[usize]) -> usize {
        assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// The site reached from `site` along direction `dir` (see module docs).
    #[inline]
    pub fn neighbor(&self, site: usize, dir: usize) -> usize {
        let axis = dir / 2;
        let stride = self.side.pow(axis as u32);
        let c = (site / stride) % self.side;
        let next = if dir % 2 == 0 {
            if c + 1 == self.side {
                0
            } else {
                c + 1
            }
        } else if c == 0 {
            self.side - 1
        } else {
            c - 1
        };
        site + next * stride - c * stride
    }

    pub fn neighbors(&self, site: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.degree()).map(move |dir| self.neighbor(site, dir))
    }

    /// Flat table of neighbors, `table[site * 2d + dir]`.
    pub fn neighbor_table(&self) -> Vec<usize> {
        let mut table = Vec::with_capacity(self.sites * self.degree());
        for site in 0..self.sites {
            table.extend(self.neighbors(site));
        }
        table
    }

    /// The site `-x`.
    pub fn negate(&self, site: usize) -> usize {
        let coords: Vec<usize> = self
            .coords(site)
            .into_iter()
            .map(|c| (self.side - c) % self.side)
            .collect();
        self.site_of(&coords)
    }
}

/// A real value per torus site.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    torus: Torus,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(torus: Torus) -> Self {
        Self {
            torus,
            values: vec![0.0; torus.sites()],
        }
    }

    pub fn constant(torus: Torus, c: f64) -> Self {
        Self {
            torus,
            values: vec![c; torus.sites()],
        }
    }

    pub fn delta(torus: Torus, site: usize) -> Self {
        let mut f = Self::zeros(torus);
        f.values[site] = 1.0;
        f
    }

    pub fn from_values(torus: Torus, values: Vec<f64>) -> Result<Self> {
        if values.len() != torus.sites() {
            return Err(Error::FieldLength {
                expected: torus.sites(),
                got: values.len(),
            });
        }
        Ok(Self { torus, values })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, site: usize) -> f64 {
        self.values[site]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Model constants. The killing rate is fixed to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    pub kappa: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl Params {
    /// Checks `kappa >= 0` and `gamma > 0`. The admissible `rho` depends on
    /// the catalyst and is checked by [`crate::environment::EnvKind::validate_rho`].
    pub fn new(kappa: f64, gamma: f64, rho: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(invalid("kappa", format!("{kappa} is not a finite value >= 0")));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid("gamma", format!("{gamma} is not a finite value > 0")));
        }
        if !rho.is_finite() {
            return Err(invalid("rho", "must be finite"));
        }
        Ok(Self { kappa, gamma, rho })
    }

    pub fn with_kappa(self, kappa: f64) -> Result<Self> {
        Self::new(kappa, self.gamma, self.rho)
    }
}

/// `v(x) = κ Σ_{y~x} [u(y) - u(x)]`.
pub fn laplacian_apply(u: &Field, kappa: f64) -> Field {
    let torus = u.torus();
    let degree = torus.degree() as f64;
    let values = (0..torus.sites())
        .map(|x| {
            let s: f64 = torus.neighbors(x).map(|y| u.values[y]).sum();
            kappa * (s - degree * u.values[x])
        })
        .collect();
    Field { torus, values }
}

/// Per-axis kernel of a walk jumping to each neighbor at `rate_per_neighbor`.
pub(crate) fn axis_kernel(side: usize, rate_per_neighbor: f64, t: f64) -> Vec<f64> {
    let modes: Vec<(f64, f64)> = (0..side)
        .map(|m| {
            let theta = 2.0 * PI * m as f64 / side as f64;
            (theta, (-2.0 * rate_per_neighbor * t * (1.0 - theta.cos())).exp())
        })
        .collect();
    (0..side)
        .map(|k| {
            let s: f64 = modes
                .iter()
                .map(|&(theta, w)| w * (theta * k as f64).cos())
                .sum();
            (s / side as f64).max(0.0)
        })
        .collect()
}

fn product_kernel(torus: Torus, axis: &[f64]) -> Field {
    let side = torus.side();
    let mut values = vec![1.0; torus.sites()];
    let mut stride = 1;
    for _ in 0..torus.dim() {
        for (site, v) in values.iter_mut().enumerate() {
            *v *= axis[(site / stride) % side];
        }
        stride *= side;
    }
    Field { torus, values }
}

/// Distribution at time `t` of the rate-`2dκ` simple random walk from the origin.
pub fn heat_kernel(torus: Torus, kappa: f64, t: f64) -> Result<Field> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid("t", format!("{t} is not a finite time >= 0")));
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(invalid("kappa", format!("{kappa} is not a finite value >= 0")));
    }
    if t == 0.0 || kappa == 0.0 {
        return Ok(Field::delta(torus, torus.origin()));
    }
    let axis = axis_kernel(torus.side(), kappa, t);
    Ok(product_kernel(torus, &axis))
}

/// Per-neighbor jump rate of a walk whose total jump rate is one. This is the
/// walk followed by ISRW particles and by a tagged site under SEP stirring.
pub fn unit_rate_kappa(dim: usize) -> f64 {
    1.0 / (2.0 * dim as f64)
}

/// `p_t(0)` and `p_t(e)` of the rate-`2dκ` walk, without building the field.
pub fn return_and_neighbor(torus: Torus, kappa: f64, t: f64) -> (f64, f64) {
    if t == 0.0 || kappa == 0.0 {
        return (1.0, 0.0);
    }
    let axis = axis_kernel(torus.side(), kappa, t);
    let rest = axis[0].powi(torus.dim() as i32 - 1);
    (axis[0] * rest, axis[1] * rest)
}

/// Largest allowed ratio `t_cut / L^d`: the area contributed by the uniform
/// (wrap-around) mode of the torus kernel over the integration window.
pub const GREEN_WRAP_BOUND: f64 = 0.01;

/// Truncated, finite-volume stand-in for the Green function `G_d(0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenEstimate {
    /// `∫_0^{t_cut} p_t(0) dt` for the rate-1 walk on the torus.
    pub value: f64,
    /// Bound on the missing `∫_{t_cut}^∞` from a `C t^{-d/2}` envelope.
    pub tail_bound: f64,
    /// `t_cut / L^d`, the wrap-around area included in `value`.
    pub wrap_mass: f64,
    pub t_cut: f64,
}

/// `∫_0^{t_cut} p_t(0) dt` for the rate-1 walk, computed in closed form from
/// the torus spectrum: `(1/V) [t_cut + Σ_{m≠0} (1 - e^{-λ_m t_cut}) / λ_m]`.
pub fn green_function_origin(torus: Torus, t_cut: f64) -> Result<GreenEstimate> {
    let d = torus.dim();
    if d < 3 {
        return Err(invalid("d", format!("Green function needs d >= 3, got {d}")));
    }
    if !(t_cut.is_finite() && t_cut > 0.0) {
        return Err(invalid("t_cut", format!("{t_cut} is not a finite time > 0")));
    }
    let volume = torus.sites() as f64;
    let wrap_mass = t_cut / volume;
    if wrap_mass > GREEN_WRAP_BOUND {
        return Err(invalid(
            "torus",
            format!(
                "wrap-around area t_cut/L^d = {wrap_mass:.3e} exceeds {GREEN_WRAP_BOUND}; use a larger torus"
            ),
        ));
    }
    let side = torus.side();
    let axis_rates: Vec<f64> = (0..side)
        .map(|m| (1.0 - (2.0 * PI * m as f64 / side as f64).cos()) / d as f64)
        .collect();

    let mut sum = t_cut;
    let mut index = vec![0usize; d];
    // odometer over the nonzero modes of (Z/LZ)^d
    'modes: loop {
        let mut axis = 0;
        loop {
            if axis == d {
                break 'modes;
            }
            index[axis] += 1;
            if index[axis] < side {
                break;
            }
            index[axis] = 0;
            axis += 1;
        }
        let lambda: f64 = index.iter().map(|&m| axis_rates[m]).sum();
        sum += -(-lambda * t_cut).exp_m1() / lambda;
    }
    Ok(GreenEstimate {
        value: sum / volume,
        tail_bound: green_tail(torus, t_cut),
        wrap_mass,
        t_cut,
    })
}

fn green_tail(torus: Torus, t_cut: f64) -> f64 {
    let d = torus.dim() as f64;
    let kappa = unit_rate_kappa(torus.dim());
    let floor = 1.0 / torus.sites() as f64;
    let c = (0..=8)
        .map(|i| t_cut * (0.5 + i as f64 / 16.0))
        .map(|t| (return_and_neighbor(torus, kappa, t).0 - floor).max(0.0) * t.powf(d / 2.0))
        .fold(0.0, f64::max);
    c * t_cut.powf(1.0 - d / 2.0) / (d / 2.0 - 1.0)
}

/// A piecewise-constant walk path on `[0, t_end]` started at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    torus: Torus,
    t_end: f64,
    jump_times: Vec<f64>,
    /// `sites[k]` is the position after the `k`-th jump; `sites[0]` is the origin.
    sites: Vec<usize>,
}

impl WalkPath {
    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    /// Position at time `s` (right-continuous).
    pub fn site_at(&self, s: f64) -> usize {
        let k = self.jump_times.partition_point(|&t| t <= s);
        self.sites[k]
    }

    pub fn end_site(&self) -> usize {
        *self.sites.last().expect("path has a start site")
    }

    /// Constant pieces `(start, end, site)` covering `[0, t_end]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.sites.len()).map(move |k| {
            let start = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let end = self.jump_times.get(k).copied().unwrap_or(self.t_end);
            (start, end, self.sites[k])
        })
    }
}

/// Samples a rate-`2dκ` simple random walk path from the origin on `[0, t_end]`.
pub fn rw_sample_path<R: RngCore + ?Sized>(
    torus: Torus,
    kappa: f64,
    t_end: f64,
    rng: &mut R,
) -> WalkPath {
    let degree = torus.degree();
    let rate = degree as f64 * kappa;
    let mut jump_times = Vec::new();
    let mut sites = vec![torus.origin()];
    if rate > 0.0 {
        let mut t = exp_time(rng, rate);
        let mut here = torus.origin();
        while t <= t_end {
            here = torus.neighbor(here, below(rng, degree as u64) as usize);
            jump_times.push(t);
            sites.push(here);
            t += exp_time(rng, rate);
        }
    }
    WalkPath {
        torus,
        t_end,
        jump_times,
        sites,
    }
}
