use super::{EnvKind, EnvTrajectory};

/// Per-site change history of `ξ` with running integrals, for answering
/// `∫_a^b ξ(x, s) ds` in `O(log n)` along many walk paths.
#[derive(Clone, Debug)]
pub struct SiteTimelines {
    /// `offsets[x]..offsets[x + 1]` indexes the pieces of site `x`.
    offsets: Vec<usize>,
    /// Start time of each piece.
    starts: Vec<f64>,
    values: Vec<f64>,
    /// `∫_0^{starts[k]} ξ(x, s) ds`.
    cumulative: Vec<f64>,
    t_end: f64,
}

impl SiteTimelines {
    pub fn build(traj: &EnvTrajectory) -> Self {
        let torus = traj.torus();
        let sites = torus.sites();
        let mut pieces: Vec<Vec<(f64, f64)>> =
            (0..sites).map(|x| vec![(0.0, traj.initial().xi(x))]).collect();
        if !matches!(traj.kind(), EnvKind::Constant(_)) {
            let mut cursor = traj.cursor();
            cursor.advance_through(traj.t_end(), |time, x, n| {
                pieces[x].push((time, n as f64));
            });
        }
        let total: usize = pieces.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(sites + 1);
        let mut starts = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut cumulative = Vec::with_capacity(total);
        offsets.push(0);
        for list in pieces {
            let mut acc = 0.0;
            let mut prev: Option<(f64, f64)> = None;
            for (start, value) in list {
                if let Some((s0, v0)) = prev {
                    acc += v0 * (start - s0);
                }
                starts.push(start);
                values.push(value);
                cumulative.push(acc);
                prev = Some((start, value));
            }
            offsets.push(starts.len());
        }
        Self {
            offsets,
            starts,
            values,
            cumulative,
            t_end: traj.t_end(),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// `ξ(x, s)`, right-continuous.
    pub fn value(&self, x: usize, s: f64) -> f64 {
        let k = self.piece(x, s);
        self.values[k]
    }

    /// `∫_0^s ξ(x, r) dr`.
    pub fn integral_to(&self, x: usize, s: f64) -> f64 {
        let k = self.piece(x, s);
        self.cumulative[k] + self.values[k] * (s - self.starts[k])
    }

    /// `∫_a^b ξ(x, r) dr` for `a <= b`.
    pub fn integral(&self, x: usize, a: f64, b: f64) -> f64 {
        self.integral_to(x, b) - self.integral_to(x, a)
    }

    fn piece(&self, x: usize, s: f64) -> usize {
        let lo = self.offsets[x];
        let hi = self.offsets[x + 1];
        lo + self.starts[lo..hi].partition_point(|&t| t <= s) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::sample_trajectory;
    use crate::lattice::Torus;
    use crate::rng::RngStream;

    #[test]
    fn agrees_with_replay_integrals_and_queries() {
        let torus = Torus::new(2, 4).unwrap();
        for kind in [EnvKind::Isrw, EnvKind::Sep, EnvKind::Svm, EnvKind::Constant(0.3)] {
            let mut rng = RngStream::new(9, 1);
            let traj = sample_trajectory(kind, torus, 0.5, 3.0, &mut rng).unwrap();
            let lines = SiteTimelines::build(&traj);
            let sites: Vec<usize> = (0..torus.sites()).collect();
            let times = [0.0, 0.25, 1.5, 3.0];
            let exact = traj.site_integrals(&sites, &times).unwrap();
            for &x in &sites {
                for (j, &t) in times.iter().enumerate() {
                    assert!((lines.integral_to(x, t) - exact[x][j]).abs() < 1e-12);
                    assert_eq!(lines.value(x, t), traj.query(x, t).unwrap());
                }
            }
        }
    }
}
