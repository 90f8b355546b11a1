//! Event-driven catalyst dynamics.
//!
//! Three interacting particle systems drive the equation, each simulated
//! exactly in continuous time with a single Gillespie clock whose total rate
//! never changes:
//!
//! * **ISRW**: every particle jumps at rate 1 to a uniform neighbor. Total
//!   rate is the particle count.
//! * **SEP**: stirring. Each undirected edge rings at rate `1/(2d)` and swaps
//!   the contents of its endpoints, so every particle still jumps at total
//!   rate 1 and the particle count is conserved by construction.
//! * **SVM**: every site rings at rate 1 and copies the opinion of a uniform
//!   neighbor.
//!
//! Only events that change the configuration are logged. Each logged event
//! carries the minimal payload to replay it (particle and direction, edge, or
//! site and direction), and a snapshot of the replay state is kept every
//! [`SNAPSHOT_INTERVAL`] time units so point queries replay a bounded slice.

mod codec;
mod timeline;

use rand::RngCore;
use rand_distr::{Bernoulli, Distribution, Poisson};

use crate::error::{invalid, Error, Result};
use crate::lattice::Torus;
use crate::rng::{below, exp_time, RngStream};

pub use timeline::SiteTimelines;

pub const SNAPSHOT_INTERVAL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvKind {
    Isrw,
    Sep,
    Svm,
    /// `ξ ≡ c`, a degenerate environment for checks with closed forms.
    Constant(f64),
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Isrw => "isrw",
            EnvKind::Sep => "sep",
            EnvKind::Svm => "svm",
            EnvKind::Constant(_) => "constant",
        }
    }

    /// Accepts `isrw`, `sep`, `svm` and `constant:<c>` (case-insensitive).
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "isrw" => Ok(EnvKind::Isrw),
            "sep" => Ok(EnvKind::Sep),
            "svm" => Ok(EnvKind::Svm),
            other => match other.strip_prefix("constant:") {
                Some(c) => c
                    .parse::<f64>()
                    .ok()
                    .filter(|c| c.is_finite())
                    .map(EnvKind::Constant)
                    .ok_or_else(|| invalid("kind", format!("bad constant level in `{s}`"))),
                None => Err(invalid(
                    "kind",
                    format!("`{s}` is not one of isrw, sep, svm, constant:<c>"),
                )),
            },
        }
    }

    pub fn validate_rho(&self, rho: f64) -> Result<()> {
        let ok = match self {
            EnvKind::Isrw => rho.is_finite() && rho > 0.0,
            EnvKind::Sep | EnvKind::Svm => rho > 0.0 && rho < 1.0,
            EnvKind::Constant(_) => rho.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            let range = match self {
                EnvKind::Isrw => "(0, inf)",
                EnvKind::Sep | EnvKind::Svm => "(0, 1)",
                EnvKind::Constant(_) => "finite values",
            };
            Err(invalid(
                "rho",
                format!("{rho} outside {range} for {}", self.name()),
            ))
        }
    }

    /// SVM statistics are transient (finite tori fixate); runs are capped at
    /// `L^2 / 8` to stay well before consensus.
    pub fn check_horizon(&self, torus: Torus, t: f64) -> Result<()> {
        let cap = (torus.side() * torus.side()) as f64 / 8.0;
        if matches!(self, EnvKind::Svm) && t > cap {
            return Err(invalid(
                "t_end",
                format!("SVM runs are limited to L^2/8 = {cap} on this torus, got {t}"),
            ));
        }
        Ok(())
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvKind::Constant(c) => write!(f, "constant:{c}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Catalyst configuration at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    torus: Torus,
    kind: EnvKind,
    occupation: Vec<u32>,
}

impl EnvState {
    pub fn new(kind: EnvKind, torus: Torus, occupation: Vec<u32>) -> Result<Self> {
        if occupation.len() != torus.sites() {
            return Err(Error::FieldLength {
                expected: torus.sites(),
                got: occupation.len(),
            });
        }
        match kind {
            EnvKind::Sep | EnvKind::Svm if occupation.iter().any(|&n| n > 1) => {
                return Err(invalid("occupation", "SEP/SVM states must be 0/1"))
            }
            EnvKind::Constant(_) if occupation.iter().any(|&n| n != 0) => {
                return Err(invalid("occupation", "constant environments carry no particles"))
            }
            _ => {}
        }
        Ok(Self {
            torus,
            kind,
            occupation,
        })
    }

    pub fn torus(&self) -> Torus {
        self.torus
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn occupation(&self) -> &[u32] {
        &self.occupation
    }

    pub fn xi(&self, site: usize) -> f64 {
        match self.kind {
            EnvKind::Constant(c) => c,
            _ => self.occupation[site] as f64,
        }
    }

    pub fn total(&self) -> u64 {
        self.occupation.iter().map(|&n| n as u64).sum()
    }
}

/// Draws the starting configuration: Poisson(ρ) per site for ISRW,
/// Bernoulli(ρ) per site for SEP and SVM.
pub fn env_init<R: RngCore + ?Sized>(
    kind: EnvKind,
    torus: Torus,
    rho: f64,
    rng: &mut R,
) -> Result<EnvState> {
    kind.validate_rho(rho)?;
    let occupation = match kind {
        EnvKind::Isrw => {
            let poisson = Poisson::new(rho).map_err(|e| invalid("rho", e.to_string()))?;
            (0..torus.sites())
                .map(|_| {
                    let n: f64 = poisson.sample(rng);
                    n as u32
                })
                .collect()
        }
        EnvKind::Sep | EnvKind::Svm => {
            let coin = Bernoulli::new(rho).map_err(|e| invalid("rho", e.to_string()))?;
            (0..torus.sites()).map(|_| coin.sample(rng) as u32).collect()
        }
        EnvKind::Constant(_) => vec![0; torus.sites()],
    };
    EnvState::new(kind, torus, occupation)
}

/// Minimal replay payload of one configuration change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventPayload {
    /// ISRW particle `particle` steps along direction `dir`.
    Hop { particle: u32, dir: u8 },
    /// SEP swap across edge `edge = site * d + axis` (between `site` and its
    /// `+axis` neighbor).
    Swap { edge: u32 },
    /// SVM site adopts the opinion of its neighbor along `dir`.
    Adopt { site: u32, dir: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub payload: EventPayload,
}

/// Mutable configuration used when replaying an event log.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ReplayState {
    occupation: Vec<u32>,
    /// ISRW particle positions, particles numbered site by site in the
    /// initial state. Empty for the other kinds.
    positions: Vec<u32>,
}

impl ReplayState {
    fn from_initial(state: &EnvState) -> Self {
        let positions = if state.kind == EnvKind::Isrw {
            state
                .occupation
                .iter()
                .enumerate()
                .flat_map(|(site, &n)| std::iter::repeat_n(site as u32, n as usize))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            occupation: state.occupation.clone(),
            positions,
        }
    }

    /// Applies `payload`, reporting every changed site and its new count.
    #[inline]
    fn apply(&mut self, torus: &Torus, payload: EventPayload, mut changed: impl FnMut(usize, u32)) {
        match payload {
            EventPayload::Hop { particle, dir } => {
                let from = self.positions[particle as usize] as usize;
                let to = torus.neighbor(from, dir as usize);
                self.positions[particle as usize] = to as u32;
                self.occupation[from] -= 1;
                self.occupation[to] += 1;
                changed(from, self.occupation[from]);
                changed(to, self.occupation[to]);
            }
            EventPayload::Swap { edge } => {
                let d = torus.dim();
                let site = edge as usize / d;
                let other = torus.neighbor(site, 2 * (edge as usize % d));
                self.occupation.swap(site, other);
                changed(site, self.occupation[site]);
                changed(other, self.occupation[other]);
            }
            EventPayload::Adopt { site, dir } => {
                let site = site as usize;
                let from = torus.neighbor(site, dir as usize);
                self.occupation[site] = self.occupation[from];
                changed(site, self.occupation[site]);
            }
        }
    }

    fn validate(&self, kind: EnvKind, torus: &Torus, payload: EventPayload) -> Result<()> {
        let degree = torus.degree();
        let ok = match (kind, payload) {
            (EnvKind::Isrw, EventPayload::Hop { particle, dir }) => {
                (particle as usize) < self.positions.len() && (dir as usize) < degree
            }
            (EnvKind::Sep, EventPayload::Swap { edge }) => {
                (edge as usize) < torus.sites() * torus.dim()
            }
            (EnvKind::Svm, EventPayload::Adopt { site, dir }) => {
                (site as usize) < torus.sites() && (dir as usize) < degree
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "event {payload:?} is not valid for a {} trajectory on this torus",
                kind.name()
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Snapshot {
    time: f64,
    /// Index of the first event not yet applied.
    next_event: usize,
    state: ReplayState,
}

/// One realized catalyst path on `[0, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvTrajectory {
    initial: EnvState,
    events: Vec<Event>,
    t_end: f64,
    seed: Option<(u64, u64)>,
    snapshots: Vec<Snapshot>,
}

impl EnvTrajectory {
    /// Builds a trajectory from an explicit event log, validating it.
    pub fn from_parts(initial: EnvState, events: Vec<Event>, t_end: f64) -> Result<Self> {
        Self::assemble(initial, events, t_end, None)
    }

    fn assemble(
        initial: EnvState,
        events: Vec<Event>,
        t_end: f64,
        seed: Option<(u64, u64)>,
    ) -> Result<Self> {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(invalid("t_end", format!("{t_end} is not a finite time >= 0")));
        }
        if matches!(initial.kind, EnvKind::Constant(_)) && !events.is_empty() {
            return Err(Error::Format("constant environments have no events".into()));
        }
        let mut last = 0.0;
        let torus = initial.torus;
        let mut replay = ReplayState::from_initial(&initial);
        for event in &events {
            if !(event.time > last && event.time <= t_end) {
                return Err(Error::Format(format!(
                    "event time {} breaks strict ordering in (0, {t_end}]",
                    event.time
                )));
            }
            last = event.time;
            replay.validate(initial.kind, &torus, event.payload)?;
            replay.apply(&torus, event.payload, |_, _| {});
        }
        let mut traj = Self {
            initial,
            events,
            t_end,
            seed,
            snapshots: Vec::new(),
        };
        traj.snapshots = traj.build_snapshots();
        Ok(traj)
    }

    fn build_snapshots(&self) -> Vec<Snapshot> {
        let torus = self.initial.torus;
        let mut state = ReplayState::from_initial(&self.initial);
        let mut snapshots = vec![Snapshot {
            time: 0.0,
            next_event: 0,
            state: state.clone(),
        }];
        let mut next = 0;
        let mut k = 1;
        while (k as f64) * SNAPSHOT_INTERVAL <= self.t_end {
            let time = k as f64 * SNAPSHOT_INTERVAL;
            while next < self.events.len() && self.events[next].time <= time {
                state.apply(&torus, self.events[next].payload, |_, _| {});
                next += 1;
            }
            snapshots.push(Snapshot {
                time,
                next_event: next,
                state: state.clone(),
            });
            k += 1;
        }
        snapshots
    }

    pub fn kind(&self) -> EnvKind {
        self.initial.kind
    }

    pub fn torus(&self) -> Torus {
        self.initial.torus
    }

    pub fn initial(&self) -> &EnvState {
        &self.initial
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// `(master_seed, stream_index)` of the stream that generated this path.
    pub fn seed(&self) -> Option<(u64, u64)> {
        self.seed
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.t_end {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                t_end: self.t_end,
            })
        }
    }

    fn state_at(&self, t: f64) -> ReplayState {
        let torus = self.initial.torus;
        let k = self.snapshots.partition_point(|s| s.time <= t) - 1;
        let snap = &self.snapshots[k];
        let mut state = snap.state.clone();
        for event in self.events[snap.next_event..].iter().take_while(|e| e.time <= t) {
            state.apply(&torus, event.payload, |_, _| {});
        }
        state
    }

    /// `ξ(x, t)`, right-continuous in `t`.
    pub fn query(&self, x: usize, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if let EnvKind::Constant(c) = self.kind() {
            return Ok(c);
        }
        Ok(self.state_at(t).occupation[x] as f64)
    }

    /// Full configuration at time `t`.
    pub fn state(&self, t: f64) -> Result<EnvState> {
        self.check_time(t)?;
        Ok(EnvState {
            torus: self.torus(),
            kind: self.kind(),
            occupation: self.state_at(t).occupation,
        })
    }

    /// Replays the whole log from the initial state (ignoring snapshots).
    pub fn replay_final(&self) -> EnvState {
        let torus = self.torus();
        let mut state = ReplayState::from_initial(&self.initial);
        for event in &self.events {
            state.apply(&torus, event.payload, |_, _| {});
        }
        EnvState {
            torus,
            kind: self.kind(),
            occupation: state.occupation,
        }
    }

    pub(crate) fn cursor(&self) -> EnvCursor<'_> {
        EnvCursor {
            traj: self,
            state: ReplayState::from_initial(&self.initial),
            next: 0,
        }
    }

    /// Uncentered integrals `∫_0^{times[j]} ξ(sites[i], s) ds`, computed exactly
    /// in one pass over the log. `times` must be sorted and inside `[0, t_end]`.
    pub fn site_integrals(&self, sites: &[usize], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        for &t in times {
            self.check_time(t)?;
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("times", "must be sorted ascending"));
        }
        let torus = self.torus();
        if let Some(&bad) = sites.iter().find(|&&x| x >= torus.sites()) {
            return Err(invalid("site", format!("{bad} is not a site of the torus")));
        }
        let mut out = vec![Vec::with_capacity(times.len()); sites.len()];
        if let EnvKind::Constant(c) = self.kind() {
            for row in &mut out {
                row.extend(times.iter().map(|&t| c * t));
            }
            return Ok(out);
        }
        // slot[x] = position of x in `sites` (first occurrence)
        let mut slot = vec![usize::MAX; torus.sites()];
        for (i, &x) in sites.iter().enumerate().rev() {
            slot[x] = i;
        }
        let mut value: Vec<f64> = sites.iter().map(|&x| self.initial.xi(x)).collect();
        let mut area = vec![0.0; sites.len()];
        let mut since = vec![0.0; sites.len()];
        let mut cursor = self.cursor();
        for &t in times {
            cursor.advance_through(t, |time, x, n| {
                let i = slot[x];
                if i != usize::MAX {
                    area[i] += value[i] * (time - since[i]);
                    since[i] = time;
                    value[i] = n as f64;
                }
            });
            for (i, &x) in sites.iter().enumerate() {
                let j = slot[x];
                out[i].push(area[j] + value[j] * (t - since[j]));
            }
        }
        Ok(out)
    }

    /// Writes the portable binary record (see [`codec`] for the layout).
    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        codec::write(self, w)
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self> {
        codec::read(r)
    }
}

/// Sequential replay of a trajectory, used by the solvers.
pub(crate) struct EnvCursor<'a> {
    traj: &'a EnvTrajectory,
    state: ReplayState,
    next: usize,
}

impl EnvCursor<'_> {
    pub(crate) fn next_event_time(&self) -> Option<f64> {
        self.traj.events.get(self.next).map(|e| e.time)
    }

    /// Applies all events with time `<= t`, calling `changed(time, site, count)`.
    pub(crate) fn advance_through(&mut self, t: f64, mut changed: impl FnMut(f64, usize, u32)) {
        let torus = self.traj.torus();
        while let Some(event) = self.traj.events.get(self.next) {
            if event.time > t {
                break;
            }
            let time = event.time;
            self.state
                .apply(&torus, event.payload, |x, n| changed(time, x, n));
            self.next += 1;
        }
    }

    /// Current `ξ` as floats.
    pub(crate) fn xi_values(&self) -> Vec<f64> {
        match self.traj.kind() {
            EnvKind::Constant(c) => vec![c; self.traj.torus().sites()],
            _ => self.state.occupation.iter().map(|&n| n as f64).collect(),
        }
    }
}

/// Runs the catalyst dynamics for `t_span` from `state`.
pub fn env_evolve(state: EnvState, t_span: f64, rng: &mut RngStream) -> Result<EnvTrajectory> {
    if !(t_span.is_finite() && t_span >= 0.0) {
        return Err(invalid("t_span", format!("{t_span} is not a finite time >= 0")));
    }
    let seed = Some((rng.master_seed(), rng.stream_index()));
    let torus = state.torus;
    let degree = torus.degree() as u64;
    let mut replay = ReplayState::from_initial(&state);
    let mut events = Vec::new();

    let rate = match state.kind {
        EnvKind::Isrw => replay.positions.len() as f64,
        EnvKind::Sep => torus.sites() as f64 / 2.0,
        EnvKind::Svm => torus.sites() as f64,
        EnvKind::Constant(_) => 0.0,
    };
    if rate > 0.0 {
        let mut t = 0.0;
        loop {
            let next = t + exp_time(rng, rate);
            t = if next > t { next } else { t.next_up() };
            if t > t_span {
                break;
            }
            let payload = match state.kind {
                EnvKind::Isrw => Some(EventPayload::Hop {
                    particle: below(rng, replay.positions.len() as u64) as u32,
                    dir: below(rng, degree) as u8,
                }),
                EnvKind::Sep => {
                    let edge = below(rng, (torus.sites() * torus.dim()) as u64) as usize;
                    let site = edge / torus.dim();
                    let other = torus.neighbor(site, 2 * (edge % torus.dim()));
                    (replay.occupation[site] != replay.occupation[other])
                        .then_some(EventPayload::Swap { edge: edge as u32 })
                }
                EnvKind::Svm => {
                    let site = below(rng, torus.sites() as u64) as usize;
                    let dir = below(rng, degree) as usize;
                    let from = torus.neighbor(site, dir);
                    (replay.occupation[site] != replay.occupation[from]).then_some(
                        EventPayload::Adopt {
                            site: site as u32,
                            dir: dir as u8,
                        },
                    )
                }
                EnvKind::Constant(_) => unreachable!("constant environments have zero rate"),
            };
            if let Some(payload) = payload {
                replay.apply(&torus, payload, |_, _| {});
                events.push(Event { time: t, payload });
            }
        }
    }

    let mut traj = EnvTrajectory {
        initial: state,
        events,
        t_end: t_span,
        seed,
        snapshots: Vec::new(),
    };
    traj.snapshots = traj.build_snapshots();
    Ok(traj)
}

/// Initial draw plus evolution from one stream: the standard way a replica
/// environment is produced.
pub fn sample_trajectory(
    kind: EnvKind,
    torus: Torus,
    rho: f64,
    t_span: f64,
    rng: &mut RngStream,
) -> Result<EnvTrajectory> {
    let state = env_init(kind, torus, rho, rng)?;
    env_evolve(state, t_span, rng)
}

/// `I^ξ(x, t) = ∫_0^t [ξ(x, s) - ρ] ds`, exact over the event log.
pub fn env_integral(traj: &EnvTrajectory, x: usize, t: f64, rho: f64) -> Result<f64> {
    Ok(traj.site_integrals(&[x], &[t])?[0][0] - rho * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(d: usize, l: usize) -> Torus {
        Torus::new(d, l).unwrap()
    }

    #[test]
    fn parse_kinds() {
        assert_eq!(EnvKind::parse("ISRW").unwrap(), EnvKind::Isrw);
        assert_eq!(EnvKind::parse("constant:2.5").unwrap(), EnvKind::Constant(2.5));
        assert!(EnvKind::parse("constant:x").is_err());
        assert!(EnvKind::parse("voter").is_err());
        assert_eq!(EnvKind::Constant(1.5).to_string(), "constant:1.5");
    }

    #[test]
    fn rho_ranges() {
        let t = torus(1, 8);
        let mut rng = RngStream::new(0, 0);
        assert!(env_init(EnvKind::Isrw, t, 0.0, &mut rng).is_err());
        assert!(env_init(EnvKind::Sep, t, 1.0, &mut rng).is_err());
        assert!(env_init(EnvKind::Svm, t, 0.0, &mut rng).is_err());
        assert!(env_init(EnvKind::Isrw, t, 3.0, &mut rng).is_ok());
    }

    #[test]
    fn constant_init_and_integral() {
        let t = torus(2, 4);
        let mut rng = RngStream::new(0, 0);
        let state = env_init(EnvKind::Constant(1.0), t, 0.5, &mut rng).unwrap();
        assert!((0..t.sites()).all(|x| state.xi(x) == 1.0));
        let traj = env_evolve(state, 5.0, &mut rng).unwrap();
        assert!(traj.events().is_empty());
        assert_eq!(env_integral(&traj, 3, 3.5, 0.0).unwrap(), 3.5);

        let centered = sample_trajectory(EnvKind::Constant(0.7), t, 0.7, 4.0, &mut rng).unwrap();
        for x in 0..t.sites() {
            assert!(env_integral(&centered, x, 2.5, 0.7).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn hand_built_flip() {
        let t = torus(1, 4);
        let initial = EnvState::new(EnvKind::Svm, t, vec![0, 1, 0, 0]).unwrap();
        let flip = Event {
            time: 1.0,
            payload: EventPayload::Adopt { site: 0, dir: 0 },
        };
        let traj = EnvTrajectory::from_parts(initial, vec![flip], 3.0).unwrap();
        assert_eq!(env_integral(&traj, 0, 2.0, 0.0).unwrap(), 1.0);
        assert_eq!(traj.query(0, 0.999).unwrap(), 0.0);
        assert_eq!(traj.query(0, 1.0).unwrap(), 1.0);
        assert!(env_integral(&traj, 0, 3.5, 0.0).is_err());
        assert!(traj.query(0, -0.1).is_err());
    }

    #[test]
    fn from_parts_rejects_bad_logs() {
        let t = torus(1, 4);
        let initial = EnvState::new(EnvKind::Svm, t, vec![0, 1, 0, 0]).unwrap();
        let at = |time| Event {
            time,
            payload: EventPayload::Adopt { site: 0, dir: 0 },
        };
        assert!(EnvTrajectory::from_parts(initial.clone(), vec![at(1.0), at(1.0)], 3.0).is_err());
        assert!(EnvTrajectory::from_parts(initial.clone(), vec![at(4.0)], 3.0).is_err());
        assert!(EnvTrajectory::from_parts(initial.clone(), vec![at(0.0)], 3.0).is_err());
        let wrong_kind = Event {
            time: 1.0,
            payload: EventPayload::Swap { edge: 0 },
        };
        assert!(EnvTrajectory::from_parts(initial, vec![wrong_kind], 3.0).is_err());
        assert!(EnvState::new(EnvKind::Sep, t, vec![0, 2, 0, 0]).is_err());
    }

    #[test]
    fn sep_conserves_and_stays_binary() {
        let t = torus(2, 6);
        for stream in 0..20 {
            let mut rng = RngStream::new(5, stream);
            let traj = sample_trajectory(EnvKind::Sep, t, 0.4, 10.0, &mut rng).unwrap();
            let n0 = traj.initial().total();
            assert_eq!(traj.replay_final().total(), n0);
            for k in 0..=10 {
                let s = traj.state(k as f64).unwrap();
                assert_eq!(s.total(), n0);
                assert!(s.occupation().iter().all(|&n| n <= 1));
            }
        }
    }

    #[test]
    fn svm_consensus_is_absorbing() {
        let t = torus(3, 4);
        let state = EnvState::new(EnvKind::Svm, t, vec![1; t.sites()]).unwrap();
        let mut rng = RngStream::new(1, 1);
        let traj = env_evolve(state.clone(), 2.0, &mut rng).unwrap();
        assert!(traj.events().is_empty());
        assert_eq!(traj.replay_final(), state);
    }

    #[test]
    fn snapshots_agree_with_full_replay() {
        let t = torus(1, 8);
        let mut rng = RngStream::new(2, 9);
        let traj = sample_trajectory(EnvKind::Isrw, t, 1.5, 6.5, &mut rng).unwrap();
        assert_eq!(traj.state(6.5).unwrap(), traj.replay_final());
        // a query just after each event sees the event
        for event in traj.events().iter().take(20) {
            let before = traj.state(event.time.next_down()).unwrap();
            let after = traj.state(event.time).unwrap();
            assert_ne!(before, after);
        }
    }

    #[test]
    fn evolution_is_deterministic_and_prefix_stable() {
        let t = torus(2, 5);
        let run = |span| {
            let mut rng = RngStream::new(77, 3);
            sample_trajectory(EnvKind::Isrw, t, 1.0, span, &mut rng).unwrap()
        };
        let a = run(4.0);
        assert_eq!(a, run(4.0));
        let b = run(2.0);
        let prefix: Vec<Event> = a.events().iter().copied().filter(|e| e.time <= 2.0).collect();
        assert_eq!(b.events(), prefix.as_slice());
    }

    #[test]
    fn site_integrals_match_brute_force() {
        let t = torus(1, 6);
        let mut rng = RngStream::new(3, 3);
        let traj = sample_trajectory(EnvKind::Sep, t, 0.5, 3.0, &mut rng).unwrap();
        let times = [0.0, 0.4, 1.7, 3.0];
        let got = traj.site_integrals(&[0, 1, 0], &times).unwrap();
        assert_eq!(got[0], got[2]);
        for (i, &x) in [0usize, 1].iter().enumerate() {
            for (j, &tt) in times.iter().enumerate() {
                // midpoint sum over the event grid is exact for piecewise-constant paths
                let mut cuts: Vec<f64> = traj
                    .events()
                    .iter()
                    .map(|e| e.time)
                    .filter(|&s| s < tt)
                    .collect();
                cuts.insert(0, 0.0);
                cuts.push(tt);
                let brute: f64 = cuts
                    .windows(2)
                    .map(|w| traj.query(x, 0.5 * (w[0] + w[1])).unwrap() * (w[1] - w[0]))
                    .sum();
                assert!((got[i][j] - brute).abs() < 1e-12, "{x} {tt}");
            }
        }
    }
}
