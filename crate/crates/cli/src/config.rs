//! Experiment configuration: a plain `key = value` file, overridden by flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use pamlab::{EnvKind, InitialCondition, Params, Torus};

/// Keys accepted in a config file, in header order.
pub const KEYS: &[&str] = &[
    "kind",
    "d",
    "L",
    "kappa",
    "kappa_grid",
    "gamma",
    "rho",
    "t_end",
    "n_env",
    "n_paths",
    "p_list",
    "ic",
    "times",
    "horizons",
    "master_seed",
    "output",
    "save_traj",
    "load_traj",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sweep,
    Solve,
    Correlate,
    Conditions,
    Selfcheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sweep => "sweep",
            Command::Solve => "solve",
            Command::Correlate => "correlate",
            Command::Conditions => "conditions",
            Command::Selfcheck => "selfcheck",
        }
    }

    fn defaults(&self) -> &'static [(&'static str, &'static str)] {
        match self {
            Command::Sweep => &[("kappa_grid", "0,0.25,0.5,1,2"), ("t_end", "50"), ("n_env", "16")],
            Command::Solve => &[("kappa", "0.5"), ("t_end", "2"), ("n_paths", "100000")],
            Command::Correlate => &[("n_env", "10000"), ("times", "0.5,1,2")],
            Command::Conditions => &[("n_env", "400"), ("horizons", "25,100,400")],
            Command::Selfcheck => &[("n_env", "2000"), ("n_paths", "100000")],
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl From<pamlab::Error> for ConfigError {
    fn from(e: pamlab::Error) -> Self {
        ConfigError(e.to_string())
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Fully resolved and validated settings for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub kind: EnvKind,
    pub torus: Torus,
    pub params: Params,
    pub kappa_grid: Vec<f64>,
    pub t_end: f64,
    pub n_env: usize,
    pub n_paths: usize,
    pub p_list: Vec<u32>,
    pub ic: InitialCondition,
    pub times: Vec<f64>,
    pub horizons: Vec<f64>,
    pub master_seed: u64,
    pub output: Option<PathBuf>,
    pub save_traj: Option<PathBuf>,
    pub load_traj: Option<PathBuf>,
    /// Resolved `key=value` pairs, echoed into output headers.
    resolved: BTreeMap<String, String>,
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("line {}: expected key = value", n + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError(format!("line {}: unknown key `{key}`", n + 1)));
        }
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{raw}`")))
}

fn list<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<T>> {
    let raw = &map[key];
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{}`", s.trim())))
        })
        .collect()
}

fn path(map: &BTreeMap<String, String>, key: &str) -> Option<PathBuf> {
    map.get(key)
        .filter(|v| !v.is_empty() && v.as_str() != "-")
        .map(PathBuf::from)
}

impl ExperimentConfig {
    /// Layers built-in defaults, the config file (if any) and flag overrides,
    /// then validates every value before any simulation starts.
    pub fn resolve(
        command: Command,
        file: Option<&Path>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut map: BTreeMap<String, String> = [
            ("kind", "isrw"),
            ("d", "1"),
            ("L", "32"),
            ("kappa", "0.5"),
            ("kappa_grid", "0.5"),
            ("gamma", "1"),
            ("t_end", "10"),
            ("n_env", "16"),
            ("n_paths", "10000"),
            ("p_list", ""),
            ("ic", "delta"),
            ("times", "0.5,1,2"),
            ("horizons", "25,100,400"),
            ("master_seed", "1"),
            ("output", "-"),
        ]
        .into_iter()
        .chain(command.defaults().iter().copied())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", file.display())))?;
            map.extend(parse_file(&text)?);
        }
        for (k, v) in overrides {
            if !KEYS.contains(&k.as_str()) {
                return Err(ConfigError(format!("unknown key `{k}`")));
            }
            map.insert(k.clone(), v.clone());
        }

        let kind = EnvKind::parse(&map["kind"])?;
        if !map.contains_key("rho") {
            let rho = match kind {
                EnvKind::Isrw => "1".to_string(),
                EnvKind::Sep | EnvKind::Svm => "0.5".to_string(),
                EnvKind::Constant(c) => c.to_string(),
            };
            map.insert("rho".into(), rho);
        }
        let torus = Torus::new(num(&map, "d")?, num(&map, "L")?)?;
        let params = Params::new(num(&map, "kappa")?, num(&map, "gamma")?, num(&map, "rho")?)?;
        kind.validate_rho(params.rho)?;
        let t_end: f64 = num(&map, "t_end")?;
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(ConfigError("`t_end` must be positive".into()));
        }
        let kappa_grid: Vec<f64> = list(&map, "kappa_grid")?;
        if kappa_grid.is_empty()
            || kappa_grid.windows(2).any(|w| w[1] < w[0])
            || kappa_grid.iter().any(|k| !(k.is_finite() && *k >= 0.0))
        {
            return Err(ConfigError("`kappa_grid` must be nonempty, sorted and >= 0".into()));
        }
        let n_env: usize = num(&map, "n_env")?;
        let n_paths: usize = num(&map, "n_paths")?;
        if n_env == 0 || n_paths == 0 {
            return Err(ConfigError("`n_env` and `n_paths` must be positive".into()));
        }
        let p_list: Vec<u32> = list(&map, "p_list")?;
        if p_list.iter().any(|p| !(1..=pamlab::lyapunov::MAX_ANNEALED_P).contains(p)) {
            return Err(ConfigError("`p_list` entries must be 1 or 2".into()));
        }
        let times: Vec<f64> = list(&map, "times")?;
        let horizons: Vec<f64> = list(&map, "horizons")?;
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(ConfigError("`times` must be a nonempty list of times >= 0".into()));
        }
        if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || !(horizons[0] > 0.0) {
            return Err(ConfigError("`horizons` must be positive and strictly increasing".into()));
        }
        let ic = InitialCondition::parse(&map["ic"])?;
        let horizon = match command {
            Command::Sweep | Command::Solve => t_end,
            Command::Correlate => times.iter().copied().fold(0.0, f64::max),
            Command::Conditions => *horizons.last().expect("nonempty"),
            Command::Selfcheck => 0.0,
        };
        kind.check_horizon(torus, horizon)?;
        let load_traj = path(&map, "load_traj");
        if load_traj.is_some() && command != Command::Solve {
            return Err(ConfigError("`load_traj` only applies to solve".into()));
        }

        Ok(Self {
            command,
            kind,
            torus,
            params,
            kappa_grid,
            t_end,
            n_env,
            n_paths,
            p_list,
            ic,
            times,
            horizons,
            master_seed: num(&map, "master_seed")?,
            output: path(&map, "output"),
            save_traj: path(&map, "save_traj"),
            load_traj,
            resolved: map,
        })
    }

    /// `# pamlab <command> key=value ...` with every setting that affects the
    /// numbers. Output locations and the worker count are left out so reruns
    /// compare byte for byte.
    pub fn header(&self) -> String {
        let mut line = format!("# pamlab {}", self.command.name());
        for key in KEYS {
            if matches!(*key, "output" | "save_traj") {
                continue;
            }
            if let Some(v) = self.resolved.get(*key) {
                line.push_str(&format!(" {key}={v}"));
            }
        }
        line
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn overrides(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_parsing() {
        let map = parse_file("# comment\nkind = sep\n\n  rho=0.3 # trailing\n").unwrap();
        assert_eq!(map["kind"], "sep");
        assert_eq!(map["rho"], "0.3");
        assert!(parse_file("nonsense").is_err());
        assert!(parse_file("colour = red").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = std::env::temp_dir().join(format!("pamlab-config-{}", std::process::id()));
        std::fs::write(&dir, "kind = sep\nrho = 0.3\nd = 2\nL = 6\n").unwrap();
        let cfg = ExperimentConfig::resolve(Command::Solve, Some(&dir), &overrides(&[("rho", "0.4")])).unwrap();
        std::fs::remove_file(&dir).unwrap();
        assert_eq!(cfg.kind, EnvKind::Sep);
        assert_eq!(cfg.params.rho, 0.4);
        assert_eq!(cfg.torus, Torus::new(2, 6).unwrap());
        assert!(cfg.header().contains(" rho=0.4"));
        assert!(!cfg.header().contains("output"));
    }

    #[test]
    fn kind_sets_default_density() {
        let cfg = ExperimentConfig::resolve(Command::Solve, None, &overrides(&[("kind", "svm")])).unwrap();
        assert_eq!(cfg.params.rho, 0.5);
        let cfg = ExperimentConfig::resolve(Command::Solve, None, &overrides(&[("kind", "constant:2")])).unwrap();
        assert_eq!(cfg.params.rho, 2.0);
    }

    #[test]
    fn rejects_invalid_values() {
        for bad in [
            [("kind", "sep"), ("rho", "1.5")],
            [("L", "3"), ("d", "1")],
            [("gamma", "0"), ("d", "1")],
            [("kappa_grid", "2,1"), ("d", "1")],
            [("p_list", "3"), ("d", "1")],
            [("kind", "svm"), ("t_end", "1000")],
            [("kind", "lattice-gas"), ("d", "1")],
            [("n_env", "many"), ("d", "1")],
        ] {
            assert!(
                ExperimentConfig::resolve(Command::Sweep, None, &overrides(&bad)).is_err(),
                "{bad:?}"
            );
        }
    }
}
