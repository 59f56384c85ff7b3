//! Plain-text run configuration: `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Every key has a default except `scenario.name`; unknown keys and
//! sections are rejected. [`RunConfig::echo`] prints the fully resolved configuration in a
//! canonical order that parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use taf_core::evolution::{Form, HFunction, SolverConfig};
use taf_core::uniqueness::Pattern;

use crate::error::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    Constant,
    NearDegenerate,
    Smooth,
    PureHeat,
    Noise,
    UniquenessPair,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Constant,
        Scenario::NearDegenerate,
        Scenario::Smooth,
        Scenario::PureHeat,
        Scenario::Noise,
        Scenario::UniquenessPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Constant => "constant",
            Scenario::NearDegenerate => "near-degenerate",
            Scenario::Smooth => "smooth",
            Scenario::PureHeat => "pure-heat",
            Scenario::Noise => "noise",
            Scenario::UniquenessPair => "uniqueness-pair",
        }
    }

    /// Scenario-specific default for `scenario.amplitude`.
    fn default_amplitude(self) -> f64 {
        match self {
            Scenario::Noise => 0.02,
            Scenario::UniquenessPair => 1e-3,
            _ => 0.0,
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scenario::ALL.iter().map(|c| c.name()).collect();
                format!("expected one of {}", names.join(", "))
            })
    }
}

/// Barrier family for `v = h(1−ρ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BarrierSpec {
    /// `h(s) = s^{−q}`.
    Power { q: f64 },
    /// `h(s) = log(−log s) + 1` near 0 with a convex decreasing tail.
    LogLog,
}

impl BarrierSpec {
    pub fn build(self) -> Result<HFunction, ConfigError> {
        match self {
            BarrierSpec::Power { q } => HFunction::power(q),
            BarrierSpec::LogLog => HFunction::loglog(),
        }
        .map_err(|e| ConfigError::Barrier(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub ntheta: usize,
    pub solver: SolverConfig,
    pub scenario: Scenario,
    pub seed: u64,
    /// Noise amplitude, or the perturbation δ for the pair scenario.
    pub amplitude: f64,
    /// Mean density for the constant scenario.
    pub rho: f64,
    pub pattern: Pattern,
    pub barrier: BarrierSpec,
    /// Relative paths are resolved against the output root.
    pub output_dir: PathBuf,
    /// Write a checkpoint every this many samples; 0 writes only the final state.
    pub checkpoint_every: usize,
}

const KEYS: &[(&str, &[&str])] = &[
    ("grid", &["nx", "ny", "ntheta"]),
    (
        "solver",
        &["dt", "t_end", "form", "galerkin_cutoff", "cadence", "rho_floor", "dealias", "drift", "cross_diffusion"],
    ),
    ("scenario", &["name", "seed", "amplitude", "rho", "pattern"]),
    ("barrier", &["family", "q"]),
    ("output", &["dir", "checkpoint_every"]),
];

fn pattern_name(p: Pattern) -> &'static str {
    match p {
        Pattern::CosXCosTheta => "cos-x-cos-theta",
        Pattern::CosX => "cos-x",
    }
}

struct Entries {
    map: BTreeMap<(String, String), String>,
}

impl Entries {
    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.map.remove(&(section.to_string(), key.to_string()))
    }

    fn parse<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                key: format!("{section}.{key}"),
                value: v,
                reason: e.to_string(),
            }),
        }
    }
}

fn invalid(key: &str, value: impl ToString, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn grid_size(key: &'static str, value: usize) -> Result<usize, ConfigError> {
    if value < 4 || value % 2 != 0 {
        return Err(ConfigError::Grid { key, value });
    }
    Ok(value)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut map = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::UnknownSection {
                    line: line_no,
                    section: name.into(),
                });
            }
            section = Some(name.into());
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: line_no,
                text: raw.into(),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: line_no,
                text: raw.into(),
            });
        }
        let Some(sec) = section.clone() else {
            return Err(ConfigError::NoSection {
                line: line_no,
                key: key.into(),
            });
        };
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                section: sec,
                key: key.into(),
            });
        }
        if map.insert((sec.clone(), key.to_string()), value.to_string()).is_some() {
            return Err(ConfigError::Duplicate {
                line: line_no,
                section: sec,
                key: key.into(),
            });
        }
    }
    let mut e = Entries { map };

    let scenario: Scenario = match e.take("scenario", "name") {
        None => return Err(ConfigError::Missing("scenario.name")),
        Some(v) => v.parse().map_err(|r: String| invalid("scenario.name", &v, r))?,
    };

    let nx = grid_size("nx", e.parse("grid", "nx", 32)?)?;
    let ny = grid_size("ny", e.parse("grid", "ny", nx)?)?;
    let ntheta = grid_size("ntheta", e.parse("grid", "ntheta", nx)?)?;

    let linear = scenario == Scenario::PureHeat;
    let dt = match e.take("solver", "dt") {
        None => None,
        Some(v) if v == "auto" => None,
        Some(v) => {
            let dt: f64 = v.parse().map_err(|_| invalid("solver.dt", &v, "expected `auto` or a number"))?;
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(invalid("solver.dt", v, "must be positive"));
            }
            Some(dt)
        }
    };
    let t_end: f64 = e.parse("solver", "t_end", 1.0)?;
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(invalid("solver.t_end", t_end, "must be finite and >= 0"));
    }
    let form = match e.take("solver", "form").as_deref() {
        None | Some("divergence") => Form::Divergence,
        Some("non-divergence") => Form::NonDivergence,
        Some(v) => return Err(invalid("solver.form", v, "expected `divergence` or `non-divergence`")),
    };
    let galerkin_cutoff = match e.take("solver", "galerkin_cutoff") {
        None => None,
        Some(v) if v == "none" => None,
        Some(v) => Some(
            v.parse::<usize>()
                .map_err(|_| invalid("solver.galerkin_cutoff", &v, "expected `none` or a mode count"))?,
        ),
    };
    let cadence: usize = e.parse("solver", "cadence", 1)?;
    if cadence == 0 {
        return Err(invalid("solver.cadence", 0, "must be >= 1"));
    }
    let rho_floor: f64 = e.parse("solver", "rho_floor", SolverConfig::default().rho_floor)?;
    if !(rho_floor >= 0.0) || !rho_floor.is_finite() {
        return Err(invalid("solver.rho_floor", rho_floor, "must be finite and >= 0"));
    }
    let solver = SolverConfig {
        dt,
        t_end,
        form,
        galerkin_cutoff,
        cadence,
        rho_floor,
        dealias: e.parse("solver", "dealias", true)?,
        drift: e.parse("solver", "drift", !linear)?,
        cross_diffusion: e.parse("solver", "cross_diffusion", !linear)?,
    };

    let seed: u64 = e.parse("scenario", "seed", 0)?;
    let amplitude: f64 = e.parse("scenario", "amplitude", scenario.default_amplitude())?;
    if !amplitude.is_finite() {
        return Err(invalid("scenario.amplitude", amplitude, "must be finite"));
    }
    let rho: f64 = e.parse("scenario", "rho", 0.5)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid("scenario.rho", rho, "mean density must lie in [0, 1)"));
    }
    let pattern = match e.take("scenario", "pattern").as_deref() {
        None | Some("cos-x-cos-theta") => Pattern::CosXCosTheta,
        Some("cos-x") => Pattern::CosX,
        Some(v) => return Err(invalid("scenario.pattern", v, "expected `cos-x-cos-theta` or `cos-x`")),
    };

    let family = e.take("barrier", "family");
    let q = e.take("barrier", "q");
    let barrier = match family.as_deref() {
        None | Some("power") => {
            let q = match q {
                None => 2.0,
                Some(v) => v.parse().map_err(|_| invalid("barrier.q", &v, "expected a number"))?,
            };
            BarrierSpec::Power { q }
        }
        Some("loglog") => {
            if let Some(v) = q {
                return Err(invalid("barrier.q", v, "only the power family takes an exponent"));
            }
            BarrierSpec::LogLog
        }
        Some(v) => return Err(invalid("barrier.family", v, "expected `power` or `loglog`")),
    };
    barrier.build()?;

    let output_dir = PathBuf::from(
        e.take("output", "dir")
            .unwrap_or_else(|| format!("runs/{}", scenario.name())),
    );
    let checkpoint_every: usize = e.parse("output", "checkpoint_every", 0)?;
    debug_assert!(e.map.is_empty());

    Ok(RunConfig {
        nx,
        ny,
        ntheta,
        solver,
        scenario,
        seed,
        amplitude,
        rho,
        pattern,
        barrier,
        output_dir,
        checkpoint_every,
    })
}

pub fn read_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    /// Canonical text form with every key spelled out.
    pub fn echo(&self) -> String {
        let s = &self.solver;
        let mut out = String::new();
        let _ = writeln!(out, "[grid]\nnx = {}\nny = {}\nntheta = {}\n", self.nx, self.ny, self.ntheta);
        let _ = writeln!(out, "[solver]");
        let _ = writeln!(out, "dt = {}", s.dt.map_or("auto".to_string(), |d| d.to_string()));
        let _ = writeln!(out, "t_end = {}", s.t_end);
        let form = match s.form {
            Form::Divergence => "divergence",
            Form::NonDivergence => "non-divergence",
        };
        let _ = writeln!(out, "form = {form}");
        let _ = writeln!(
            out,
            "galerkin_cutoff = {}",
            s.galerkin_cutoff.map_or("none".to_string(), |n| n.to_string())
        );
        let _ = writeln!(out, "cadence = {}", s.cadence);
        let _ = writeln!(out, "rho_floor = {}", s.rho_floor);
        let _ = writeln!(out, "dealias = {}", s.dealias);
        let _ = writeln!(out, "drift = {}", s.drift);
        let _ = writeln!(out, "cross_diffusion = {}\n", s.cross_diffusion);
        let _ = writeln!(out, "[scenario]");
        let _ = writeln!(out, "name = {}", self.scenario.name());
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "amplitude = {}", self.amplitude);
        let _ = writeln!(out, "rho = {}", self.rho);
        let _ = writeln!(out, "pattern = {}\n", pattern_name(self.pattern));
        let _ = writeln!(out, "[barrier]");
        match self.barrier {
            BarrierSpec::Power { q } => {
                let _ = writeln!(out, "family = power\nq = {q}\n");
            }
            BarrierSpec::LogLog => {
                let _ = writeln!(out, "family = loglog\n");
            }
        }
        let _ = writeln!(out, "[output]");
        let _ = writeln!(out, "dir = {}", self.output_dir.display());
        let _ = write!(out, "checkpoint_every = {}\n", self.checkpoint_every);
        out
    }

    pub fn grid(&self) -> taf_core::TorusGrid {
        taf_core::TorusGrid::upsilon(self.nx, self.ny, self.ntheta).expect("grid sizes validated at parse time")
    }

    pub fn barrier_function(&self) -> HFunction {
        self.barrier.build().expect("barrier validated at parse time")
    }
}
