//! Line-oriented run configuration: `section.key = value`, `#` comments.
//!
//! Lists are comma separated. Unknown keys, malformed values and range
//! violations are reported with the offending line.

use std::fmt::Write as _;

use crate::experiments::{InitialDatum, LadderMode, LadderSpec, Level, NoiseParams, RunParams, DEFAULT_LIMITS};
use crate::schemes::{Convection, Formulation, SchemeParams};
use crate::stopping::StoppingConfig;
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub mesh_n: usize,
    pub m: usize,
    pub t_final: f64,
    pub mu: f64,
    pub formulation: Formulation,
    pub convection: Convection,
    pub initial: InitialDatum,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderSection {
    pub mode: LadderMode,
    pub mesh_levels: Vec<usize>,
    pub time_levels: Vec<usize>,
    pub ref_mesh_n: usize,
    pub ref_m: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingSection {
    /// Ladder of `R` (the `R1` threshold).
    pub r1: Vec<f64>,
    /// `R2`; `None` uses `R`.
    pub r2: Option<f64>,
    /// `K(R)`; `None` uses `R^2`.
    pub k: Option<f64>,
}

impl StoppingSection {
    pub fn config_for(&self, r: f64) -> Result<StoppingConfig> {
        StoppingConfig::new(r, self.r2.unwrap_or(r), self.k.unwrap_or(r * r))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub version: u32,
    pub run: RunSection,
    pub noise: NoiseParams,
    pub seed: u64,
    pub ladder: LadderSection,
    pub stopping: StoppingSection,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            run: RunSection {
                mesh_n: 8,
                m: 64,
                t_final: 0.1,
                mu: 1.0,
                formulation: Formulation::Y,
                convection: Convection::Skew,
                initial: InitialDatum::Vortex,
                samples: 1,
            },
            noise: NoiseParams::default(),
            seed: 0,
            ladder: LadderSection {
                mode: LadderMode::Time,
                mesh_levels: vec![16],
                time_levels: vec![16, 32, 64, 128],
                ref_mesh_n: 16,
                ref_m: 1024,
                samples: 32,
            },
            stopping: StoppingSection { r1: vec![0.01, 0.015, 0.02, 0.04], r2: None, k: None },
            output_dir: String::from("out"),
        }
    }
}

pub fn formulation_name(f: Formulation) -> &'static str {
    match f {
        Formulation::U => "u",
        Formulation::Y => "y",
        Formulation::Both => "both",
    }
}

pub fn parse_formulation(s: &str) -> Result<Formulation> {
    match s {
        "u" => Ok(Formulation::U),
        "y" => Ok(Formulation::Y),
        "both" => Ok(Formulation::Both),
        _ => Err(Error::invalid(format!("unknown formulation '{s}' (u|y|both)"))),
    }
}

pub fn convection_name(c: Convection) -> &'static str {
    match c {
        Convection::Skew => "skew",
        Convection::Unsymmetrised => "unsymmetrised",
        Convection::Off => "off",
    }
}

pub fn parse_convection(s: &str) -> Result<Convection> {
    match s {
        "skew" | "on" => Ok(Convection::Skew),
        "unsymmetrised" => Ok(Convection::Unsymmetrised),
        "off" => Ok(Convection::Off),
        _ => Err(Error::invalid(format!("unknown convection '{s}' (skew|on|unsymmetrised|off)"))),
    }
}

fn initial_name(i: InitialDatum) -> &'static str {
    match i {
        InitialDatum::Vortex => "vortex",
        InitialDatum::Zero => "zero",
    }
}

fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got '{s}'"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {s}"))
    }
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    let v: usize = s.parse().map_err(|_| format!("expected a positive integer, got '{s}'"))?;
    if v > 0 {
        Ok(v)
    } else {
        Err(String::from("must be positive"))
    }
}

fn list<T>(s: &str, item: fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    let items: Vec<&str> = s.split(',').map(str::trim).collect();
    if items.iter().any(|x| x.is_empty()) {
        return Err(format!("malformed list '{s}'"));
    }
    items.into_iter().map(item).collect()
}

fn via<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| match e {
        Error::InvalidArgument(m) => m,
        other => other.to_string(),
    })
}

fn apply(cfg: &mut RunConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "config.version" => {
            let v: u32 = value.parse().map_err(|_| format!("expected an integer, got '{value}'"))?;
            if v != CONFIG_VERSION {
                return Err(format!("unsupported config version {v} (expected {CONFIG_VERSION})"));
            }
            cfg.version = v;
        }
        "run.mesh_n" => cfg.run.mesh_n = positive_usize(value)?,
        "run.M" => cfg.run.m = positive_usize(value)?,
        "run.T" => cfg.run.t_final = positive_f64(value)?,
        "run.mu" => cfg.run.mu = positive_f64(value)?,
        "run.formulation" => cfg.run.formulation = via(parse_formulation(value))?,
        "run.convection" => cfg.run.convection = via(parse_convection(value))?,
        "run.initial" => cfg.run.initial = via(value.parse())?,
        "run.samples" => cfg.run.samples = positive_usize(value)?,
        "noise.j_max" => cfg.noise.j_max = positive_usize(value)?,
        "noise.decay_r" => {
            let r: f64 = value.parse().map_err(|_| format!("expected a number, got '{value}'"))?;
            if !(r > 4.0) || !r.is_finite() {
                return Err(format!("noise.decay_r requires r > 4, got {value}"));
            }
            cfg.noise.decay_r = r;
        }
        "noise.scale" => {
            let v: f64 = value.parse().map_err(|_| format!("expected a number, got '{value}'"))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(format!("must be nonnegative, got {value}"));
            }
            cfg.noise.scale = v;
        }
        "noise.seed" => cfg.seed = value.parse().map_err(|_| format!("expected an unsigned integer, got '{value}'"))?,
        "ladder.mode" => cfg.ladder.mode = via(value.parse())?,
        "ladder.mesh_levels" => cfg.ladder.mesh_levels = list(value, positive_usize)?,
        "ladder.time_levels" => cfg.ladder.time_levels = list(value, positive_usize)?,
        "ladder.ref_mesh_n" => cfg.ladder.ref_mesh_n = positive_usize(value)?,
        "ladder.ref_M" => cfg.ladder.ref_m = positive_usize(value)?,
        "ladder.samples" => cfg.ladder.samples = positive_usize(value)?,
        "stopping.r1" => {
            let r = list(value, positive_f64)?;
            if r.windows(2).any(|w| w[1] <= w[0]) {
                return Err(String::from("stopping.r1 must be strictly increasing"));
            }
            cfg.stopping.r1 = r;
        }
        "stopping.r2" => cfg.stopping.r2 = Some(positive_f64(value)?),
        "stopping.k" => cfg.stopping.k = Some(positive_f64(value)?),
        "output.dir" => {
            if value.is_empty() {
                return Err(String::from("output.dir must not be empty"));
            }
            cfg.output_dir = value.to_string();
        }
        _ => return Err(format!("unknown key '{key}'")),
    }
    Ok(())
}

/// Parses configuration text; absent keys keep their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected 'section.key = value', got '{content}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if seen.iter().any(|k| k == key) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        apply(&mut cfg, key, value).map_err(err)?;
        seen.push(key.to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

/// Normalised text form listing every key.
pub fn to_text(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config.version = {}", cfg.version);
    let r = &cfg.run;
    let _ = writeln!(s, "run.mesh_n = {}", r.mesh_n);
    let _ = writeln!(s, "run.M = {}", r.m);
    let _ = writeln!(s, "run.T = {:?}", r.t_final);
    let _ = writeln!(s, "run.mu = {:?}", r.mu);
    let _ = writeln!(s, "run.formulation = {}", formulation_name(r.formulation));
    let _ = writeln!(s, "run.convection = {}", convection_name(r.convection));
    let _ = writeln!(s, "run.initial = {}", initial_name(r.initial));
    let _ = writeln!(s, "run.samples = {}", r.samples);
    let _ = writeln!(s, "noise.j_max = {}", cfg.noise.j_max);
    let _ = writeln!(s, "noise.decay_r = {:?}", cfg.noise.decay_r);
    let _ = writeln!(s, "noise.scale = {:?}", cfg.noise.scale);
    let _ = writeln!(s, "noise.seed = {}", cfg.seed);
    let l = &cfg.ladder;
    let _ = writeln!(s, "ladder.mode = {}", l.mode.name());
    let _ = writeln!(s, "ladder.mesh_levels = {}", join(&l.mesh_levels));
    let _ = writeln!(s, "ladder.time_levels = {}", join(&l.time_levels));
    let _ = writeln!(s, "ladder.ref_mesh_n = {}", l.ref_mesh_n);
    let _ = writeln!(s, "ladder.ref_M = {}", l.ref_m);
    let _ = writeln!(s, "ladder.samples = {}", l.samples);
    let _ = writeln!(s, "stopping.r1 = {}", join(&cfg.stopping.r1));
    if let Some(v) = cfg.stopping.r2 {
        let _ = writeln!(s, "stopping.r2 = {v:?}");
    }
    if let Some(v) = cfg.stopping.k {
        let _ = writeln!(s, "stopping.k = {v:?}");
    }
    let _ = writeln!(s, "output.dir = {}", cfg.output_dir);
    s
}

impl RunConfig {
    /// Cross-key checks; single-key ranges are checked while parsing.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Err(Error::Config { line: 0, message });
        if self.run.mesh_n > DEFAULT_LIMITS.n || self.run.m > DEFAULT_LIMITS.m {
            return fail(format!(
                "run level n={} M={} exceeds the resource limit n<={} M<={}",
                self.run.mesh_n, self.run.m, DEFAULT_LIMITS.n, DEFAULT_LIMITS.m
            ));
        }
        if self.stopping.r1.is_empty() {
            return fail(String::from("stopping.r1 must not be empty"));
        }
        let l = &self.ladder;
        let ok = match l.mode {
            LadderMode::Time => l.mesh_levels.len() == 1,
            LadderMode::Space => l.time_levels.len() == 1,
            LadderMode::Joint => l.mesh_levels.len() == l.time_levels.len(),
        };
        if !ok {
            return fail(format!(
                "ladder.mode = {} needs {}",
                l.mode.name(),
                match l.mode {
                    LadderMode::Time => "exactly one ladder.mesh_levels entry",
                    LadderMode::Space => "exactly one ladder.time_levels entry",
                    LadderMode::Joint => "as many mesh levels as time levels",
                }
            ));
        }
        self.ladder_spec().validate().map_err(|e| match e {
            Error::InvalidArgument(message) => Error::Config { line: 0, message },
            other => other,
        })
    }

    /// `tau = T / M` of the single-run section.
    pub fn tau(&self) -> f64 {
        self.run.t_final / self.run.m as f64
    }

    pub fn run_params(&self) -> RunParams {
        RunParams {
            t_final: self.run.t_final,
            scheme: SchemeParams { mu: self.run.mu, convection: self.run.convection },
            noise: self.noise,
            formulation: self.run.formulation,
            initial: self.run.initial,
        }
    }

    pub fn ladder_spec(&self) -> LadderSpec {
        let l = &self.ladder;
        let reference = Level { n: l.ref_mesh_n, m: l.ref_m };
        match l.mode {
            LadderMode::Time => LadderSpec::time(l.mesh_levels[0], &l.time_levels, l.ref_m, l.samples, self.seed),
            LadderMode::Space => LadderSpec::space(&l.mesh_levels, l.ref_mesh_n, l.time_levels[0], l.samples, self.seed),
            LadderMode::Joint => LadderSpec::joint(&l.mesh_levels, &l.time_levels, reference, l.samples, self.seed),
        }
    }
}
