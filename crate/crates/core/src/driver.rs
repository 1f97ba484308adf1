//! Run orchestration behind the command-line subcommands: each function
//! computes its tables, writes them through one [`OutputWriter`] in a fixed
//! order, and finishes with a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{to_text, RunConfig};
use crate::experiments::{
    calibrate_xi, probability_tail_report, rate_table, run_ladder, simulate_samples, LadderResult, RateTable,
    TailReport,
};
use crate::fem::FemSystem;
use crate::io::{self, OutputWriter, RunManifest};
use crate::mesh::build_mesh;
use crate::plot::emit_plot;
use crate::schemes::{Convection, Formulation};
use crate::stopping::{accumulators, stopping_decay_study, DecayStudy};
use crate::{Error, Result};

/// `alpha` of the exceedance table written by [`convergence`].
pub const TAIL_ALPHA: f64 = 0.9;

/// Compared iterates of a convergence run; `Stokes` also switches convection off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyKind {
    U,
    Y,
    Stokes,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(StudyKind::U),
            "y" => Ok(StudyKind::Y),
            "stokes" => Ok(StudyKind::Stokes),
            _ => Err(Error::invalid(format!("unknown formulation '{s}' (u|y|stokes)"))),
        }
    }
}

fn manifest(command: &str, cfg: &RunConfig, started: Instant) -> RunManifest {
    let text = to_text(cfg);
    RunManifest {
        command: command.to_string(),
        config_sha256: io::sha256_hex(text.as_bytes()),
        config: text,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        tau: cfg.tau(),
        master_seed: cfg.seed,
        seeds: Vec::new(),
        path_checksums: Vec::new(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files: Vec::new(),
    }
}

pub struct ConvergenceOutput {
    pub result: LadderResult,
    pub table: RateTable,
    pub tail: TailReport,
    pub dir: PathBuf,
}

/// Runs the configured ladder and writes `rates.csv`, `fit.csv`,
/// `errors.csv`, `tail.csv`, `paths.csv` and `manifest.json` into `out`.
pub fn convergence(cfg: &RunConfig, kind: StudyKind, out: &Path) -> Result<ConvergenceOutput> {
    let started = Instant::now();
    let spec = cfg.ladder_spec();
    let mut params = cfg.run_params();
    params.formulation = match kind {
        StudyKind::U => Formulation::U,
        StudyKind::Y | StudyKind::Stokes => Formulation::Y,
    };
    if kind == StudyKind::Stokes {
        params.scheme.convection = Convection::Off;
    }
    let result = run_ladder(&spec, &params)?;
    let table = rate_table(&result)?;
    let xi = calibrate_xi(&result.records, spec.mode, TAIL_ALPHA);
    let tail = probability_tail_report(&result.records, spec.mode, xi, TAIL_ALPHA);

    let mut w = OutputWriter::new(out)?;
    w.csv("rates.csv", &io::RATES, &io::rates_records(&table))?;
    w.csv("fit.csv", &io::FIT, &io::fit_records(&table))?;
    w.csv("errors.csv", &io::ERRORS, &io::error_records(&result))?;
    w.csv("tail.csv", &io::TAIL, &io::tail_records(&tail))?;
    w.csv("paths.csv", &io::PATHS, &io::path_records(&result))?;
    let mut m = manifest("convergence", cfg, started);
    m.seeds = result.seeds.clone();
    m.path_checksums = result.path_checksums.clone();
    w.finish(m)?;
    Ok(ConvergenceOutput { result, table, tail, dir: out.to_path_buf() })
}

/// Simulates `run.samples` trajectories and writes one diagnostics table
/// per sample (`diagnostics_0000.csv`, ...).
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let runs = simulate_samples(cfg.run.mesh_n, cfg.run.m, &cfg.run_params(), cfg.run.samples, cfg.seed)?;
    let mut w = OutputWriter::new(out)?;
    let mut paths = Vec::with_capacity(runs.len());
    for (i, r) in runs.iter().enumerate() {
        paths.push(w.csv(&format!("diagnostics_{i:04}.csv"), &io::DIAGNOSTICS, &io::diagnostics_records(&r.diagnostics))?);
    }
    let mut m = manifest("simulate", cfg, started);
    m.seeds = runs.iter().map(|r| r.seed).collect();
    m.path_checksums = runs.iter().map(|r| r.checksum.clone()).collect();
    w.finish(m)?;
    Ok(paths)
}

/// Decay table over the `stopping.r1` ladder from diagnostics files.
pub fn stopping_stats(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<DecayStudy> {
    let started = Instant::now();
    let mut samples = Vec::with_capacity(inputs.len());
    for p in inputs {
        let diags = io::read_diagnostics(p)?;
        samples.push(accumulators(&diags)?.0);
    }
    let study = stopping_decay_study(&cfg.stopping.r1, &samples)?;
    let mut w = OutputWriter::new(out)?;
    w.csv("stopping.csv", &io::STOPPING, &io::stopping_records(&study))?;
    w.finish(manifest("stopping-stats", cfg, started))?;
    Ok(study)
}

/// Diagnostics files of a `simulate` output directory, in name order.
pub fn diagnostics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("diagnostics_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Inf-sup constants of Taylor–Hood on every mesh level and of P2/P2 on
/// the given negative-control levels.
pub fn infsup(cfg: &RunConfig, levels: &[usize], control: &[usize], out: &Path) -> Result<Vec<(usize, String, f64)>> {
    let started = Instant::now();
    let mut rows = Vec::new();
    for (pair, degrees, ns) in [("P2P1", (2, 1), levels), ("P2P2", (2, 2), control)] {
        for &n in ns {
            let fem = FemSystem::new(build_mesh(n)?, degrees)?;
            rows.push((n, pair.to_string(), fem.infsup_constant()?));
        }
    }
    let records: Vec<io::Record> = rows
        .iter()
        .map(|(n, p, b)| vec![("n", (*n).into()), ("pair", p.as_str().into()), ("beta", (*b).into())])
        .collect();
    let mut w = OutputWriter::new(out)?;
    w.csv("infsup.csv", &io::INFSUP, &records)?;
    w.finish(manifest("infsup", cfg, started))?;
    Ok(rows)
}

/// SVG next to `rates`, with the same stem.
pub fn plot(rates: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(rates).map_err(|e| Error::io(rates, e))?;
    let svg = emit_plot(&text)?;
    let path = rates.with_extension("svg");
    std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
