//! CSV tables with fixed schemas, and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiments::{LadderResult, RateTable, TailReport};
use crate::schemes::StepDiagnostics;
use crate::stopping::DecayStudy;
use crate::{Error, Result};

/// Ordered column names of one table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub columns: &'static [&'static str],
}

pub const DIAGNOSTICS: Schema = Schema {
    name: "diagnostics",
    columns: &[
        "m",
        "t",
        "energy",
        "enstrophy",
        "stokes_norm_sq",
        "div_residual",
        "energy_identity_residual",
        "transform_gap",
        "noise_w22",
        "pressure_grad_tau",
        "pressure_mean",
    ],
};

pub const RATES: Schema = Schema { name: "rates", columns: &["level", "tau", "h", "mean_E", "q50", "q90", "N"] };

pub const FIT: Schema = Schema { name: "fit", columns: &["statistic", "slope", "intercept", "r2"] };

pub const ERRORS: Schema = Schema { name: "errors", columns: &["level", "sample", "seed", "E"] };

pub const TAIL: Schema =
    Schema { name: "tail", columns: &["level", "threshold", "frequency", "ci_low", "ci_high", "N"] };

pub const STOPPING: Schema = Schema { name: "stopping", columns: &["R", "frequency", "ci_low", "ci_high"] };

pub const INFSUP: Schema = Schema { name: "infsup", columns: &["n", "pair", "beta"] };

pub const PATHS: Schema = Schema { name: "paths", columns: &["sample", "seed", "path_sha256"] };

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::Float(v) => format_float(*v),
            Value::Text(s) => s.clone(),
            Value::Empty => String::new(),
        }
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as u64)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<Option<f64>> for Value {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Value::Empty, Value::Float)
    }
}

/// Seventeen significant digits: parses back to the same double.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row as `(column, value)` pairs in any order.
pub type Record = Vec<(&'static str, Value)>;

/// Writes header and rows in schema order. Every record must carry exactly
/// the schema's columns.
pub fn write_csv<W: Write>(out: W, schema: &Schema, records: &[Record]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(out);
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", schema.name));
    w.write_record(schema.columns).map_err(fmt)?;
    for (i, rec) in records.iter().enumerate() {
        if rec.len() != schema.columns.len() {
            return Err(Error::Format(format!(
                "{} row {i}: {} fields, schema has {}",
                schema.name,
                rec.len(),
                schema.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(rec.len());
        for col in schema.columns {
            let v = rec
                .iter()
                .find(|(k, _)| k == col)
                .ok_or_else(|| Error::Format(format!("{} row {i}: missing column '{col}'", schema.name)))?;
            row.push(v.1.render());
        }
        w.write_record(&row).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::Format(format!("{}: {e}", schema.name)))?;
    Ok(())
}

/// CSV text of a table.
pub fn csv_string(schema: &Schema, records: &[Record]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, schema, records)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Writes a table to `path`.
pub fn emit_csv(path: &Path, schema: &Schema, records: &[Record]) -> Result<()> {
    let text = csv_string(schema, records)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Header and string rows of a CSV text.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Reads a CSV file and checks its header against `schema`.
pub fn read_table(path: &Path, schema: &Schema) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (header, rows) = parse_csv(&text)?;
    if header != schema.columns {
        return Err(Error::Format(format!(
            "{}: header {:?} does not match the {} schema",
            path.display(),
            header,
            schema.name
        )));
    }
    Ok(rows)
}

fn cell_f64(row: &[String], i: usize) -> Result<f64> {
    row[i].parse().map_err(|_| Error::Format(format!("not a number: '{}'", row[i])))
}

pub fn diagnostics_records(diags: &[StepDiagnostics]) -> Vec<Record> {
    diags
        .iter()
        .map(|d| {
            vec![
                ("m", d.m.into()),
                ("t", d.t.into()),
                ("energy", d.energy.into()),
                ("enstrophy", d.enstrophy.into()),
                ("stokes_norm_sq", d.stokes_norm_sq.into()),
                ("div_residual", d.div_residual.into()),
                ("energy_identity_residual", d.energy_identity_residual.into()),
                ("transform_gap", d.transform_gap.into()),
                ("noise_w22", d.noise_w22.into()),
                ("pressure_grad_tau", d.pressure_grad_tau.into()),
                ("pressure_mean", d.pressure_mean.into()),
            ]
        })
        .collect()
}

/// Inverse of [`diagnostics_records`] for a diagnostics CSV file.
pub fn read_diagnostics(path: &Path) -> Result<Vec<StepDiagnostics>> {
    read_table(path, &DIAGNOSTICS)?
        .iter()
        .map(|r| {
            Ok(StepDiagnostics {
                m: r[0].parse().map_err(|_| Error::Format(format!("bad step index '{}'", r[0])))?,
                t: cell_f64(r, 1)?,
                energy: cell_f64(r, 2)?,
                enstrophy: cell_f64(r, 3)?,
                stokes_norm_sq: cell_f64(r, 4)?,
                div_residual: cell_f64(r, 5)?,
                energy_identity_residual: cell_f64(r, 6)?,
                transform_gap: if r[7].is_empty() { None } else { Some(cell_f64(r, 7)?) },
                noise_w22: cell_f64(r, 8)?,
                pressure_grad_tau: cell_f64(r, 9)?,
                pressure_mean: cell_f64(r, 10)?,
            })
        })
        .collect()
}

pub fn rates_records(table: &RateTable) -> Vec<Record> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                ("level", i.into()),
                ("tau", r.tau.into()),
                ("h", r.h.into()),
                ("mean_E", r.mean.into()),
                ("q50", r.q50.into()),
                ("q90", r.q90.into()),
                ("N", r.samples.into()),
            ]
        })
        .collect()
}

pub fn fit_records(table: &RateTable) -> Vec<Record> {
    table
        .fits
        .iter()
        .map(|f| {
            vec![
                ("statistic", f.statistic.into()),
                ("slope", f.slope.into()),
                ("intercept", f.intercept.into()),
                ("r2", f.r2.into()),
            ]
        })
        .collect()
}

pub fn error_records(result: &LadderResult) -> Vec<Record> {
    let mut out = Vec::new();
    for (l, rec) in result.records.iter().enumerate() {
        for (s, e) in rec.errors.iter().enumerate() {
            out.push(vec![
                ("level", l.into()),
                ("sample", s.into()),
                ("seed", result.seeds[s].into()),
                ("E", (*e).into()),
            ]);
        }
    }
    out
}

pub fn path_records(result: &LadderResult) -> Vec<Record> {
    result
        .seeds
        .iter()
        .zip(&result.path_checksums)
        .enumerate()
        .map(|(i, (seed, sum))| vec![("sample", i.into()), ("seed", (*seed).into()), ("path_sha256", sum.as_str().into())])
        .collect()
}

pub fn tail_records(report: &TailReport) -> Vec<Record> {
    report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                ("level", i.into()),
                ("threshold", r.threshold.into()),
                ("frequency", r.frequency.into()),
                ("ci_low", r.ci_low.into()),
                ("ci_high", r.ci_high.into()),
                ("N", r.samples.into()),
            ]
        })
        .collect()
}

pub fn stopping_records(study: &DecayStudy) -> Vec<Record> {
    study
        .rows
        .iter()
        .map(|r| {
            vec![
                ("R", r.r.into()),
                ("frequency", r.frequency.into()),
                ("ci_low", r.ci_low.into()),
                ("ci_high", r.ci_high.into()),
            ]
        })
        .collect()
}

/// One row of `rates.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RatesRow {
    pub level: usize,
    pub tau: f64,
    pub h: f64,
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub samples: usize,
}

pub fn parse_rates(text: &str) -> Result<Vec<RatesRow>> {
    let (header, rows) = parse_csv(text)?;
    if header != RATES.columns {
        return Err(Error::Format(format!("rates header {header:?} does not match the rates schema")));
    }
    rows.iter()
        .map(|r| {
            let int = |i: usize| -> Result<usize> {
                r[i].parse().map_err(|_| Error::Format(format!("not an integer: '{}'", r[i])))
            };
            Ok(RatesRow {
                level: int(0)?,
                tau: cell_f64(r, 1)?,
                h: cell_f64(r, 2)?,
                mean: cell_f64(r, 3)?,
                q50: cell_f64(r, 4)?,
                q90: cell_f64(r, 5)?,
                samples: int(6)?,
            })
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Record of one run: enough to reproduce every output byte.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub config: String,
    pub code_version: String,
    pub tau: f64,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub path_checksums: Vec<String>,
    pub wall_clock_seconds: f64,
    pub files: Vec<OutputFile>,
}

/// Serialises outputs in order, hashing each one for the manifest.
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(OutputWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, schema: &Schema, records: &[Record]) -> Result<PathBuf> {
        let text = csv_string(schema, records)?;
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.files = self.files;
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
