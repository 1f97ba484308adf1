//! Acceptance suite: one pass/fail line per criterion, exit status 1 if any
//! fails. Runs without the libtest harness so the lines are always printed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use snsfem::config::RunConfig;
use snsfem::driver::{self, ConvergenceOutput, StudyKind};
use snsfem::experiments::{simulate_samples, InitialDatum, LadderMode, NoiseParams, RunParams};
use snsfem::fem::FemSystem;
use snsfem::mesh::build_mesh;
use snsfem::schemes::{Convection, Formulation, SchemeParams};
use snsfem::stopping::{accumulators, stopping_decay_study};

const MASTER_SEED: u64 = 20240601;

const TRANSFORM_GAP_TOL: f64 = 1e-8;
const ENERGY_TOL: f64 = 1e-9;
const DIVERGENCE_TOL: f64 = 1e-9;
const INFSUP_SPREAD: f64 = 0.10;
const INFSUP_CONTROL_RATIO: f64 = 0.5;
const STOKES_SLOPE: (f64, f64) = (1.5, 2.5);
const NS_Q90_SLOPE: (f64, f64) = (1.4, 2.6);
const SPATIAL_SLOPE_MIN: f64 = 1.5;
const STOPPING_LADDER: [f64; 4] = [0.01, 0.015, 0.02, 0.04];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run_params(formulation: Formulation, convection: Convection, initial: InitialDatum) -> RunParams {
    RunParams {
        t_final: 0.1,
        scheme: SchemeParams { mu: 1.0, convection },
        noise: NoiseParams::default(),
        formulation,
        initial,
    }
}

/// Worst values over ten seeds on n=4, M=16, both schemes stepped together.
struct SmallRuns {
    gap: f64,
    energy: f64,
    divergence: f64,
}

fn small_runs() -> SmallRuns {
    let mut out = SmallRuns { gap: 0.0, energy: 0.0, divergence: 0.0 };
    for formulation in [Formulation::Both, Formulation::Y] {
        let params = run_params(formulation, Convection::Skew, InitialDatum::Vortex);
        for run in simulate_samples(4, 16, &params, 10, MASTER_SEED).unwrap() {
            for d in &run.diagnostics {
                if let Some(g) = d.transform_gap {
                    out.gap = out.gap.max(g);
                }
                out.energy = out.energy.max(d.energy_identity_residual / d.energy.max(1.0));
                out.divergence = out.divergence.max(d.div_residual);
            }
        }
    }
    out
}

fn time_ladder_config(samples: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = MASTER_SEED;
    cfg.ladder.mode = LadderMode::Time;
    cfg.ladder.mesh_levels = vec![16];
    cfg.ladder.time_levels = vec![16, 32, 64, 128];
    cfg.ladder.ref_mesh_n = 16;
    cfg.ladder.ref_m = 1024;
    cfg.ladder.samples = samples;
    cfg.validate().unwrap();
    cfg
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn stokes_run(threads: usize, dir: &Path) -> ConvergenceOutput {
    let cfg = time_ladder_config(32);
    in_pool(threads, || driver::convergence(&cfg, StudyKind::Stokes, dir).unwrap())
}

fn criterion_4() -> Outcome {
    let betas: Vec<f64> = [4, 8, 16]
        .iter()
        .map(|&n| FemSystem::new(build_mesh(n).unwrap(), (2, 1)).unwrap().infsup_constant().unwrap())
        .collect();
    let (lo, hi) = betas.iter().fold((f64::MAX, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let spread = (hi - lo) / hi;
    let control = FemSystem::new(build_mesh(8).unwrap(), (2, 2)).unwrap().infsup_constant().unwrap();
    let ratio = control / betas[1];
    outcome(
        spread < INFSUP_SPREAD && ratio < INFSUP_CONTROL_RATIO,
        format!(
            "beta_TH(4,8,16) = {:.5} {:.5} {:.5}, spread {:.4} < {INFSUP_SPREAD}; P2P2/TH at n=8 = {ratio:.4} < {INFSUP_CONTROL_RATIO}",
            betas[0], betas[1], betas[2], spread
        ),
    )
}

fn criterion_5(out: &ConvergenceOutput) -> Outcome {
    let slope = out.table.fit("mean").unwrap().slope;
    let means: Vec<String> = out.table.rows.iter().map(|r| format!("{:.3e}", r.mean)).collect();
    outcome(
        (STOKES_SLOPE.0..=STOKES_SLOPE.1).contains(&slope),
        format!("mean-E slope {slope:.4} in [{}, {}]; mean E {}", STOKES_SLOPE.0, STOKES_SLOPE.1, means.join(" ")),
    )
}

fn criterion_6(dir: &Path) -> Outcome {
    let cfg = time_ladder_config(32);
    let out = driver::convergence(&cfg, StudyKind::Y, dir).unwrap();
    let slope = out.table.fit("q90").unwrap().slope;
    let freqs: Vec<String> = out.tail.rows.iter().map(|r| format!("{:.3}", r.frequency)).collect();
    let slope_ok = (NS_Q90_SLOPE.0..=NS_Q90_SLOPE.1).contains(&slope);
    outcome(
        slope_ok && out.tail.strictly_decreasing,
        format!(
            "q90 slope {slope:.4} in [{}, {}]; exceedance at alpha {} with xi {:.4e}: {} (strictly decreasing: {})",
            NS_Q90_SLOPE.0,
            NS_Q90_SLOPE.1,
            out.tail.alpha,
            out.tail.xi,
            freqs.join(" "),
            out.tail.strictly_decreasing
        ),
    )
}

fn criterion_7(dir: &Path) -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.seed = MASTER_SEED;
    cfg.ladder.mode = LadderMode::Space;
    cfg.ladder.mesh_levels = vec![4, 8, 16];
    cfg.ladder.time_levels = vec![512];
    cfg.ladder.ref_mesh_n = 32;
    cfg.ladder.ref_m = 512;
    cfg.ladder.samples = 20;
    cfg.validate().unwrap();
    let out = driver::convergence(&cfg, StudyKind::Y, dir).unwrap();
    let slope = out.table.fit("mean").unwrap().slope;
    let means: Vec<String> = out.table.rows.iter().map(|r| format!("{:.3e}", r.mean)).collect();
    outcome(slope >= SPATIAL_SLOPE_MIN, format!("mean-E slope vs h {slope:.4} >= {SPATIAL_SLOPE_MIN}; mean E {}", means.join(" ")))
}

fn criterion_8() -> Outcome {
    let params = run_params(Formulation::Y, Convection::Skew, InitialDatum::Zero);
    let runs = simulate_samples(8, 64, &params, 100, MASTER_SEED).unwrap();
    let samples: Vec<Vec<f64>> = runs.iter().map(|r| accumulators(&r.diagnostics).unwrap().0).collect();
    let study = stopping_decay_study(&STOPPING_LADDER, &samples).unwrap();
    let top = study.rows.last().unwrap().frequency;
    let freqs: Vec<String> = study.rows.iter().map(|r| format!("R={} P={:.2}", r.r, r.frequency)).collect();
    outcome(
        study.nonincreasing && top == 0.0,
        format!("{} (nonincreasing: {}, top {top})", freqs.join(", "), study.nonincreasing),
    )
}

fn criterion_9(first: &[u8], dir: &Path) -> Outcome {
    let second = stokes_run(2, dir);
    let bytes = std::fs::read(second.dir.join("rates.csv")).unwrap();
    outcome(bytes == first, format!("rates.csv from pools of 1 and 2 threads: {} vs {} bytes, identical {}", first.len(), bytes.len(), bytes == first))
}

fn report(id: u32, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    let status = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{status}] {name}: {} ({:.1}s)", o.detail, started.elapsed().as_secs_f64());
    o.pass
}

fn main() {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: u32| only.is_empty() || only.contains(&id);
    let tmp = tempfile::tempdir().unwrap();
    let mut results = Vec::new();

    if wanted(1) || wanted(2) || wanted(3) {
        let started = Instant::now();
        let small = small_runs();
        let shared = started.elapsed().as_secs_f64();
        if wanted(1) {
            results.push(report(1, "transform equivalence", || {
                outcome(
                    small.gap <= TRANSFORM_GAP_TOL,
                    format!("max gap {:.3e} <= {TRANSFORM_GAP_TOL:e}; runs shared with 2 and 3 took {shared:.1}s", small.gap),
                )
            }));
        }
        if wanted(2) {
            results.push(report(2, "energy identity", || {
                outcome(
                    small.energy <= ENERGY_TOL,
                    format!("max residual / max(1, |U|^2) {:.3e} <= {ENERGY_TOL:e}", small.energy),
                )
            }));
        }
        if wanted(3) {
            results.push(report(3, "discrete divergence", || {
                outcome(small.divergence <= DIVERGENCE_TOL, format!("max normalised residual {:.3e} <= {DIVERGENCE_TOL:e}", small.divergence))
            }));
        }
    }
    if wanted(4) {
        results.push(report(4, "inf-sup stability", criterion_4));
    }
    let mut stokes_bytes = None;
    if wanted(5) || wanted(9) {
        let dir = tmp.path().join("stokes1");
        results.push(report(5, "Stokes temporal rate", || {
            let out = stokes_run(1, &dir);
            stokes_bytes = std::fs::read(out.dir.join("rates.csv")).ok();
            criterion_5(&out)
        }));
    }
    if wanted(6) {
        results.push(report(6, "Navier-Stokes rate in probability", || criterion_6(&tmp.path().join("ns"))));
    }
    if wanted(7) {
        results.push(report(7, "spatial rate", || criterion_7(&tmp.path().join("space"))));
    }
    if wanted(8) {
        results.push(report(8, "stopping-time decay", criterion_8));
    }
    if wanted(9) {
        results.push(report(9, "thread-count determinism", || match &stokes_bytes {
            Some(b) => criterion_9(b, &tmp.path().join("stokes2")),
            None => outcome(false, String::from("criterion 5 produced no rates.csv")),
        }));
    }

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
