//! Convergence ladders on shared Brownian paths: reference solves, the
//! pathwise error functional, rate fits and exceedance frequencies.

use rayon::prelude::*;

use crate::fem::{DiscreteField, FemSystem};
use crate::mesh::build_mesh;
use crate::noise::{build_noise, sample_path, sample_seed, DiscreteNoise, Increments};
use crate::schemes::{
    default_initial_velocity, Convection, Formulation, SchemeParams, StepDiagnostics, Stepper, TimeGrid,
    TrajectoryState,
};
use crate::sparse::CsrMatrix;
use crate::stopping::{fit_line, wilson_interval, Z95};
use crate::{Error, Result};

/// Which discretisation parameter is refined along the ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderMode {
    Time,
    Space,
    Joint,
}

impl LadderMode {
    pub fn name(self) -> &'static str {
        match self {
            LadderMode::Time => "time",
            LadderMode::Space => "space",
            LadderMode::Joint => "joint",
        }
    }
}

impl std::str::FromStr for LadderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(LadderMode::Time),
            "space" => Ok(LadderMode::Space),
            "joint" => Ok(LadderMode::Joint),
            _ => Err(Error::invalid(format!("unknown ladder mode '{s}' (time|space|joint)"))),
        }
    }
}

/// Noise coefficients `sigma_jk = scale * kappa^{-decay_r}`, `1 <= j, k <= j_max`.
/// A zero scale gives deterministic runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    pub j_max: usize,
    pub decay_r: f64,
    pub scale: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { j_max: 4, decay_r: 4.5, scale: 0.5 }
    }
}

impl NoiseParams {
    pub fn is_deterministic(&self) -> bool {
        self.scale == 0.0
    }
}

/// Everything shared by all levels and samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunParams {
    pub t_final: f64,
    pub scheme: SchemeParams,
    pub noise: NoiseParams,
    /// Which iterates enter the error functional.
    pub formulation: Formulation,
    pub initial: InitialDatum,
}

/// Initial velocity of every run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitialDatum {
    /// [`default_initial_velocity`].
    #[default]
    Vortex,
    Zero,
}

impl std::str::FromStr for InitialDatum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vortex" => Ok(InitialDatum::Vortex),
            "zero" => Ok(InitialDatum::Zero),
            _ => Err(Error::invalid(format!("unknown initial datum '{s}' (vortex|zero)"))),
        }
    }
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            t_final: 0.1,
            scheme: SchemeParams::default(),
            noise: NoiseParams::default(),
            formulation: Formulation::Y,
            initial: InitialDatum::Vortex,
        }
    }
}

/// One discretisation level: `n x n` mesh and `M` time steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub n: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderSpec {
    pub mode: LadderMode,
    /// Tested levels, coarsest first.
    pub levels: Vec<Level>,
    pub reference: Level,
    pub samples: usize,
    pub master_seed: u64,
    /// Largest admissible `(n, M)` for any solve.
    pub limits: Level,
}

pub const DEFAULT_LIMITS: Level = Level { n: 32, m: 1024 };

impl LadderSpec {
    /// Time ladder `M = m0, 2 m0, ...` on a fixed mesh.
    pub fn time(n: usize, time_levels: &[usize], ref_m: usize, samples: usize, master_seed: u64) -> Self {
        LadderSpec {
            mode: LadderMode::Time,
            levels: time_levels.iter().map(|&m| Level { n, m }).collect(),
            reference: Level { n, m: ref_m },
            samples,
            master_seed,
            limits: DEFAULT_LIMITS,
        }
    }

    /// Space ladder `n = n0, 2 n0, ...` at a fixed number of steps.
    pub fn space(mesh_levels: &[usize], ref_n: usize, m: usize, samples: usize, master_seed: u64) -> Self {
        LadderSpec {
            mode: LadderMode::Space,
            levels: mesh_levels.iter().map(|&n| Level { n, m }).collect(),
            reference: Level { n: ref_n, m },
            samples,
            master_seed,
            limits: DEFAULT_LIMITS,
        }
    }

    /// Both refined together: level `i` is `(mesh_levels[i], time_levels[i])`.
    pub fn joint(
        mesh_levels: &[usize],
        time_levels: &[usize],
        reference: Level,
        samples: usize,
        master_seed: u64,
    ) -> Self {
        LadderSpec {
            mode: LadderMode::Joint,
            levels: mesh_levels.iter().zip(time_levels).map(|(&n, &m)| Level { n, m }).collect(),
            reference,
            samples,
            master_seed,
            limits: DEFAULT_LIMITS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("ladder has no levels"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("ladder needs at least one sample"));
        }
        let r = self.reference;
        for l in self.levels.iter().chain(std::iter::once(&r)) {
            if l.n == 0 || l.m == 0 {
                return Err(Error::invalid("mesh and time levels must be positive"));
            }
            if l.n > self.limits.n || l.m > self.limits.m {
                return Err(Error::Config {
                    line: 0,
                    message: format!(
                        "level n={} M={} exceeds the resource limit n<={} M<={}",
                        l.n, l.m, self.limits.n, self.limits.m
                    ),
                });
            }
        }
        for l in &self.levels {
            if r.n % l.n != 0 || r.m % l.m != 0 {
                return Err(Error::invalid(format!(
                    "level n={} M={} is not nested in the reference n={} M={}",
                    l.n, l.m, r.n, r.m
                )));
            }
        }
        for w in self.levels.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ok = match self.mode {
                LadderMode::Time => a.n == b.n && b.m == 2 * a.m,
                LadderMode::Space => a.m == b.m && b.n == 2 * a.n,
                LadderMode::Joint => b.n == 2 * a.n && b.m == 2 * a.m,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "levels are not dyadic for a {} ladder: ({}, {}) then ({}, {})",
                    self.mode.name(),
                    a.n,
                    a.m,
                    b.n,
                    b.m
                )));
            }
        }
        let strictly_finer = self.levels.iter().all(|l| match self.mode {
            LadderMode::Time => r.n == l.n && r.m > l.m,
            LadderMode::Space => r.m == l.m && r.n > l.n,
            LadderMode::Joint => r.n > l.n && r.m > l.m,
        });
        if !strictly_finer {
            return Err(Error::invalid("reference must be strictly finer than every tested level"));
        }
        Ok(())
    }
}

/// Per-level errors of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRecord {
    pub level: Level,
    pub tau: f64,
    pub h: f64,
    /// `E` per sample, in sample order.
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderResult {
    pub spec: LadderSpec,
    pub params: RunParams,
    pub records: Vec<ErrorRecord>,
    pub seeds: Vec<u64>,
    /// SHA-256 of each sample's finest-grid Brownian path; every level of
    /// the sample consumed coarsenings of exactly this path.
    pub path_checksums: Vec<String>,
}

/// Finite element system, noise discretisation, initial datum.
pub struct LevelSystem {
    pub fem: FemSystem,
    pub noise: DiscreteNoise,
    pub u0: DiscreteField,
}

impl LevelSystem {
    pub fn new(n: usize, noise: &NoiseParams, initial: InitialDatum) -> Result<Self> {
        let fem = FemSystem::new(build_mesh(n)?, (2, 1))?;
        let scale = if noise.is_deterministic() { 1.0 } else { noise.scale };
        let model = build_noise(noise.j_max, noise.decay_r, scale)?;
        let noise = DiscreteNoise::new(&model, &fem);
        let u0 = match initial {
            InitialDatum::Vortex => default_initial_velocity(&fem),
            InitialDatum::Zero => DiscreteField::velocity(vec![0.0; fem.velocity_dofs()]),
        };
        Ok(LevelSystem { fem, noise, u0 })
    }
}

/// Increments of one sample on the finest grid `m_fine`, and the path checksum.
pub fn sample_increments(params: &RunParams, num_modes: usize, m_fine: usize, seed: u64) -> Result<(Increments, String)> {
    if params.noise.is_deterministic() {
        return Ok((Increments::zeros(num_modes, m_fine, params.t_final), String::from("zero")));
    }
    let path = sample_path(num_modes, m_fine, params.t_final, seed)?;
    Ok((path.coarsen(m_fine)?, path.checksum()))
}

fn coarsen(incr: &Increments, m: usize) -> Result<Increments> {
    let fine = incr.steps();
    if m == 0 || fine % m != 0 {
        return Err(Error::invalid(format!("coarse step count {m} does not divide {fine}")));
    }
    let r = fine / m;
    let per_mode = (0..incr.num_modes())
        .map(|k| incr.mode(k).chunks(r).map(|c| c.iter().fold(0.0, |a, v| a + v)).collect())
        .collect();
    Ok(Increments::new(per_mode, incr.t_final()))
}

fn compared_field(state: &TrajectoryState, formulation: Formulation) -> &[f64] {
    match formulation {
        Formulation::Y => &state.y.coeffs,
        Formulation::U | Formulation::Both => &state.u.coeffs,
    }
}

fn stepping_formulation(formulation: Formulation) -> Formulation {
    match formulation {
        Formulation::Both => Formulation::U,
        f => f,
    }
}

/// Runs one level on `incr`, returning the compared iterate at every step
/// `m` with `m % stride == 0` (index `m / stride`).
fn run_stored(
    sys: &LevelSystem,
    params: &RunParams,
    incr: &Increments,
    stride: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let grid = TimeGrid::new(params.t_final, incr.steps())?;
    let stepper = Stepper::new(&sys.fem, &sys.noise, grid, params.scheme, seed);
    let mut out = Vec::with_capacity(incr.steps() / stride + 1);
    stepper.run(&sys.u0, incr, stepping_formulation(params.formulation), |s| {
        if s.m % stride == 0 {
            out.push(compared_field(s, params.formulation).to_vec());
        }
    })?;
    Ok(out)
}

/// Pathwise error functional
/// `max_{1<=m<=M} [ |e_m|^2 + sum_{n=1}^m tau |grad e_n|^2 ]`
/// on the reference system, with `e_m = P Y_m - Y_ref(t_m)` and `P` the
/// exact prolongation (identity when the meshes agree).
pub fn error_functional(
    reference: &FemSystem,
    prolong: Option<&CsrMatrix>,
    coarse: &[Vec<f64>],
    fine: &[Vec<f64>],
    tau: f64,
) -> f64 {
    let mut sum = 0.0;
    let mut worst = 0.0_f64;
    for (c, f) in coarse.iter().zip(fine).skip(1) {
        let lifted = match prolong {
            Some(p) => reference.apply_block(p, c),
            None => c.clone(),
        };
        let e: Vec<f64> = lifted.iter().zip(f).map(|(a, b)| a - b).collect();
        sum += tau * reference.h1_seminorm_sq(&e);
        worst = worst.max(reference.l2_norm_sq(&e) + sum);
    }
    worst
}

/// Runs every sample of the ladder: one reference solve per sample on its
/// finest path, then every tested level on coarsenings of the same path.
/// Samples run in parallel; results are in sample order.
pub fn run_ladder(spec: &LadderSpec, params: &RunParams) -> Result<LadderResult> {
    spec.validate()?;
    let reference = LevelSystem::new(spec.reference.n, &params.noise, params.initial)?;
    let mut systems: Vec<(usize, LevelSystem, Option<CsrMatrix>)> = Vec::new();
    for l in &spec.levels {
        if l.n == spec.reference.n || systems.iter().any(|(n, _, _)| *n == l.n) {
            continue;
        }
        let sys = LevelSystem::new(l.n, &params.noise, params.initial)?;
        let p = reference.fem.prolongation_from(&sys.fem)?;
        systems.push((l.n, sys, Some(p)));
    }
    let lookup = |n: usize| -> (&LevelSystem, Option<&CsrMatrix>) {
        if n == spec.reference.n {
            (&reference, None)
        } else {
            let (_, s, p) = systems.iter().find(|(k, _, _)| *k == n).expect("level system");
            (s, p.as_ref())
        }
    };
    let ref_stride = spec.levels.iter().map(|l| spec.reference.m / l.m).fold(0, gcd);
    let num_modes = reference.noise.num_modes();
    let seeds: Vec<u64> = (0..spec.samples).map(|i| sample_seed(spec.master_seed, i as u64)).collect();

    let per_sample: Vec<Result<(Vec<f64>, String)>> = seeds
        .par_iter()
        .map(|&seed| {
            let (fine, checksum) = sample_increments(params, num_modes, spec.reference.m, seed)?;
            let ref_states = run_stored(&reference, params, &fine, ref_stride, seed)?;
            let mut errs = Vec::with_capacity(spec.levels.len());
            for l in &spec.levels {
                let (sys, prolong) = lookup(l.n);
                let incr = coarsen(&fine, l.m)?;
                let states = run_stored(sys, params, &incr, 1, seed)?;
                let step = spec.reference.m / l.m / ref_stride;
                let fine_at: Vec<Vec<f64>> = ref_states.iter().step_by(step).cloned().collect();
                let tau = params.t_final / l.m as f64;
                errs.push(error_functional(&reference.fem, prolong, &states, &fine_at, tau));
            }
            Ok((errs, checksum))
        })
        .collect();

    let mut records: Vec<ErrorRecord> = spec
        .levels
        .iter()
        .map(|&l| ErrorRecord {
            level: l,
            tau: params.t_final / l.m as f64,
            h: std::f64::consts::SQRT_2 / l.n as f64,
            errors: Vec::with_capacity(spec.samples),
        })
        .collect();
    let mut path_checksums = Vec::with_capacity(spec.samples);
    for r in per_sample {
        let (errs, checksum) = r?;
        for (rec, e) in records.iter_mut().zip(errs) {
            rec.errors.push(e);
        }
        path_checksums.push(checksum);
    }
    Ok(LadderResult { spec: spec.clone(), params: *params, records, seeds, path_checksums })
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Empirical quantile, linear interpolation between order statistics
/// (Hyndman–Fan type 7).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub level: Level,
    pub tau: f64,
    pub h: f64,
    pub mean: f64,
    pub q50: f64,
    pub q90: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    /// `mean`, `q50` or `q90`.
    pub statistic: &'static str,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl Fit {
    /// Rate in the unsquared norm.
    pub fn alpha(&self) -> f64 {
        self.slope / 2.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateTable {
    pub mode: LadderMode,
    pub rows: Vec<RateRow>,
    pub fits: Vec<Fit>,
    /// Fits with the coarsest level dropped (empty with fewer than 4 levels).
    pub fits_without_coarsest: Vec<Fit>,
}

impl RateTable {
    pub fn fit(&self, statistic: &str) -> Option<&Fit> {
        self.fits.iter().find(|f| f.statistic == statistic)
    }

    /// Change of `alpha` when the coarsest level is dropped.
    pub fn alpha_shift(&self, statistic: &str) -> Option<f64> {
        let a = self.fit(statistic)?;
        let b = self.fits_without_coarsest.iter().find(|f| f.statistic == statistic)?;
        Some((a.alpha() - b.alpha()).abs())
    }
}

/// Abscissa of the rate fit: `tau` for time ladders, `h` otherwise.
pub fn fit_abscissa(mode: LadderMode, row_tau: f64, row_h: f64) -> f64 {
    match mode {
        LadderMode::Time => row_tau,
        LadderMode::Space | LadderMode::Joint => row_h,
    }
}

fn fits_of(mode: LadderMode, rows: &[RateRow]) -> Vec<Fit> {
    let x: Vec<f64> = rows.iter().map(|r| fit_abscissa(mode, r.tau, r.h).ln()).collect();
    let stats: [(&'static str, fn(&RateRow) -> f64); 3] =
        [("mean", |r| r.mean), ("q50", |r| r.q50), ("q90", |r| r.q90)];
    stats
        .iter()
        .filter_map(|(name, get)| {
            let y: Vec<f64> = rows.iter().map(|r| get(r).ln()).collect();
            fit_line(&x, &y).map(|(slope, intercept, r2)| Fit { statistic: name, slope, intercept, r2 })
        })
        .collect()
}

/// Per-level statistics and least-squares log-log fits.
pub fn rate_table(result: &LadderResult) -> Result<RateTable> {
    if result.records.len() < 3 {
        return Err(Error::invalid(format!(
            "rate fit needs at least 3 levels, got {}",
            result.records.len()
        )));
    }
    let rows: Vec<RateRow> = result
        .records
        .iter()
        .map(|r| RateRow {
            level: r.level,
            tau: r.tau,
            h: r.h,
            mean: mean(&r.errors),
            q50: quantile(&r.errors, 0.5),
            q90: quantile(&r.errors, 0.9),
            samples: r.errors.len(),
        })
        .collect();
    let mode = result.spec.mode;
    let fits = fits_of(mode, &rows);
    let fits_without_coarsest = if rows.len() >= 4 { fits_of(mode, &rows[1..]) } else { Vec::new() };
    Ok(RateTable { mode, rows, fits, fits_without_coarsest })
}

fn check_mode(result: &LadderResult, mode: LadderMode, min_samples: usize) -> Result<()> {
    if result.spec.mode != mode {
        return Err(Error::invalid(format!("expected a {} ladder", mode.name())));
    }
    if result.spec.samples < min_samples {
        return Err(Error::invalid(format!(
            "rate study needs at least {min_samples} samples, got {}",
            result.spec.samples
        )));
    }
    Ok(())
}

/// Time ladder on a fixed mesh. `formulation` picks the compared iterates;
/// convection is taken from `params`.
pub fn temporal_rate_study(spec: &LadderSpec, params: &RunParams) -> Result<(LadderResult, RateTable)> {
    if spec.levels.len() < 3 {
        return Err(Error::invalid("temporal study needs at least 3 levels"));
    }
    let result = run_ladder(spec, params)?;
    check_mode(&result, LadderMode::Time, 20)?;
    let table = rate_table(&result)?;
    Ok((result, table))
}

/// Mesh ladder at a fixed fine time step.
pub fn spatial_rate_study(spec: &LadderSpec, params: &RunParams) -> Result<(LadderResult, RateTable)> {
    if spec.levels.len() < 3 {
        return Err(Error::invalid("spatial study needs at least 3 levels"));
    }
    let result = run_ladder(spec, params)?;
    let min = if params.noise.is_deterministic() { 1 } else { 20 };
    check_mode(&result, LadderMode::Space, min)?;
    let table = rate_table(&result)?;
    Ok((result, table))
}

/// Stochastic Stokes control: the time ladder with convection switched off.
pub fn stokes_rate_study(spec: &LadderSpec, params: &RunParams) -> Result<(LadderResult, RateTable)> {
    let mut p = *params;
    p.scheme.convection = Convection::Off;
    temporal_rate_study(spec, &p)
}

/// Threshold scale `tau^{2 alpha}` (time ladders), `h^{2 alpha}` (space
/// ladders) or `tau^{2 alpha} + h^{2 alpha}` (joint), to be multiplied by `xi`.
pub fn threshold_unit(mode: LadderMode, tau: f64, h: f64, alpha: f64) -> f64 {
    match mode {
        LadderMode::Time => tau.powf(2.0 * alpha),
        LadderMode::Space => h.powf(2.0 * alpha),
        LadderMode::Joint => tau.powf(2.0 * alpha) + h.powf(2.0 * alpha),
    }
}

/// `xi` placing the coarsest level's threshold at its median error.
pub fn calibrate_xi(records: &[ErrorRecord], mode: LadderMode, alpha: f64) -> f64 {
    let c = &records[0];
    quantile(&c.errors, 0.5) / threshold_unit(mode, c.tau, c.h, alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailRow {
    pub level: Level,
    pub threshold: f64,
    pub exceed: usize,
    pub samples: usize,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub xi: f64,
    pub alpha: f64,
    pub rows: Vec<TailRow>,
    /// The finest level's upper Wilson bound lies below the coarsest level's frequency.
    pub decreasing_to_zero: bool,
    /// Frequencies strictly decrease until they reach zero, and the finest
    /// is below the coarsest.
    pub strictly_decreasing: bool,
}

/// Empirical `P[E > xi * threshold_unit]` per level.
pub fn probability_tail_report(records: &[ErrorRecord], mode: LadderMode, xi: f64, alpha: f64) -> TailReport {
    let rows: Vec<TailRow> = records
        .iter()
        .map(|r| {
            let threshold = xi * threshold_unit(mode, r.tau, r.h, alpha);
            let exceed = r.errors.iter().filter(|&&e| e > threshold).count();
            let n = r.errors.len();
            let (ci_low, ci_high) = wilson_interval(exceed, n, Z95);
            TailRow {
                level: r.level,
                threshold,
                exceed,
                samples: n,
                frequency: if n == 0 { 0.0 } else { exceed as f64 / n as f64 },
                ci_low,
                ci_high,
            }
        })
        .collect();
    let decreasing_to_zero = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() > 1 => b.ci_high < a.frequency,
        _ => false,
    };
    let strictly_decreasing = rows.len() > 1
        && rows.windows(2).all(|w| w[1].frequency < w[0].frequency || (w[0].frequency == 0.0 && w[1].frequency == 0.0))
        && rows.last().unwrap().frequency < rows[0].frequency;
    TailReport { xi, alpha, rows, decreasing_to_zero, strictly_decreasing }
}

/// One simulated trajectory's recorded diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRun {
    pub seed: u64,
    pub checksum: String,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Diagnostics of `samples` independent trajectories on one level, for
/// stopping statistics. Sample `i` uses `sample_seed(master_seed, i)`.
pub fn simulate_samples(
    n: usize,
    m: usize,
    params: &RunParams,
    samples: usize,
    master_seed: u64,
) -> Result<Vec<SampleRun>> {
    if n > DEFAULT_LIMITS.n || m > DEFAULT_LIMITS.m {
        return Err(Error::Config {
            line: 0,
            message: format!("n={n} M={m} exceeds the resource limit"),
        });
    }
    let sys = LevelSystem::new(n, &params.noise, params.initial)?;
    let grid = TimeGrid::new(params.t_final, m)?;
    let seeds: Vec<u64> = (0..samples).map(|i| sample_seed(master_seed, i as u64)).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let (incr, checksum) = sample_increments(params, sys.noise.num_modes(), m, seed)?;
            let stepper = Stepper::new(&sys.fem, &sys.noise, grid, params.scheme, seed);
            let mut diags = Vec::with_capacity(m + 1);
            stepper.run(&sys.u0, &incr, params.formulation, |s| diags.push(s.diagnostics.clone()))?;
            Ok(SampleRun { seed, checksum, diagnostics: diags })
        })
        .collect()
}
