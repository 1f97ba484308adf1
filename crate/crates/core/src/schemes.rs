//! Semi-implicit Euler time stepping for the velocity `U` and for the
//! transformed unknown `Y = U - Pi_h[Phi W]`.
//!
//! One step solves, for all velocity test functions `phi` and pressures `R`,
//!
//! ```text
//! <U_m, phi> + mu tau <grad U_m, grad phi>
//!     + tau <(grad U_m) U_{m-1} + theta (div U_{m-1}) U_m, phi>
//!     - tau <P_m, div phi> = <U_{m-1}, phi> + <Phi Delta_m W, phi>
//! <div U_m, R> = 0,   int P_m = 0
//! ```
//!
//! with `theta = 1/2`. The `Y` step is the same system after substituting
//! `U = Y + Pi_h[Phi W]`, so both runs agree up to solver rounding and share
//! one pressure.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::fem::{dot, DiscreteField, FemSystem};
use crate::noise::{DiscreteNoise, Increments};
use crate::sparse::{gmres, CsrMatrix, LuFactor};

/// Equidistant grid `t_m = m tau` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    steps: usize,
    tau: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::invalid(format!("time horizon must be positive, got {t_final}")));
        }
        Ok(TimeGrid {
            t_final,
            steps,
            tau: t_final / steps as f64,
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `t_m`; `t(M)` is exactly `T`.
    pub fn t(&self, m: usize) -> f64 {
        if m == self.steps {
            self.t_final
        } else {
            m as f64 * self.tau
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Formulation {
    /// Velocity scheme.
    U,
    /// Transformed scheme.
    Y,
    /// Both, stepped side by side, recording the transform gap.
    Both,
}

/// Treatment of the convective term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convection {
    /// `(grad U_m) U_{m-1} + 1/2 (div U_{m-1}) U_m`: skew-symmetric.
    Skew,
    /// `(grad U_m) U_{m-1} + (div U_{m-1}) U_m`: not skew; the energy
    /// identity fails by `1/2 <div U_{m-1}, |U_m|^2>`.
    Unsymmetrised,
    /// Stokes equations.
    Off,
}

impl Convection {
    fn theta(self) -> Option<f64> {
        match self {
            Convection::Skew => Some(0.5),
            Convection::Unsymmetrised => Some(1.0),
            Convection::Off => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeParams {
    pub mu: f64,
    pub convection: Convection,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            mu: 1.0,
            convection: Convection::Skew,
        }
    }
}

/// Scalars recorded after every step (and for the initial state).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub m: usize,
    pub t: f64,
    /// `||U_m||^2`.
    pub energy: f64,
    /// `||grad U_m||^2`.
    pub enstrophy: f64,
    /// `||A_h U_m||^2`.
    pub stokes_norm_sq: f64,
    /// Largest normalised `|<div V, R_k>|` over the iterates of this step.
    pub div_residual: f64,
    /// `|1/2 (|U_m|^2 - |U_{m-1}|^2 + |U_m - U_{m-1}|^2) + mu tau |grad U_m|^2
    /// - <Phi Delta_m W, U_m>|`.
    pub energy_identity_residual: f64,
    /// `||U_m - Y_m - Pi_h[Phi W(t_m)]||` when both schemes are run.
    pub transform_gap: Option<f64>,
    /// `||Phi W(t_m)||_{W^{2,2}}`.
    pub noise_w22: f64,
    /// `tau ||grad P_m||^2`.
    pub pressure_grad_tau: f64,
    /// `int P_m`.
    pub pressure_mean: f64,
}

#[derive(Clone, Debug)]
pub struct TrajectoryState {
    pub m: usize,
    pub u: DiscreteField,
    pub y: DiscreteField,
    pub p: DiscreteField,
    pub diagnostics: StepDiagnostics,
}

/// Steps one trajectory on a fixed system, grid and noise discretisation.
pub struct Stepper<'a> {
    fem: &'a FemSystem,
    noise: &'a DiscreteNoise,
    grid: TimeGrid,
    params: SchemeParams,
    seed: u64,
    /// LU of a recent step matrix, used to precondition GMRES. Refreshed
    /// when it stops being effective; without convection it is exact.
    precond: RefCell<Option<LuFactor>>,
}

const RESIDUAL_LIMIT: f64 = 1e-8;
const GMRES_TOL: f64 = 1e-13;
const GMRES_RESTART: usize = 40;
const GMRES_MAX_ITER: usize = 40;
/// Iteration count above which the preconditioner is refactored.
const GMRES_REFRESH: usize = 8;

impl<'a> Stepper<'a> {
    /// `seed` only labels step errors.
    pub fn new(fem: &'a FemSystem, noise: &'a DiscreteNoise, grid: TimeGrid, params: SchemeParams, seed: u64) -> Self {
        Stepper {
            fem,
            noise,
            grid,
            params,
            seed,
            precond: RefCell::new(None),
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// `U_0 = Y_0 = u0` (since `W(0) = 0`), `P_0 = 0`.
    pub fn initial_state(&self, u0: &DiscreteField) -> TrajectoryState {
        let u = &u0.coeffs;
        let diagnostics = StepDiagnostics {
            m: 0,
            t: 0.0,
            energy: self.fem.l2_norm_sq(u),
            enstrophy: self.fem.h1_seminorm_sq(u),
            stokes_norm_sq: self.fem.l2_norm_sq(&self.fem.stokes_operator(u)),
            div_residual: self.fem.divergence_residual(u),
            ..Default::default()
        };
        TrajectoryState {
            m: 0,
            u: u0.clone(),
            y: u0.clone(),
            p: DiscreteField::pressure(vec![0.0; self.fem.pressure_dofs()]),
            diagnostics,
        }
    }

    fn step_error(&self, m: usize, residual: f64, detail: impl Into<String>) -> Error {
        Error::Step {
            step: m,
            seed: self.seed,
            residual,
            detail: detail.into(),
        }
    }

    /// Solves the saddle system with velocity block `M + mu tau K + tau C(w)`
    /// for `(velocity, P_m)`.
    fn solve(&self, m: usize, w: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fem = self.fem;
        let tau = self.grid.tau;
        let conv: Option<CsrMatrix> = self.params.convection.theta().map(|th| fem.convection_matrix(w, th));
        let vals = fem.saddle_values(1.0, self.params.mu * tau, conv.as_ref().map(|c| (c, tau)));
        let factor = |v: &[f64]| fem.factor_saddle(v).map_err(|e| self.step_error(m, f64::NAN, e.to_string()));
        let nu = fem.velocity_dofs();
        let mut b = vec![0.0; fem.saddle_dim()];
        b[..nu].copy_from_slice(rhs);
        let mut cache = self.precond.borrow_mut();
        let mut fresh = false;
        if cache.is_none() {
            *cache = Some(factor(&vals)?);
            fresh = true;
        }
        let attempt = |lu: &LuFactor| {
            gmres(
                |v| fem.saddle_mul(&vals, v),
                |r| lu.solve_in_place(r),
                &b,
                GMRES_TOL,
                GMRES_RESTART,
                GMRES_MAX_ITER,
            )
        };
        let (mut x, mut report) = attempt(cache.as_ref().expect("factor present"));
        if !fresh && !(report.relative_residual <= GMRES_TOL) {
            *cache = Some(factor(&vals)?);
            (x, report) = attempt(cache.as_ref().expect("factor present"));
        } else if !fresh && report.iterations > GMRES_REFRESH {
            *cache = Some(factor(&vals)?);
        }
        let residual = report.relative_residual;
        if !(residual <= RESIDUAL_LIMIT) {
            return Err(self.step_error(m, residual, "saddle solve inaccurate or singular"));
        }
        let p: Vec<f64> = x[nu..nu + fem.pressure_dofs()].iter().map(|r| -r / tau).collect();
        x.truncate(nu);
        Ok((x, p))
    }

    fn finish(
        &self,
        m: usize,
        prev_u: &[f64],
        u: Vec<f64>,
        y: Vec<f64>,
        p: Vec<f64>,
        forcing: &[f64],
        w22: f64,
    ) -> TrajectoryState {
        let fem = self.fem;
        let tau = self.grid.tau;
        let energy = fem.l2_norm_sq(&u);
        let enstrophy = fem.h1_seminorm_sq(&u);
        let diff: Vec<f64> = u.iter().zip(prev_u).map(|(a, b)| a - b).collect();
        let identity = 0.5 * (energy - fem.l2_norm_sq(prev_u) + fem.l2_norm_sq(&diff)) + self.params.mu * tau * enstrophy
            - dot(forcing, &u);
        let diagnostics = StepDiagnostics {
            m,
            t: self.grid.t(m),
            energy,
            enstrophy,
            stokes_norm_sq: fem.l2_norm_sq(&fem.stokes_operator(&u)),
            div_residual: fem.divergence_residual(&u).max(fem.divergence_residual(&y)),
            energy_identity_residual: identity.abs(),
            transform_gap: None,
            noise_w22: w22,
            pressure_grad_tau: tau * fem.pressure_grad_norm_sq(&p),
            pressure_mean: fem.pressure_mean(&p),
        };
        TrajectoryState {
            m,
            u: DiscreteField::velocity(u),
            y: DiscreteField::velocity(y),
            p: DiscreteField::pressure(p),
            diagnostics,
        }
    }

    /// One step of the velocity scheme from `prev` (at `m - 1`).
    pub fn step_u(&self, prev: &TrajectoryState, incr: &Increments) -> Result<TrajectoryState> {
        let m = prev.m + 1;
        let forcing = self.noise.forcing(&incr.increment(m));
        let mut rhs = self.fem.apply_mass(&prev.u.coeffs);
        add_to(&mut rhs, &forcing, 1.0);
        let (u, p) = self.solve(m, &prev.u.coeffs, &rhs)?;
        let (g, w22) = self.noise.eval_phi_w(&incr.w_at(m));
        let y = sub(&u, &g.coeffs);
        Ok(self.finish(m, &prev.u.coeffs, u, y, p, &forcing, w22))
    }

    /// One step of the transformed scheme from `prev` (at `m - 1`).
    pub fn step_y(&self, prev: &TrajectoryState, incr: &Increments) -> Result<TrajectoryState> {
        let m = prev.m + 1;
        let tau = self.grid.tau;
        let fem = self.fem;
        let (g_prev, _) = self.noise.eval_phi_w(&incr.w_at(m - 1));
        let (g, w22) = self.noise.eval_phi_w(&incr.w_at(m));
        let (g_prev, g) = (g_prev.coeffs, g.coeffs);
        // transport velocity U_{m-1} = Y_{m-1} + G_{m-1}
        let w = add(&prev.y.coeffs, &g_prev);
        let forcing = self.noise.forcing(&incr.increment(m));

        let mut rhs = fem.apply_mass(&prev.y.coeffs);
        // M G_{m-1} + Phi Delta W - M G_m: a discrete gradient, kept so that
        // the pressure equals that of the velocity scheme.
        add_to(&mut rhs, &fem.apply_mass(&sub(&g_prev, &g)), 1.0);
        add_to(&mut rhs, &forcing, 1.0);
        add_to(&mut rhs, &fem.apply_stiffness(&g), -self.params.mu * tau);
        if let Some(th) = self.params.convection.theta() {
            let c = fem.convection_matrix(&w, th);
            add_to(&mut rhs, &fem.apply_block(&c, &g), -tau);
        }
        let (y, p) = self.solve(m, &w, &rhs)?;
        let u = add(&y, &g);
        let prev_u = add(&prev.y.coeffs, &g_prev);
        Ok(self.finish(m, &prev_u, u, y, p, &forcing, w22))
    }

    /// Runs `m = 1..=M`, calling `visit` on the initial state and after every
    /// step. With [`Formulation::Both`] the reported state is the velocity
    /// run's, with `transform_gap` filled in.
    pub fn run(
        &self,
        u0: &DiscreteField,
        incr: &Increments,
        formulation: Formulation,
        mut visit: impl FnMut(&TrajectoryState),
    ) -> Result<()> {
        if incr.steps() != self.grid.steps {
            return Err(Error::invalid(format!(
                "increments have {} steps, grid has {}",
                incr.steps(),
                self.grid.steps
            )));
        }
        if incr.num_modes() != self.noise.num_modes() {
            return Err(Error::invalid("increment and noise mode counts differ"));
        }
        let mut state = self.initial_state(u0);
        if formulation == Formulation::Both {
            state.diagnostics.transform_gap = Some(0.0);
        }
        visit(&state);
        let mut other = state.clone();
        for _ in 0..self.grid.steps {
            state = match formulation {
                Formulation::U => self.step_u(&state, incr)?,
                Formulation::Y => self.step_y(&state, incr)?,
                Formulation::Both => {
                    let mut a = self.step_u(&state, incr)?;
                    other = self.step_y(&other, incr)?;
                    // U^u - (Y^y + G) = a.u - other.u
                    let gap = sub(&a.u.coeffs, &other.u.coeffs);
                    a.diagnostics.transform_gap = Some(self.fem.l2_norm_sq(&gap).sqrt());
                    a.diagnostics.div_residual = a.diagnostics.div_residual.max(other.diagnostics.div_residual);
                    a
                }
            };
            visit(&state);
        }
        Ok(())
    }
}

/// Collects the whole trajectory (initial state first).
pub fn run_trajectory(
    fem: &FemSystem,
    noise: &DiscreteNoise,
    grid: TimeGrid,
    params: SchemeParams,
    u0: &DiscreteField,
    incr: &Increments,
    formulation: Formulation,
) -> Result<Vec<TrajectoryState>> {
    let mut out = Vec::with_capacity(grid.steps() + 1);
    Stepper::new(fem, noise, grid, params, 0).run(u0, incr, formulation, |s| out.push(s.clone()))?;
    Ok(out)
}

/// `P_m` and `tau ||grad P_m||^2` of a completed step.
pub fn recover_pressure(state: &TrajectoryState) -> (DiscreteField, f64) {
    (state.p.clone(), state.diagnostics.pressure_grad_tau)
}

/// Default initial datum: `Pi_h curl(sin^2(pi x) sin^2(pi y))`, scaled to
/// unit L2 norm before projection.
pub fn default_initial_velocity(fem: &FemSystem) -> DiscreteField {
    use std::f64::consts::PI;
    let c = 4.0 / (PI * 3f64.sqrt() * 2f64.sqrt());
    fem.project_div_free(|x| {
        let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
        [
            -c * PI * sx * sx * (2.0 * PI * x[1]).sin(),
            c * PI * (2.0 * PI * x[0]).sin() * sy * sy,
        ]
    })
}

pub(crate) fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn add_to(a: &mut [f64], b: &[f64], s: f64) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += s * y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::build_mesh;
    use crate::noise::{build_noise, sample_path};

    fn setup(n: usize) -> (FemSystem, DiscreteNoise) {
        let fem = assemble(build_mesh(n).unwrap(), (2, 1)).unwrap();
        let noise = DiscreteNoise::new(&build_noise(2, 4.5, 0.5).unwrap(), &fem);
        (fem, noise)
    }

    #[test]
    fn time_grid_ends_exactly_at_horizon() {
        let g = TimeGrid::new(0.1, 3).unwrap();
        assert_eq!(g.t(3), 0.1);
        assert_eq!(g.t(0), 0.0);
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(-1.0, 2).is_err());
    }

    #[test]
    fn zero_data_stays_zero() {
        let (fem, noise) = setup(2);
        let grid = TimeGrid::new(0.1, 4).unwrap();
        let incr = Increments::zeros(noise.num_modes(), 4, 0.1);
        let u0 = DiscreteField::velocity(vec![0.0; fem.velocity_dofs()]);
        for f in [Formulation::U, Formulation::Y] {
            let tr = run_trajectory(&fem, &noise, grid, SchemeParams::default(), &u0, &incr, f).unwrap();
            for s in &tr {
                assert!(s.u.coeffs.iter().all(|&v| v == 0.0));
                assert!(s.p.coeffs.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn deterministic_energy_decreases() {
        let (fem, noise) = setup(4);
        let grid = TimeGrid::new(0.1, 8).unwrap();
        let incr = Increments::zeros(noise.num_modes(), 8, 0.1);
        let u0 = default_initial_velocity(&fem);
        let tr = run_trajectory(&fem, &noise, grid, SchemeParams::default(), &u0, &incr, Formulation::U).unwrap();
        for w in tr.windows(2) {
            assert!(w[1].diagnostics.energy < w[0].diagnostics.energy);
        }
    }

    #[test]
    fn both_formulations_agree_on_a_noisy_path() {
        let (fem, noise) = setup(4);
        let grid = TimeGrid::new(0.1, 8).unwrap();
        let path = sample_path(noise.num_modes(), 8, 0.1, 3).unwrap();
        let incr = path.coarsen(8).unwrap();
        let u0 = default_initial_velocity(&fem);
        let tr = run_trajectory(&fem, &noise, grid, SchemeParams::default(), &u0, &incr, Formulation::Both).unwrap();
        for s in &tr {
            assert!(s.diagnostics.transform_gap.unwrap() <= 1e-9);
            assert!(s.diagnostics.div_residual <= 1e-9);
            assert!(s.diagnostics.pressure_mean.abs() <= 1e-12);
        }
    }
}
