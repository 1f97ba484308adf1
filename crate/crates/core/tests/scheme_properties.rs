use nalgebra::{DMatrix, DVector};
use snsfem::fem::{DiscreteField, FemSystem};
use snsfem::mesh::build_mesh;
use snsfem::noise::{build_noise, sample_path, DiscreteNoise, Increments};
use snsfem::schemes::{
    default_initial_velocity, run_trajectory, Convection, Formulation, SchemeParams, TimeGrid, TrajectoryState,
};

fn system(n: usize) -> FemSystem {
    FemSystem::new(build_mesh(n).unwrap(), (2, 1)).unwrap()
}

fn to_matrix(rows: Vec<Vec<f64>>) -> DMatrix<f64> {
    let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

struct Setup {
    fem: FemSystem,
    noise: DiscreteNoise,
    u0: DiscreteField,
}

fn setup(n: usize, scale: f64) -> Setup {
    let fem = system(n);
    let noise = DiscreteNoise::new(&build_noise(2, 4.5, scale).unwrap(), &fem);
    let u0 = default_initial_velocity(&fem);
    Setup { fem, noise, u0 }
}

fn run(s: &Setup, m: usize, seed: u64, conv: Convection, f: Formulation) -> Vec<TrajectoryState> {
    let incr = sample_path(s.noise.num_modes(), m, 0.1, seed).unwrap().coarsen(m).unwrap();
    run_with(s, m, &incr, conv, f)
}

fn run_with(s: &Setup, m: usize, incr: &Increments, conv: Convection, f: Formulation) -> Vec<TrajectoryState> {
    let grid = TimeGrid::new(0.1, m).unwrap();
    let params = SchemeParams { mu: 1.0, convection: conv };
    run_trajectory(&s.fem, &s.noise, grid, params, &s.u0, incr, f).unwrap()
}

#[test]
fn first_step_matches_dense_saddle_solve() {
    let s = setup(2, 1.0);
    let fem = &s.fem;
    let (tau, mu) = (0.1, 1.0);
    let incr = sample_path(s.noise.num_modes(), 1, tau, 5).unwrap().coarsen(1).unwrap();
    let traj = run_with(&s, 1, &incr, Convection::Skew, Formulation::U);

    let (nu, np) = (fem.velocity_dofs(), fem.pressure_dofs());
    let mass = to_matrix(fem.block_matrix(fem.scalar_mass()).to_dense());
    let stiff = to_matrix(fem.block_matrix(fem.scalar_stiffness()).to_dense());
    let conv = to_matrix(fem.block_matrix(&fem.convection_matrix(&s.u0.coeffs, 0.5)).to_dense());
    let b = to_matrix(fem.divergence().to_dense());
    let a = &mass + &stiff * (mu * tau) + &conv * tau;
    let dim = nu + np + 1;
    let mut full = DMatrix::zeros(dim, dim);
    full.view_mut((0, 0), (nu, nu)).copy_from(&a);
    full.view_mut((0, nu), (nu, np)).copy_from(&b.transpose());
    full.view_mut((nu, 0), (np, nu)).copy_from(&b);
    for (k, &c) in fem.pressure_integrals().iter().enumerate() {
        full[(nu + k, nu + np)] = c;
        full[(nu + np, nu + k)] = c;
    }
    let dw = incr.increment(1);
    let model = s.noise.model();
    let forcing = fem.load_vector(|x| model.phi_w(&dw, x));
    let rhs_u = &mass * DVector::from_column_slice(&s.u0.coeffs) + DVector::from_column_slice(&forcing);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, nu).copy_from(&rhs_u);
    let x = full.lu().solve(&rhs).expect("nonsingular");

    let state = &traj[1];
    for i in 0..nu {
        assert!((state.u.coeffs[i] - x[i]).abs() <= 1e-10, "u[{i}]: {} vs {}", state.u.coeffs[i], x[i]);
    }
    for k in 0..np {
        let p = -x[nu + k] / tau;
        assert!((state.p.coeffs[k] - p).abs() <= 1e-10 * (1.0 + p.abs()), "p[{k}]");
    }
}

/// Smallest eigenpair of the Stokes operator on the discretely solenoidal
/// subspace, from a dense null-space basis of `B`.
fn stokes_ground_state(fem: &FemSystem) -> (f64, Vec<f64>) {
    let b = to_matrix(fem.divergence().to_dense());
    let nu = fem.velocity_dofs();
    let svd = b.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let sv = svd.singular_values;
    let rank = sv.iter().filter(|&&v| v > 1e-10 * sv[0]).count();
    // ker B as the unit eigenspace of I - V_r V_r^T.
    let vr = vt.rows(0, rank).transpose();
    let proj = DMatrix::<f64>::identity(nu, nu) - &vr * vr.transpose();
    let eig = nalgebra::SymmetricEigen::new(proj);
    let cols: Vec<usize> = (0..nu).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let z = DMatrix::from_fn(nu, cols.len(), |i, j| eig.eigenvectors[(i, cols[j])]);
    let mass = to_matrix(fem.block_matrix(fem.scalar_mass()).to_dense());
    let stiff = to_matrix(fem.block_matrix(fem.scalar_stiffness()).to_dense());
    let mr = z.transpose() * &mass * &z;
    let kr = z.transpose() * &stiff * &z;
    let l = mr.cholesky().unwrap().l();
    let linv = l.clone().try_inverse().unwrap();
    let sym = &linv * kr * linv.transpose();
    let sym = (&sym + sym.transpose()) * 0.5;
    let e = nalgebra::SymmetricEigen::new(sym);
    let (i, &lambda) = e
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let y = linv.transpose() * e.eigenvectors.column(i);
    let v = &z * y;
    (lambda, v.iter().copied().collect())
}

#[test]
fn stokes_steps_damp_an_eigenmode_by_the_implicit_euler_factor() {
    let fem = system(2);
    let (lambda, v) = stokes_ground_state(&fem);
    let noise = DiscreteNoise::new(&build_noise(1, 4.5, 1.0).unwrap(), &fem);
    let s = Setup { fem, noise, u0: DiscreteField::velocity(v.clone()) };
    let m = 4;
    let traj = run_with(&s, m, &Increments::zeros(1, m, 0.1), Convection::Off, Formulation::U);
    let tau = 0.1 / m as f64;
    for (k, state) in traj.iter().enumerate() {
        let factor = (1.0 + tau * lambda).powi(-(k as i32));
        for (a, b) in state.u.coeffs.iter().zip(&v) {
            assert!((a - factor * b).abs() <= 1e-8, "step {k}");
        }
        let d = &state.diagnostics;
        assert!((d.enstrophy / d.energy - lambda).abs() <= 1e-8 * lambda);
    }
}

#[test]
fn skew_scheme_satisfies_the_discrete_energy_identity() {
    let s = setup(4, 1.0);
    let traj = run(&s, 8, 11, Convection::Skew, Formulation::U);
    for st in &traj[1..] {
        let d = &st.diagnostics;
        assert!(d.energy_identity_residual <= 1e-9 * d.energy.max(1.0), "step {}: {}", d.m, d.energy_identity_residual);
        assert!(d.div_residual <= 1e-9);
        assert!(d.pressure_mean.abs() <= 1e-12);
    }
    let tau = 0.1 / 8.0;
    let mut lhs = traj.last().unwrap().diagnostics.energy;
    let mut rhs = traj[0].diagnostics.energy;
    let incr = sample_path(s.noise.num_modes(), 8, 0.1, 11).unwrap().coarsen(8).unwrap();
    for w in traj.windows(2) {
        let d: Vec<f64> = w[1].u.coeffs.iter().zip(&w[0].u.coeffs).map(|(a, b)| a - b).collect();
        lhs += s.fem.l2_norm_sq(&d) + 2.0 * tau * w[1].diagnostics.enstrophy;
        let f = s.noise.forcing(&incr.increment(w[1].m));
        rhs += 2.0 * f.iter().zip(&w[1].u.coeffs).map(|(a, b)| a * b).sum::<f64>();
    }
    assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn unsymmetrised_convection_breaks_the_energy_identity() {
    let s = setup(4, 1.0);
    let skew = run(&s, 8, 11, Convection::Skew, Formulation::U);
    let bad = run(&s, 8, 11, Convection::Unsymmetrised, Formulation::U);
    let worst = |t: &[TrajectoryState]| t.iter().map(|s| s.diagnostics.energy_identity_residual).fold(0.0, f64::max);
    let (a, b) = (worst(&skew), worst(&bad));
    assert!(b > 1e-7 && b > 1e4 * a, "skew {a}, unsymmetrised {b}");
}

#[test]
fn transformed_and_velocity_schemes_coincide() {
    let s = setup(4, 1.0);
    for seed in [1, 2, 3] {
        let traj = run(&s, 8, seed, Convection::Skew, Formulation::Both);
        for st in &traj {
            let gap = st.diagnostics.transform_gap.expect("both schemes ran");
            assert!(gap <= 1e-8, "seed {seed} step {}: {gap}", st.m);
        }
    }
    let u = run(&s, 8, 4, Convection::Skew, Formulation::U);
    let y = run(&s, 8, 4, Convection::Skew, Formulation::Y);
    for (a, b) in u.iter().zip(&y) {
        let d: Vec<f64> = a.p.coeffs.iter().zip(&b.p.coeffs).map(|(x, z)| x - z).collect();
        assert!(s.fem.pressure_l2_norm_sq(&d).sqrt() <= 1e-7 * (1.0 + s.fem.pressure_l2_norm_sq(&a.p.coeffs).sqrt()));
    }
}

#[test]
fn pressure_time_integral_is_stable_under_step_refinement() {
    let s = setup(4, 1.0);
    let path = sample_path(s.noise.num_modes(), 16, 0.1, 9).unwrap();
    let total = |m: usize| -> f64 {
        let traj = run_with(&s, m, &path.coarsen(m).unwrap(), Convection::Skew, Formulation::U);
        traj[1..].iter().map(|t| t.diagnostics.pressure_grad_tau).sum()
    };
    let ratio = total(16) / total(8);
    assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn trajectories_are_bitwise_reproducible() {
    let s = setup(4, 1.0);
    let a = run(&s, 8, 21, Convection::Skew, Formulation::Y);
    let b = run(&s, 8, 21, Convection::Skew, Formulation::Y);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.diagnostics, y.diagnostics);
        assert!(x.u.coeffs.iter().zip(&y.u.coeffs).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn energy_decays_without_noise() {
    let s = setup(4, 1.0);
    let traj = run_with(&s, 8, &Increments::zeros(s.noise.num_modes(), 8, 0.1), Convection::Skew, Formulation::U);
    for w in traj.windows(2) {
        assert!(w[1].diagnostics.energy < w[0].diagnostics.energy);
    }
}
