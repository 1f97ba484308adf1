use snsfem::experiments::{
    error_functional, probability_tail_report, rate_table, run_ladder, spatial_rate_study, temporal_rate_study,
    InitialDatum, LadderMode, LadderSpec, NoiseParams, RunParams,
};
use snsfem::fem::FemSystem;
use snsfem::mesh::build_mesh;
use snsfem::noise::sample_path;
use snsfem::schemes::{Convection, Formulation, SchemeParams};

fn params(scale: f64) -> RunParams {
    RunParams {
        t_final: 0.1,
        scheme: SchemeParams { mu: 1.0, convection: Convection::Skew },
        noise: NoiseParams { j_max: 2, decay_r: 4.5, scale },
        formulation: Formulation::Y,
        initial: InitialDatum::Vortex,
    }
}

#[test]
fn error_functional_matches_a_dense_running_maximum() {
    let fem = FemSystem::new(build_mesh(3).unwrap(), (2, 1)).unwrap();
    let nu = fem.velocity_dofs();
    let mass = fem.block_matrix(fem.scalar_mass()).to_dense();
    let stiff = fem.block_matrix(fem.scalar_stiffness()).to_dense();
    let quad = |a: &Vec<Vec<f64>>, v: &[f64]| -> f64 {
        (0..nu).map(|i| v[i] * (0..nu).map(|j| a[i][j] * v[j]).sum::<f64>()).sum()
    };
    let field = |k: usize, shift: f64| -> Vec<f64> { (0..nu).map(|i| ((i * 7 + k * 13) % 17) as f64 * 0.01 + shift).collect() };
    let coarse: Vec<Vec<f64>> = (0..6).map(|k| field(k, 0.0)).collect();
    let fine: Vec<Vec<f64>> = (0..6).map(|k| field(k + 1, 0.002 * k as f64)).collect();
    let tau = 0.02;
    let mut expect: f64 = 0.0;
    for m in 1..6 {
        let e = |n: usize| -> Vec<f64> { coarse[n].iter().zip(&fine[n]).map(|(a, b)| a - b).collect() };
        let dissipation: f64 = (1..=m).map(|n| tau * quad(&stiff, &e(n))).sum();
        expect = expect.max(quad(&mass, &e(m)) + dissipation);
    }
    let got = error_functional(&fem, None, &coarse, &fine, tau);
    assert!((got - expect).abs() <= 1e-12 * expect, "{got} vs {expect}");
    assert_eq!(error_functional(&fem, None, &coarse, &coarse, tau), 0.0);
}

#[test]
fn levels_share_the_reference_brownian_path() {
    let spec = LadderSpec::time(4, &[4, 8, 16], 32, 3, 99);
    let p = params(0.5);
    let result = run_ladder(&spec, &p).unwrap();
    for (seed, checksum) in result.seeds.iter().zip(&result.path_checksums) {
        let path = sample_path(4, 32, 0.1, *seed).unwrap();
        assert_eq!(&path.checksum(), checksum);
    }
    let again = run_ladder(&spec, &p).unwrap();
    for (a, b) in result.records.iter().zip(&again.records) {
        assert!(a.errors.iter().zip(&b.errors).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn every_sample_improves_from_coarsest_to_finest() {
    let spec = LadderSpec::time(4, &[4, 8, 16], 64, 4, 7);
    let result = run_ladder(&spec, &params(0.5)).unwrap();
    let (first, last) = (&result.records[0], result.records.last().unwrap());
    for (i, (c, f)) in first.errors.iter().zip(&last.errors).enumerate() {
        assert!(f < c, "sample {i}: {f} !< {c}");
    }
    let table = rate_table(&result).unwrap();
    let slope = table.fit("mean").unwrap().slope;
    assert!((1.5..=2.6).contains(&slope), "slope {slope}");
}

#[test]
fn deterministic_spatial_ladder_converges() {
    let spec = LadderSpec::space(&[2, 4, 8], 16, 8, 1, 0);
    let (_, table) = spatial_rate_study(&spec, &params(0.0)).unwrap();
    let slope = table.fit("mean").unwrap().slope;
    assert!(slope >= 1.5, "slope {slope}");
    assert!(table.rows.windows(2).all(|w| w[1].mean < w[0].mean));
}

#[test]
fn rate_studies_reject_too_few_samples() {
    let spec = LadderSpec::time(4, &[4, 8, 16], 32, 5, 0);
    assert!(temporal_rate_study(&spec, &params(0.5)).is_err());
    let spec = LadderSpec::space(&[2, 4, 8], 16, 8, 5, 0);
    assert!(spatial_rate_study(&spec, &params(0.5)).is_err());
}

#[test]
fn wider_tail_thresholds_never_raise_exceedance() {
    let spec = LadderSpec::time(4, &[4, 8, 16], 64, 6, 13);
    let result = run_ladder(&spec, &params(1.0)).unwrap();
    let mut xi = 1e-4;
    let mut prev = probability_tail_report(&result.records, LadderMode::Time, xi, 0.9);
    for _ in 0..20 {
        xi *= 2.0;
        let next = probability_tail_report(&result.records, LadderMode::Time, xi, 0.9);
        for (a, b) in prev.rows.iter().zip(&next.rows) {
            assert!(b.frequency <= a.frequency);
            assert!(b.ci_low <= a.ci_low + 1e-15);
        }
        prev = next;
    }
    assert!(prev.rows.iter().all(|r| r.frequency == 0.0));
}
