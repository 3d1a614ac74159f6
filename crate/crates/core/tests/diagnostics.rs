use proptest::prelude::*;
use voronoi_mcmc::diagnostics::{
    drift_map, jacobian_det_check, js_divergence, toy_experiment, EmpiricalDistribution, ToyGrid, ToyProbs,
};
use voronoi_mcmc::{Algorithm, RefractionForm, SamplerConfig, VoronoiMeasureSpec};

/// Direct evaluation of the Jensen-Shannon divergence in natural log.
fn js_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

fn config(alg: Algorithm, eps: f64, burn_in: usize, n_samples: usize) -> SamplerConfig {
    let mut c = SamplerConfig::new(alg, eps);
    c.disc_fraction = 0.1;
    c.burn_in = burn_in;
    c.n_samples = n_samples;
    c.mucola_metropolis = true;
    c
}

#[test]
fn js_reference_values() {
    let p = [0.75, 0.25];
    let q = [0.25, 0.75];
    // 0.75 ln 1.5 + 0.25 ln 0.5, evaluated to 30 digits.
    let closed = 0.130_812_035_941_136_96;
    assert!((js_oracle(&p, &q) - closed).abs() < 1e-15);
    assert!((js_divergence(&p, &q).unwrap() - closed).abs() < 1e-15);
    assert!((js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
    assert!(js_divergence(&p, &[1.0]).is_err());
}

#[test]
fn empirical_distribution_examples() {
    let one = EmpiricalDistribution::from_cells([vec![0]]).unwrap();
    assert_eq!(one.prob(&[0]), 1.0);
    let even = EmpiricalDistribution::from_cells((0..400).map(|i| vec![i % 4])).unwrap();
    assert_eq!(even.to_table(4, 1).unwrap(), vec![0.25; 4]);
    assert!(EmpiricalDistribution::from_cells(Vec::<Vec<usize>>::new()).is_err());
}

#[test]
fn leapfrog_drift_has_unit_jacobian() {
    let spec = VoronoiMeasureSpec::toy(&[0.7, 0.1, 0.1, 0.1], 1.0).unwrap();
    let map = drift_map(&spec, 0.1, RefractionForm::UnitDirection);
    let det = jacobian_det_check(&map, &[0.8, 1.1, 0.3, -0.2], 1e-6, 0).unwrap();
    assert!((det - 1.0).abs() < 1e-6);
    // A base point whose drift crosses a facet is rejected when no event is expected.
    assert!(jacobian_det_check(&map, &[0.1, 1.0, -3.0, 0.0], 1e-6, 0).is_err());
}

#[test]
fn uniform_limit_is_recovered_by_every_sampler() {
    // Projected Langevin only leaves a center when eps * |r| exceeds the
    // distance to the facet, so the step is sized for it to move at all.
    let samplers = [Algorithm::Svs, Algorithm::Hmc, Algorithm::Langevin, Algorithm::ProjectedLangevin]
        .into_iter()
        .map(|alg| config(alg, 0.5, 500, 10_000))
        .collect();
    let grid = ToyGrid {
        samplers,
        temperatures: vec![1e9],
        dims: vec![2],
        probs: ToyProbs::Peaked(0.7),
        seeds: (0..20).collect(),
    };
    let report = toy_experiment(&grid).unwrap();
    for alg in ["svs", "hmc", "langevin", "projected-langevin"] {
        let m = report.mean(alg, 1e9, 2).unwrap();
        assert!(m < 0.02, "{alg}: {m}");
    }
}

#[test]
fn svs_beats_projected_langevin_at_low_temperature() {
    let grid = ToyGrid {
        samplers: vec![
            config(Algorithm::Svs, 0.1, 500, 200),
            config(Algorithm::ProjectedLangevin, 0.1, 500, 200),
        ],
        temperatures: vec![0.25],
        dims: vec![2],
        probs: ToyProbs::Explicit(vec![0.7, 0.1, 0.1, 0.1]),
        seeds: (0..20).collect(),
    };
    let report = toy_experiment(&grid).unwrap();
    let svs = report.mean("svs", 0.25, 2).unwrap();
    let pl = report.mean("projected-langevin", 0.25, 2).unwrap();
    assert!(svs < pl, "svs {svs} vs projected-langevin {pl}");
}

#[test]
fn hypercube_divergence_grows_with_dimension() {
    // Per-seed spread at 100 samples is ~0.3, so the ordering in k needs a
    // couple hundred chains per cell to resolve.
    let grid = ToyGrid {
        samplers: vec![
            config(Algorithm::Svs, 0.1, 500, 100),
            config(Algorithm::Hmc, 0.1, 500, 100),
            config(Algorithm::ProjectedLangevin, 0.1, 500, 100),
        ],
        temperatures: vec![0.5],
        dims: vec![2, 3, 4],
        probs: ToyProbs::Peaked(0.7),
        seeds: (0..200).collect(),
    };
    let report = toy_experiment(&grid).unwrap();
    for alg in ["svs", "hmc", "projected-langevin"] {
        let js: Vec<f64> = [2, 3, 4].iter().map(|&k| report.mean(alg, 0.5, k).unwrap()).collect();
        assert!(js[0] < js[1] && js[1] < js[2], "{alg}: {js:?}");
    }
}

#[test]
fn experiment_csv_is_byte_reproducible() {
    let grid = ToyGrid {
        samplers: vec![config(Algorithm::Svs, 0.1, 100, 100), config(Algorithm::Hmc, 0.1, 100, 100)],
        temperatures: vec![0.5, 1.0],
        dims: vec![2, 3],
        probs: ToyProbs::Peaked(0.6),
        seeds: (0..5).collect(),
    };
    let csv = || {
        let mut out = Vec::new();
        toy_experiment(&grid).unwrap().write_csv(&mut out).unwrap();
        out
    };
    let first = csv();
    assert_eq!(first, csv());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("algorithm,temperature,k,seed,n_samples,js\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 2 * 5);
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 5)
        .prop_filter("nonzero mass", |v| v.iter().sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let z: f64 = v.iter().sum();
            v.iter().map(|x| x / z).collect()
        })
}

proptest! {
    #[test]
    fn js_is_symmetric_and_bounded(p in distribution(), q in distribution()) {
        let a = js_divergence(&p, &q).unwrap();
        let b = js_divergence(&q, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-15);
        prop_assert!((0.0..=2f64.ln()).contains(&a));
        prop_assert!((a - js_oracle(&p, &q)).abs() <= 1e-12);
    }
}
