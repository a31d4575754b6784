mod common;

use mfmap::simdata::{
    coarsen_average, coarsen_min, gen_gaussian, gen_scenario, grid_locations, GeneratorSpec, Scenario,
    SequentialGenerator,
};
use mfmap::spatial::MultiFidelityLocations;
use proptest::prelude::*;

fn field(seed: u64, a: usize) -> Vec<f64> {
    let mut rng = common::rng(seed);
    common::uniform_points(&mut rng, a * a, 1).iter().map(|v| 4.0 * v - 2.0).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coarsening_is_linear_and_ordered(
        s1 in any::<u64>(),
        s2 in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        f in prop::sample::select(vec![1usize, 2, 3, 6]),
    ) {
        let (y, z) = (field(s1, 12), field(s2, 12));
        let mix: Vec<f64> = y.iter().zip(&z).map(|(u, v)| a * u + b * v).collect();
        let (cy, cz) = (coarsen_average(&y, 12, f).unwrap(), coarsen_average(&z, 12, f).unwrap());
        for (k, c) in coarsen_average(&mix, 12, f).unwrap().iter().enumerate() {
            prop_assert!((c - (a * cy[k] + b * cz[k])).abs() < 1e-12);
        }
        let my = coarsen_min(&y, 12, f).unwrap();
        prop_assert!(my.iter().zip(&cy).all(|(m, c)| m <= c));
        let upper: Vec<f64> = y.iter().zip(&z).map(|(u, v)| u + v.abs()).collect();
        prop_assert!(my.iter().zip(coarsen_min(&upper, 12, f).unwrap()).all(|(m, u)| *m <= u));
    }

    #[test]
    fn two_step_average_equals_one_step(seed in any::<u64>(), c in -5.0f64..5.0) {
        let y = field(seed, 30);
        let two = coarsen_average(&coarsen_average(&y, 30, 3).unwrap(), 10, 2).unwrap();
        let one = coarsen_average(&y, 30, 6).unwrap();
        prop_assert!(two.iter().zip(&one).all(|(a, b)| (a - b).abs() < 1e-12));
        prop_assert!(coarsen_average(&[c; 36], 6, 2).unwrap().iter().all(|v| (v - c).abs() < 1e-14));
    }
}

#[test]
fn indivisible_grid_is_rejected() {
    assert!(coarsen_average(&field(1, 10), 10, 3).is_err());
    assert!(coarsen_min(&field(1, 10), 10, 4).is_err());
}

#[test]
fn exact_gaussian_has_unit_variance_and_exponential_correlation() {
    // three points: two at distance 0.3, one far away
    let pts = [0.2, 0.5, 0.5, 0.5, 0.9, 0.9];
    let n = 10_000;
    let y = gen_gaussian(&pts, 2, 0.3, 5, n).unwrap();
    assert_eq!(y, gen_gaussian(&pts, 2, 0.3, 5, n).unwrap());
    let col = |i: usize| (0..n).map(|j| y[j * 3 + i]).collect::<Vec<_>>();
    let moments = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / n as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64)
    };
    for i in 0..3 {
        let (m, v) = moments(&col(i));
        assert!(m.abs() < 5.0 / (n as f64).sqrt());
        // sd of the sample variance of a unit normal is sqrt(2 / n)
        assert!((v - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "{v}");
    }
    let (a, b) = (col(0), col(1));
    let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
    let rho = (-1f64).exp();
    assert!((corr - rho).abs() < 5.0 * ((1.0 + rho * rho) / n as f64).sqrt(), "{corr}");
}

#[test]
fn sequential_generator_without_nonlinearity_matches_exact_marginal() {
    let locs = MultiFidelityLocations::from_flat(2, vec![grid_locations(8)]).unwrap();
    let gen = SequentialGenerator::new(&locs, 0.3, 30, 0.0, 4.0).unwrap();
    assert_eq!(gen.conditional_sd()[0], 1.0);
    let n = 4000;
    let mut seq: Vec<f64> = (0..n).map(|j| gen.sample(&mut common::rng(1000 + j as u64))[0]).collect();
    let exact = gen_gaussian(locs.flat(0), 2, 0.3, 77, n).unwrap();
    let mut ex: Vec<f64> = (0..n).map(|j| exact[j * 64]).collect();
    seq.sort_by(f64::total_cmp);
    ex.sort_by(f64::total_cmp);
    // two-sample Kolmogorov-Smirnov statistic
    let (mut i, mut k, mut d) = (0, 0, 0.0f64);
    while i < seq.len() && k < ex.len() {
        if seq[i] <= ex[k] {
            i += 1;
        } else {
            k += 1;
        }
        d = d.max((i as f64 - k as f64).abs() / n as f64);
    }
    // 1% critical value for equal sample sizes
    assert!(d < 1.63 * (2.0 / n as f64).sqrt(), "KS {d}");
}

#[test]
fn block_average_layout_and_exact_coarsening() {
    let spec = GeneratorSpec::new(Scenario::BlockAverage, 7);
    let sim = gen_scenario(&spec, 3, 2).unwrap();
    assert_eq!(sim.locations.sizes(), vec![25, 100, 900]);
    assert_eq!(sim.train.sizes(), &[25, 100, 900]);
    for j in 0..3 {
        let raw = |r: usize| sim.train.row(r, j).iter().map(|v| v + sim.centers[r]).collect::<Vec<_>>();
        let mid = coarsen_average(&raw(2), 30, 3).unwrap();
        let coarse = coarsen_average(&mid, 10, 2).unwrap();
        assert!(mid.iter().zip(raw(1)).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(coarse.iter().zip(raw(0)).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    // train and test come from different streams
    assert_ne!(sim.train.row(2, 0), sim.test.row(2, 0));
}

#[test]
fn scenarios_are_deterministic_and_centered() {
    for scenario in [Scenario::GaussianExponential, Scenario::NonlinearMap, Scenario::BlockMin] {
        let mut spec = GeneratorSpec::new(scenario, 3);
        if scenario == Scenario::BlockMin {
            spec.grids = vec![3, 6];
        }
        let a = gen_scenario(&spec, 6, 2).unwrap();
        let b = gen_scenario(&spec, 6, 2).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        for r in 0..a.train.num_fidelities() {
            let v = a.train.fidelity(r);
            assert!((v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-12);
        }
        let scores = a.truth.scores(&a.test);
        assert!(scores.iter().all(|s| s.is_finite()));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = GeneratorSpec::new(Scenario::BlockAverage, 1);
    spec.grids = vec![5, 10, 25];
    assert!(gen_scenario(&spec, 1, 1).is_err());
    let mut spec = GeneratorSpec::new(Scenario::GaussianExponential, 1);
    spec.grids = vec![80];
    assert!(gen_scenario(&spec, 1, 1).is_err());
}
