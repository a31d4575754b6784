mod common;

use mfmap::model::{
    adaptive_sizes, prior_params, relevance_weights, softplus, CorrelationFamily, FidelityParams, Kernel, ModelSpec,
};
use mfmap::ordering::conditional_maximin;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = FidelityParams> {
    prop::array::uniform9(-3.0f64..3.0).prop_map(|v| FidelityParams::from_slice(&v))
}

fn family() -> impl Strategy<Value = CorrelationFamily> {
    prop_oneof![
        Just(CorrelationFamily::Exponential),
        Just(CorrelationFamily::Matern32),
        Just(CorrelationFamily::SquaredExponential),
    ]
}

/// Kernel written out term by term.
fn kernel_oracle(q: &[f64], sigma2: f64, range: f64, family: CorrelationFamily, x: &[f64], y: &[f64]) -> f64 {
    let mut lin = 0.0;
    let mut d2 = 0.0;
    for j in 0..q.len() {
        lin += q[j] * x[j] * y[j];
        d2 += q[j] * (x[j] - y[j]) * (x[j] - y[j]);
    }
    let t = d2.sqrt() / range;
    let rho = match family {
        CorrelationFamily::Exponential => (-t).exp(),
        CorrelationFamily::Matern32 => (1.0 + 3f64.sqrt() * t) * (-(3f64.sqrt()) * t).exp(),
        CorrelationFamily::SquaredExponential => (-0.5 * t * t).exp(),
    };
    lin + sigma2 * rho
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gram_plus_identity_is_positive_definite(
        theta in params(),
        fam in family(),
        n in 1usize..25,
        m in 0usize..6,
        mp in 0usize..6,
        ell in 1e-3f64..2.0,
        seed in any::<u64>(),
    ) {
        let spec = ModelSpec { rho: fam, ..ModelSpec::default() };
        let k = spec.kernel(&theta, ell, m, mp);
        let mut rng = common::rng(seed);
        let x: Vec<f64> = common::uniform_points(&mut rng, n * (m + mp), 1).iter().map(|v| 6.0 * v - 3.0).collect();
        let g = k.gram(&x, n);
        let max_diag = (0..n).map(|j| g[j * n + j]).fold(0.0, f64::max);
        let mut mat = DMatrix::from_vec(n, n, g);
        for j in 0..n {
            mat[(j, j)] += 1.0 + 1e-8 * (1.0 + max_diag);
        }
        prop_assert!(mat.clone().cholesky().is_some());
        prop_assert!((mat.clone() - mat.transpose()).abs().max() <= 1e-12 * (1.0 + max_diag));
    }

    #[test]
    fn kernel_matches_term_by_term_oracle(
        q in prop::collection::vec(0.0f64..2.0, 0..8),
        sigma2 in 0.0f64..3.0,
        range in 0.05f64..5.0,
        fam in family(),
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let d = q.len();
        let x: Vec<f64> = common::uniform_points(&mut rng, d, 1).iter().map(|v| 4.0 * v - 2.0).collect();
        let y: Vec<f64> = common::uniform_points(&mut rng, d, 1).iter().map(|v| 4.0 * v - 2.0).collect();
        let k = Kernel { weights: q.clone(), sigma2, range, family: fam };
        let want = kernel_oracle(&q, sigma2, range, fam, &x, &y);
        prop_assert!((k.eval(&x, &y).unwrap() - want).abs() <= 1e-12 * (1.0 + want.abs()));
        prop_assert!((k.eval(&x, &y).unwrap() - k.eval(&y, &x).unwrap()).abs() <= 1e-14 * (1.0 + want.abs()));
        let diag = kernel_oracle(&q, 0.0, range, fam, &x, &x) + sigma2;
        prop_assert!((k.eval(&x, &x).unwrap() - diag).abs() <= 1e-12 * (1.0 + diag));
        // gram agrees with pointwise evaluation
        let both: Vec<f64> = x.iter().chain(&y).copied().collect();
        let g = k.gram(&both, 2);
        prop_assert!((g[2] - k.eval(&x, &y).unwrap()).abs() <= 1e-10 * (1.0 + want.abs()));
    }

    #[test]
    fn weights_follow_exponential_decay(theta in params(), m in 0usize..12, mp in 0usize..12) {
        let q = relevance_weights(&theta, m, mp);
        prop_assert_eq!(q.len(), m + mp);
        for j in 1..=m {
            let want = (theta.q0 - softplus(theta.q1) * j as f64).exp();
            prop_assert!((q[j - 1] - want).abs() <= 1e-14 * want);
        }
        for j in 1..=mp {
            let want = (theta.qp0 - softplus(theta.qp1) * j as f64).exp();
            prop_assert!((q[m + j - 1] - want).abs() <= 1e-14 * want);
        }
        prop_assert!(q[..m].windows(2).all(|w| w[0] > w[1]));
        prop_assert!(q[m..].windows(2).all(|w| w[0] > w[1]));
        prop_assert!(q.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn adaptive_sizes_match_scan_and_are_monotone(
        theta in params(),
        eps in 1e-4f64..0.5,
        bump in 0.0f64..2.0,
        cap in 1usize..40,
    ) {
        let scan = |q0: f64, q1: f64, e: f64| (1..=cap).filter(|&k| (q0 - softplus(q1) * k as f64).exp() >= e).max().unwrap_or(0);
        let (m, mp) = adaptive_sizes(&theta, 1, eps, (cap, cap));
        prop_assert_eq!(m, scan(theta.q0, theta.q1, eps));
        prop_assert_eq!(mp, scan(theta.qp0, theta.qp1, eps));
        prop_assert_eq!(adaptive_sizes(&theta, 0, eps, (cap, cap)).1, 0);
        let (m_hi, _) = adaptive_sizes(&theta, 1, eps * (1.0 + bump), (cap, cap));
        prop_assert!(m_hi <= m);
        let raised = FidelityParams { q0: theta.q0 + bump, ..theta };
        prop_assert!(adaptive_sizes(&raised, 1, eps, (cap, cap)).0 >= m);
        prop_assert_eq!(adaptive_sizes(&theta, 1, 0.0, (cap, cap)), (cap, cap));
    }

    #[test]
    fn prior_sd_is_g_times_mean(theta in params(), ell in 1e-3f64..10.0, g in 0.5f64..10.0) {
        let (a, b) = prior_params(&theta, ell, g).unwrap();
        prop_assert!((a - (2.0 + 1.0 / (g * g))).abs() < 1e-15);
        let mean = b / (a - 1.0);
        let want = theta.d1.exp() * ell.powf(softplus(theta.d2));
        prop_assert!((mean - want).abs() <= 1e-12 * want);
        let sd = (b * b / ((a - 1.0).powi(2) * (a - 2.0))).sqrt();
        prop_assert!((sd / mean - g).abs() <= 1e-10 * g);
    }

    #[test]
    fn nonlinear_variance_decreases_along_ordering(
        theta in params(),
        sizes in prop::collection::vec(1usize..40, 1..3),
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let locs = common::random_locations(&mut rng, &sizes, 2);
        let ord = conditional_maximin(&locs);
        for r in 0..sizes.len() {
            let s: Vec<f64> = (0..sizes[r]).map(|i| theta.nonlinear_variance(ord.floored_lengthscale(r, i))).collect();
            prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}

#[test]
fn prior_rejects_non_positive_lengthscale() {
    let theta = FidelityParams::initial(1.0);
    assert!(prior_params(&theta, 0.0, 4.0).is_err());
    assert!(prior_params(&theta, -1.0, 4.0).is_err());
}
