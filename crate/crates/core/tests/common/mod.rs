#![allow(dead_code)]

use mfmap::simdata::{gen_scenario, GeneratorSpec, Scenario, SimulatedData};
use mfmap::spatial::MultiFidelityLocations;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Integral over the real line by double-exponential quadrature after the
/// substitution y = c tan(pi t / 2).
pub fn integrate_line(f: impl Fn(f64) -> f64, c: f64, tol: f64) -> f64 {
    let h = std::f64::consts::FRAC_PI_2;
    let g = |t: f64| {
        let (s, co) = (h * t).sin_cos();
        if co <= 0.0 {
            return 0.0;
        }
        let v = f(c * s / co);
        if v == 0.0 {
            0.0
        } else {
            v * c * h / (co * co)
        }
    };
    quadrature::double_exponential::integrate(g, -1.0, 1.0, tol).integral
}

/// Integral over the plane as nested line integrals.
pub fn integrate_plane(f: impl Fn(f64, f64) -> f64, c: f64, tol: f64) -> f64 {
    integrate_line(|a| integrate_line(|b| f(a, b), c, tol * 0.1), c, tol)
}

/// Points drawn uniformly from the unit box.
pub fn uniform_points(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<f64> {
    (0..n * dim).map(|_| rng.random::<f64>()).collect()
}

pub fn random_locations(rng: &mut impl Rng, sizes: &[usize], dim: usize) -> MultiFidelityLocations {
    MultiFidelityLocations::from_flat(dim, sizes.iter().map(|&n| uniform_points(rng, n, dim)).collect()).unwrap()
}

/// Small two-fidelity Gaussian dataset (3x3 and 6x6 grids).
pub fn small_gaussian(n_train: usize, n_test: usize, seed: u64) -> SimulatedData {
    let mut spec = GeneratorSpec::new(Scenario::NonlinearMap, seed);
    spec.grids = vec![3, 6];
    spec.amplitude = 0.0;
    gen_scenario(&spec, n_train, n_test).unwrap()
}

/// Small two-fidelity nonlinear dataset (3x3 and 6x6 grids).
pub fn small_nonlinear(n_train: usize, n_test: usize, seed: u64) -> SimulatedData {
    let mut spec = GeneratorSpec::new(Scenario::NonlinearMap, seed);
    spec.grids = vec![3, 6];
    gen_scenario(&spec, n_train, n_test).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Conditional maximin ordering by exhaustive scan: per fidelity, the
/// original indices in selection order and the selection distances.
pub fn maximin_oracle(locs: &MultiFidelityLocations) -> Vec<(Vec<usize>, Vec<f64>)> {
    let dim = locs.dim();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut all: Vec<f64> = Vec::new();
    for r in 0..locs.num_fidelities() {
        all.extend_from_slice(locs.flat(r));
    }
    let (lo, hi) = (0..dim).fold((vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]), |(mut lo, mut hi), k| {
        for p in all.chunks_exact(dim) {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        (lo, hi)
    });
    let diameter = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();

    let mut lower: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for r in 0..locs.num_fidelities() {
        let n = locs.len(r);
        let pts: Vec<&[f64]> = (0..n).map(|i| locs.point(r, i)).collect();
        let mut md: Vec<f64> = pts
            .iter()
            .map(|p| lower.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min))
            .collect();
        let mut taken = vec![false; n];
        let (mut order, mut ell) = (Vec::new(), Vec::new());
        for step in 0..n {
            let pick = if r == 0 && step == 0 {
                let c: Vec<f64> = (0..dim).map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
                let mut best = 0;
                for i in 1..n {
                    if dist(pts[i], &c) < dist(pts[best], &c) {
                        best = i;
                    }
                }
                best
            } else {
                let mut best = usize::MAX;
                for i in 0..n {
                    if !taken[i] && (best == usize::MAX || md[i] > md[best]) {
                        best = i;
                    }
                }
                best
            };
            ell.push(if r == 0 && step == 0 { diameter } else { md[pick] });
            taken[pick] = true;
            order.push(pick);
            for i in 0..n {
                md[i] = md[i].min(dist(pts[i], pts[pick]));
            }
        }
        lower.extend(pts.iter().map(|p| p.to_vec()));
        out.push((order, ell));
    }
    out
}
