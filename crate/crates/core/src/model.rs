//! Hyperparameters, the inverse-gamma prior law, relevance weights, adaptive
//! conditioning-set truncation, and the fidelity-aware kernel.
//!
//! Each fidelity carries nine unconstrained hyperparameters (seven for the
//! coarsest, which has no cross-fidelity inputs). Positivity-constrained ones
//! pass through softplus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus inverse needs a positive argument");
    if y > 30.0 {
        y
    } else {
        y + (-(-y).exp_m1()).ln()
    }
}

/// Unconstrained hyperparameters of one fidelity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityParams {
    pub d1: f64,
    pub d2: f64,
    pub s1: f64,
    pub s2: f64,
    pub gamma: f64,
    pub q0: f64,
    pub q1: f64,
    pub qp0: f64,
    pub qp1: f64,
}

/// Coordinate names in vector order.
pub const COORDINATES: [&str; 9] = ["d1", "d2", "s1", "s2", "gamma", "q0", "q1", "qp0", "qp1"];

/// Coordinates that only enter the prior, not the Gram matrix.
pub const PRIOR_ONLY: [usize; 2] = [0, 1];

/// Coordinates of the nonlinear kernel term.
pub const NONLINEAR: [usize; 3] = [2, 3, 4];

impl FidelityParams {
    /// Default initialization given the sample variance of the fidelity's data.
    pub fn initial(sample_variance: f64) -> Self {
        let half = softplus_inv(0.5);
        Self {
            d1: sample_variance.max(1e-12).ln(),
            d2: softplus_inv(1.0),
            s1: -1.0,
            s2: half,
            gamma: 0.0,
            q0: 0.0,
            q1: half,
            qp0: 0.0,
            qp1: half,
        }
    }

    /// Number of free coordinates for fidelity `r` (0-based).
    pub fn count(r: usize) -> usize {
        if r == 0 {
            7
        } else {
            9
        }
    }

    pub fn to_vec(&self, r: usize) -> Vec<f64> {
        let all = [self.d1, self.d2, self.s1, self.s2, self.gamma, self.q0, self.q1, self.qp0, self.qp1];
        all[..Self::count(r)].to_vec()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        let get = |i: usize, default: f64| v.get(i).copied().unwrap_or(default);
        let half = softplus_inv(0.5);
        Self {
            d1: v[0],
            d2: v[1],
            s1: v[2],
            s2: v[3],
            gamma: v[4],
            q0: v[5],
            q1: v[6],
            qp0: get(7, 0.0),
            qp1: get(8, half),
        }
    }

    pub fn get(&self, k: usize) -> f64 {
        self.to_vec(1)[k]
    }

    pub fn with(&self, k: usize, value: f64) -> Self {
        let mut v = self.to_vec(1);
        v[k] = value;
        Self::from_slice(&v)
    }

    pub fn variance_exponent(&self) -> f64 {
        softplus(self.d2)
    }

    pub fn nonlinear_exponent(&self) -> f64 {
        softplus(self.s2)
    }

    pub fn range(&self) -> f64 {
        self.gamma.exp()
    }

    pub fn same_decay(&self) -> f64 {
        softplus(self.q1)
    }

    pub fn cross_decay(&self) -> f64 {
        softplus(self.qp1)
    }

    /// sigma^2 = exp(s1) * ell^softplus(s2); `ell` must already be floored.
    pub fn nonlinear_variance(&self, ell: f64) -> f64 {
        self.s1.exp() * ell.powf(self.nonlinear_exponent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub fidelities: Vec<FidelityParams>,
}

impl HyperParams {
    pub fn new(fidelities: Vec<FidelityParams>) -> Self {
        Self { fidelities }
    }

    pub fn num_fidelities(&self) -> usize {
        self.fidelities.len()
    }

    /// Total number of free hyperparameters, 9R - 2.
    pub fn count(&self) -> usize {
        (0..self.num_fidelities()).map(FidelityParams::count).sum()
    }

    pub fn fidelity(&self, r: usize) -> &FidelityParams {
        &self.fidelities[r]
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.fidelities.iter().enumerate().flat_map(|(r, p)| p.to_vec(r)).collect()
    }

    pub fn from_vec(v: &[f64], nfid: usize) -> Self {
        let mut off = 0;
        let mut fidelities = Vec::with_capacity(nfid);
        for r in 0..nfid {
            let c = FidelityParams::count(r);
            fidelities.push(FidelityParams::from_slice(&v[off..off + c]));
            off += c;
        }
        Self { fidelities }
    }
}

/// Inverse-gamma prior parameters (alpha, beta) at lengthscale `ell`.
///
/// The prior mean of d^2 is exp(d1) * ell^softplus(d2) and its sd is `g`
/// times the mean.
pub fn prior_params(theta: &FidelityParams, ell: f64, g: f64) -> Result<(f64, f64)> {
    if ell <= 0.0 || !ell.is_finite() {
        return Err(Error::InvalidArgument(format!("lengthscale must be positive, got {ell}")));
    }
    if g <= 0.0 {
        return Err(Error::InvalidArgument(format!("prior ratio g must be positive, got {g}")));
    }
    Ok(prior_params_unchecked(theta.d1, theta.variance_exponent(), ell, g))
}

#[inline]
pub(crate) fn prior_params_unchecked(d1: f64, exponent: f64, ell: f64, g: f64) -> (f64, f64) {
    let inv_g2 = 1.0 / (g * g);
    let alpha = 2.0 + inv_g2;
    let beta = d1.exp() * ell.powf(exponent) * (1.0 + inv_g2);
    (alpha, beta)
}

/// Relevance weights for `m` same-fidelity and `mp` cross-fidelity inputs.
pub fn relevance_weights(theta: &FidelityParams, m: usize, mp: usize) -> Vec<f64> {
    let (a, b) = (theta.q0, theta.same_decay());
    let (ap, bp) = (theta.qp0, theta.cross_decay());
    (1..=m)
        .map(|j| (a - b * j as f64).exp())
        .chain((1..=mp).map(|j| (ap - bp * j as f64).exp()))
        .collect()
}

/// Largest k <= cap with exp(intercept - decay * k) >= eps (0 if none).
///
/// Evaluated in log space with a relative slack of 1e-12 so that a weight
/// sitting exactly on the threshold is kept despite rounding.
pub fn truncation_size(intercept: f64, decay: f64, eps: f64, cap: usize) -> usize {
    if eps <= 0.0 {
        return cap;
    }
    let log_eps = eps.ln();
    let slack = 1e-12 * log_eps.abs().max(1.0);
    let mut m = 0;
    for k in 1..=cap {
        if intercept - decay * k as f64 >= log_eps - slack {
            m = k;
        } else if decay >= 0.0 {
            break;
        }
    }
    m
}

/// Adaptive conditioning-set sizes (m_r, m'_r); m'_r is 0 for the coarsest fidelity.
pub fn adaptive_sizes(theta: &FidelityParams, r: usize, eps: f64, caps: (usize, usize)) -> (usize, usize) {
    let m = truncation_size(theta.q0, theta.same_decay(), eps, caps.0);
    let mp = if r == 0 { 0 } else { truncation_size(theta.qp0, theta.cross_decay(), eps, caps.1) };
    (m, mp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationFamily {
    Exponential,
    #[default]
    Matern32,
    SquaredExponential,
}

impl CorrelationFamily {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            CorrelationFamily::Exponential => (-t).exp(),
            CorrelationFamily::Matern32 => {
                let s = 3f64.sqrt() * t;
                (1.0 + s) * (-s).exp()
            }
            CorrelationFamily::SquaredExponential => (-0.5 * t * t).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorrelationFamily::Exponential => "exponential",
            CorrelationFamily::Matern32 => "matern32",
            CorrelationFamily::SquaredExponential => "squared-exponential",
        }
    }
}

impl std::str::FromStr for CorrelationFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Self::Exponential),
            "matern32" => Ok(Self::Matern32),
            "squared-exponential" => Ok(Self::SquaredExponential),
            other => Err(Error::InvalidArgument(format!("unknown correlation family {other:?}"))),
        }
    }
}

/// K(x, x') = x' Q x + sigma^2 rho(|x - x'|_Q / range) for one map component.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub weights: Vec<f64>,
    pub sigma2: f64,
    pub range: f64,
    pub family: CorrelationFamily,
}

impl Kernel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "kernel inputs of length {} and {} do not match {} weights",
                x.len(),
                y.len(),
                self.dim()
            )));
        }
        let mut lin = 0.0;
        let mut d2 = 0.0;
        for ((&a, &b), &q) in x.iter().zip(y).zip(&self.weights) {
            lin += q * a * b;
            d2 += q * (a - b) * (a - b);
        }
        Ok(lin + self.nonlinear_part(d2))
    }

    #[inline]
    fn nonlinear_part(&self, dist2: f64) -> f64 {
        if self.sigma2 == 0.0 {
            0.0
        } else {
            self.sigma2 * self.family.eval(dist2.max(0.0).sqrt() / self.range)
        }
    }

    /// Scales each row of `x` (row-major, `dim` columns) by sqrt(q).
    pub(crate) fn weighted_rows(&self, x: &[f64]) -> Vec<f64> {
        let sq: Vec<f64> = self.weights.iter().map(|q| q.sqrt()).collect();
        let m = self.dim();
        let mut out = Vec::with_capacity(x.len());
        for row in x.chunks_exact(m.max(1)) {
            if m == 0 {
                break;
            }
            out.extend(row.iter().zip(&sq).map(|(a, s)| a * s));
        }
        out
    }

    /// Kernel values between one weighted row and a set of weighted rows.
    pub(crate) fn cross_weighted(&self, xw: &[f64], rows: &[f64], out: &mut [f64]) {
        let m = self.dim();
        let n0: f64 = xw.iter().map(|a| a * a).sum();
        if m == 0 {
            out.iter_mut().for_each(|o| *o = self.nonlinear_part(0.0));
            return;
        }
        for (o, row) in out.iter_mut().zip(rows.chunks_exact(m)) {
            let mut dot = 0.0;
            let mut nr = 0.0;
            for (a, b) in xw.iter().zip(row) {
                dot += a * b;
                nr += b * b;
            }
            *o = dot + self.nonlinear_part(n0 + nr - 2.0 * dot);
        }
    }

    /// Gram matrix over `n` rows of `x`, column-major n x n.
    pub fn gram(&self, x: &[f64], n: usize) -> Vec<f64> {
        let m = self.dim();
        let mut g = vec![0.0; n * n];
        if m == 0 {
            let c = self.nonlinear_part(0.0);
            g.iter_mut().for_each(|v| *v = c);
            return g;
        }
        let xw = self.weighted_rows(x);
        let norms: Vec<f64> = xw.chunks_exact(m).map(|r| r.iter().map(|a| a * a).sum()).collect();
        for j in 0..n {
            let rj = &xw[j * m..(j + 1) * m];
            for l in 0..=j {
                let rl = &xw[l * m..(l + 1) * m];
                let dot: f64 = rj.iter().zip(rl).map(|(a, b)| a * b).sum();
                let d2 = if j == l { 0.0 } else { norms[j] + norms[l] - 2.0 * dot };
                let v = dot + self.nonlinear_part(d2);
                g[j * n + l] = v;
                g[l * n + j] = v;
            }
        }
        g
    }
}

/// Which model a checkpoint or CLI run refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Mfbtm,
    Linear,
    Indep,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mfbtm" => Ok(Self::Mfbtm),
            "linear" => Ok(Self::Linear),
            "indep" => Ok(Self::Indep),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mfbtm => "mfbtm",
            ModelKind::Linear => "linear",
            ModelKind::Indep => "indep",
        }
    }
}

/// Fixed model settings that are not optimized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Prior sd / mean ratio of d^2.
    pub g: f64,
    pub epsilon: f64,
    pub rho: CorrelationFamily,
    pub m_max: usize,
    pub mp_max: usize,
    /// When false the nonlinear kernel term is dropped (sigma^2 = 0).
    pub nonlinear: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { g: 4.0, epsilon: 0.01, rho: CorrelationFamily::Matern32, m_max: 30, mp_max: 30, nonlinear: true }
    }
}

impl ModelSpec {
    pub fn linear() -> Self {
        Self { nonlinear: false, ..Self::default() }
    }

    /// The kernel of component (r, rank) at lengthscale `ell` (already floored).
    pub fn kernel(&self, theta: &FidelityParams, ell: f64, m: usize, mp: usize) -> Kernel {
        let sigma2 = if self.nonlinear { theta.nonlinear_variance(ell) } else { 0.0 };
        Kernel { weights: relevance_weights(theta, m, mp), sigma2, range: theta.range(), family: self.rho }
    }

    /// Coordinates of fidelity `r` that are optimized.
    pub fn free_coordinates(&self, r: usize) -> Vec<usize> {
        (0..FidelityParams::count(r)).filter(|k| self.nonlinear || !NONLINEAR.contains(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_decays(q0: f64, q1: f64, qp0: f64, qp1: f64) -> FidelityParams {
        FidelityParams { q0, q1: softplus_inv(q1), qp0, qp1: softplus_inv(qp1), ..FidelityParams::initial(1.0) }
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-6, 0.1, 0.5, 1.0, 7.0, 45.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn parameter_count_is_nine_r_minus_two() {
        for r in 1..6 {
            let h = HyperParams::new(vec![FidelityParams::initial(1.0); r]);
            assert_eq!(h.count(), 9 * r - 2);
            assert_eq!(HyperParams::from_vec(&h.to_vec(), r), h);
        }
    }

    #[test]
    fn prior_at_unit_lengthscale() {
        let theta = FidelityParams { d1: 0.0, d2: softplus_inv(1.0), ..FidelityParams::initial(1.0) };
        let (a, b) = prior_params(&theta, 1.0, 4.0).unwrap();
        assert!((a - 2.0625).abs() < 1e-15);
        assert!((b - 1.0625).abs() < 1e-15);
        assert!((b / (a - 1.0) - 1.0).abs() < 1e-15);
        let other = FidelityParams { d2: softplus_inv(3.7), ..theta };
        assert_eq!(prior_params(&other, 1.0, 4.0).unwrap().1, b);
        assert!(prior_params(&theta, 0.0, 4.0).is_err());
    }

    #[test]
    fn prior_sd_over_mean_is_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let theta = FidelityParams {
                d1: rng.random_range(-3.0..3.0),
                d2: rng.random_range(-2.0..3.0),
                ..FidelityParams::initial(1.0)
            };
            let ell = rng.random_range(1e-3..2.0);
            let g = rng.random_range(0.5..8.0);
            let (a, b) = prior_params(&theta, ell, g).unwrap();
            let mean = b / (a - 1.0);
            let var = b * b / ((a - 1.0).powi(2) * (a - 2.0));
            assert!((var.sqrt() / mean - g).abs() < 1e-9 * g);
            let expected = theta.d1.exp() * ell.powf(theta.variance_exponent());
            assert!((mean - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn weights_examples() {
        let w = relevance_weights(&with_decays(0.0, 1.0, 0.0, 1.0), 1, 0);
        assert_eq!(w.len(), 1);
        assert!((w[0] - (-1f64).exp()).abs() < 1e-12);

        let w = relevance_weights(&with_decays(0.0, 0.5, -1.0, 0.25), 2, 2);
        let expect = [(-0.5f64).exp(), (-1f64).exp(), (-1.25f64).exp(), (-1.5f64).exp()];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let flat = relevance_weights(&with_decays(0.3, 1e-12, 0.0, 1.0), 4, 0);
        assert!(flat.iter().all(|q| (q - 0.3f64.exp()).abs() < 1e-10));
    }

    #[test]
    fn weights_decrease_within_blocks() {
        let w = relevance_weights(&with_decays(1.0, 0.3, 2.0, 0.7), 5, 4);
        assert!(w[..5].windows(2).all(|p| p[1] < p[0]));
        assert!(w[5..].windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncation_size(0.0, 0.5, 0.01, 30), 9);
        assert_eq!(truncation_size(0.0, 0.5, 0.0, 30), 30);
        assert_eq!(truncation_size(0.01f64.ln() + 0.5, 0.5, 0.01, 30), 1);
        assert_eq!(truncation_size(0.01f64.ln() + 0.4, 0.5, 0.01, 30), 0);
        let theta = with_decays(0.0, 0.5, 0.0, 0.5);
        assert_eq!(adaptive_sizes(&theta, 0, 0.01, (30, 30)), (9, 0));
        assert_eq!(adaptive_sizes(&theta, 1, 0.01, (5, 30)), (5, 9));
    }

    #[test]
    fn truncation_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let q0 = rng.random_range(-5.0..5.0);
            let q1 = rng.random_range(0.01..3.0);
            let e1 = rng.random_range(0.0..0.5);
            let e2 = e1 + rng.random_range(0.0..0.5);
            assert!(truncation_size(q0, q1, e2, 30) <= truncation_size(q0, q1, e1, 30));
            let dq = rng.random_range(0.0..2.0);
            assert!(truncation_size(q0 + dq, q1, e1, 30) >= truncation_size(q0, q1, e1, 30));
        }
    }

    #[test]
    fn kernel_limits() {
        let k = Kernel { weights: vec![0.0; 3], sigma2: 1.0, range: 1.0, family: CorrelationFamily::Matern32 };
        let x = [0.3, -1.0, 2.0];
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);

        let lin = Kernel { weights: vec![1.0; 3], sigma2: 0.0, range: 1.0, family: CorrelationFamily::Matern32 };
        let y = [1.0, 0.5, -0.25];
        assert!((lin.eval(&x, &y).unwrap() - (0.3 - 0.5 - 0.5)).abs() < 1e-15);
        assert!(lin.eval(&x, &y[..2]).is_err());
    }

    #[test]
    fn kernel_symmetry_and_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for family in [CorrelationFamily::Exponential, CorrelationFamily::Matern32, CorrelationFamily::SquaredExponential] {
            assert_eq!(family.eval(0.0), 1.0);
            for _ in 0..100 {
                let m = rng.random_range(1..8);
                let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..2.0)).collect();
                let k = Kernel { weights: weights.clone(), sigma2: rng.random_range(0.0..2.0), range: rng.random_range(0.1..3.0), family };
                let x: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                assert!((k.eval(&x, &y).unwrap() - k.eval(&y, &x).unwrap()).abs() < 1e-14);
                let quad: f64 = x.iter().zip(&weights).map(|(a, q)| q * a * a).sum();
                assert!((k.eval(&x, &x).unwrap() - (quad + k.sigma2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_matches_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, m) = (7, 4);
        let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k = Kernel { weights: vec![0.9, 0.5, 0.2, 0.05], sigma2: 0.7, range: 1.3, family: CorrelationFamily::Matern32 };
        let g = k.gram(&x, n);
        for j in 0..n {
            for l in 0..n {
                let direct = k.eval(&x[j * m..(j + 1) * m], &x[l * m..(l + 1) * m]).unwrap();
                assert!((g[j * n + l] - direct).abs() < 1e-12);
            }
        }
    }
}
