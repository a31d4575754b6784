//! Integrated likelihood of the ordered ensemble under the transport-map prior.
//!
//! For each location the map coefficients and noise variance are integrated
//! out, leaving a normal-inverse-gamma marginal in the n replicate values.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{prior_params_unchecked, FidelityParams, HyperParams, Kernel, ModelSpec, COORDINATES, PRIOR_ONLY};
use crate::ordering::{ConditioningSets, MaximinOrdering};
use crate::spatial::Ensemble;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log marginal of n values with Gram summary (log|G|, y'G^-1y) under an IG(alpha, beta) prior.
pub fn nig_log_marginal(n: usize, logdet: f64, quad: f64, alpha: f64, beta: f64) -> f64 {
    let a_post = alpha + 0.5 * n as f64;
    let b_post = beta + 0.5 * quad;
    -0.5 * n as f64 * LN_2PI - 0.5 * logdet + alpha * beta.ln() - a_post * b_post.ln() + ln_gamma(a_post)
        - ln_gamma(alpha)
}

/// Ensemble values rearranged by maximin rank: `column(r, rank)` holds the n
/// replicate values at that location.
#[derive(Debug, Clone)]
pub struct OrderedData {
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl OrderedData {
    pub fn new(ens: &Ensemble, ord: &MaximinOrdering) -> Self {
        let n = ens.replicates();
        let cols = (0..ord.num_fidelities())
            .map(|r| {
                let mut c = Vec::with_capacity(n * ord.len(r));
                for &orig in ord.permutation(r) {
                    c.extend((0..n).map(|j| ens.get(r, j, orig)));
                }
                c
            })
            .collect();
        Self { n, cols }
    }

    pub fn replicates(&self) -> usize {
        self.n
    }

    pub fn column(&self, r: usize, rank: usize) -> &[f64] {
        &self.cols[r][rank * self.n..(rank + 1) * self.n]
    }

    /// Sample variance of all values in fidelity r (divisor count - 1).
    pub fn variance(&self, r: usize) -> f64 {
        let c = &self.cols[r];
        if c.len() < 2 {
            return 1.0;
        }
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (c.len() - 1) as f64
    }
}

/// Conditioning vectors of one location: n rows of `m_same + m_cross` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub m_same: usize,
    pub m_cross: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn width(&self) -> usize {
        self.m_same + self.m_cross
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.x[j * w..(j + 1) * w]
    }
}

/// Cached factorization for one location.
#[derive(Debug, Clone)]
pub struct LocationTerm {
    pub chol: Cholesky<f64, Dyn>,
    pub alpha: f64,
    pub beta: f64,
    pub alpha_post: f64,
    pub beta_post: f64,
    pub logdet: f64,
    pub quad: f64,
    pub log_value: f64,
}

struct Factor {
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
    quad: f64,
}

fn factorize(kernel: &Kernel, design: &Design, y: &[f64], r: usize, rank: usize) -> Result<Factor> {
    let n = design.n;
    let mut g = kernel.gram(&design.x, n);
    let max_diag = (0..n).map(|j| g[j * n + j]).fold(f64::NEG_INFINITY, f64::max);
    let jitter = 1e-8 * (1.0 + max_diag.max(0.0));
    for j in 0..n {
        g[j * n + j] += 1.0 + jitter;
    }
    let degenerate = || Error::DegenerateKernel { fidelity: r + 1, index: rank + 1 };
    if g.iter().any(|v| !v.is_finite()) {
        return Err(degenerate());
    }
    let chol = Cholesky::new(DMatrix::from_vec(n, n, g)).ok_or_else(degenerate)?;
    let l = chol.l_dirty();
    let logdet = 2.0 * (0..n).map(|j| l[(j, j)].ln()).sum::<f64>();
    let mut z = DVector::from_column_slice(y);
    if !l.solve_lower_triangular_mut(&mut z) {
        return Err(degenerate());
    }
    Ok(Factor { chol, logdet, quad: z.norm_squared() })
}

/// Log marginal of one location given its kernel, prior and design.
pub fn location_log_marginal(
    kernel: &Kernel,
    prior: (f64, f64),
    design: &Design,
    y: &[f64],
) -> Result<(f64, LocationTerm)> {
    location_term(kernel, prior, design, y, 0, 0)
}

fn location_term(
    kernel: &Kernel,
    (alpha, beta): (f64, f64),
    design: &Design,
    y: &[f64],
    r: usize,
    rank: usize,
) -> Result<(f64, LocationTerm)> {
    if design.n == 0 || y.len() != design.n || design.x.len() != design.n * design.width() {
        return Err(Error::InvalidArgument("design and response sizes disagree".into()));
    }
    if design.width() != kernel.dim() {
        return Err(Error::InvalidArgument(format!(
            "conditioning vectors of length {} do not match {} weights",
            design.width(),
            kernel.dim()
        )));
    }
    let f = factorize(kernel, design, y, r, rank)?;
    let log_value = nig_log_marginal(design.n, f.logdet, f.quad, alpha, beta);
    let term = LocationTerm {
        chol: f.chol,
        alpha,
        beta,
        alpha_post: alpha + 0.5 * design.n as f64,
        beta_post: beta + 0.5 * f.quad,
        logdet: f.logdet,
        quad: f.quad,
        log_value,
    };
    Ok((log_value, term))
}

/// Log marginal split by fidelity.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLogMarginal {
    pub total: f64,
    pub per_fidelity: Vec<f64>,
}

/// Everything needed to evaluate the integrated likelihood of a training set.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub ordering: &'a MaximinOrdering,
    pub sets: &'a ConditioningSets,
    pub data: &'a OrderedData,
    pub spec: &'a ModelSpec,
}

impl<'a> Problem<'a> {
    /// Adaptive sizes (m_r, m'_r) implied by `theta` and the caps.
    pub fn sizes(&self, theta: &FidelityParams, r: usize) -> (usize, usize) {
        let (cm, cp) = self.sets.caps();
        crate::model::adaptive_sizes(theta, r, self.spec.epsilon, (cm.min(self.spec.m_max), cp.min(self.spec.mp_max)))
    }

    pub fn design(&self, r: usize, rank: usize, (m, mp): (usize, usize)) -> Design {
        let same = self.sets.same(r, rank);
        let prev = self.sets.prev(r, rank);
        let ms = m.min(same.len());
        let mc = if r == 0 { 0 } else { mp.min(prev.len()) };
        let n = self.data.replicates();
        let w = ms + mc;
        let mut x = vec![0.0; n * w];
        for (k, &s) in same[..ms].iter().enumerate() {
            for (j, v) in self.data.column(r, s).iter().enumerate() {
                x[j * w + k] = *v;
            }
        }
        for (k, &s) in prev[..mc].iter().enumerate() {
            for (j, v) in self.data.column(r - 1, s).iter().enumerate() {
                x[j * w + ms + k] = *v;
            }
        }
        Design { n, m_same: ms, m_cross: mc, x }
    }

    pub fn kernel(&self, theta: &FidelityParams, r: usize, rank: usize, design: &Design) -> Kernel {
        let ell = self.ordering.floored_lengthscale(r, rank);
        self.spec.kernel(theta, ell, design.m_same, design.m_cross)
    }

    fn prior(&self, theta: &FidelityParams, r: usize, rank: usize) -> (f64, f64) {
        let ell = self.ordering.floored_lengthscale(r, rank);
        prior_params_unchecked(theta.d1, theta.variance_exponent(), ell, self.spec.g)
    }

    pub fn location_term(
        &self,
        theta: &FidelityParams,
        r: usize,
        rank: usize,
        sizes: (usize, usize),
    ) -> Result<(Design, LocationTerm)> {
        let design = self.design(r, rank, sizes);
        let kernel = self.kernel(theta, r, rank, &design);
        let (_, term) = location_term(&kernel, self.prior(theta, r, rank), &design, self.data.column(r, rank), r, rank)?;
        Ok((design, term))
    }

    fn location_value(&self, theta: &FidelityParams, r: usize, rank: usize, sizes: (usize, usize)) -> Result<f64> {
        let design = self.design(r, rank, sizes);
        let kernel = self.kernel(theta, r, rank, &design);
        let f = factorize(&kernel, &design, self.data.column(r, rank), r, rank)?;
        let (a, b) = self.prior(theta, r, rank);
        Ok(nig_log_marginal(design.n, f.logdet, f.quad, a, b))
    }

    /// Sum of location terms over `ranks` of fidelity r, at fixed sizes.
    /// Terms are evaluated in parallel and summed in the given order.
    pub fn fidelity_log_marginal(
        &self,
        theta: &FidelityParams,
        r: usize,
        sizes: (usize, usize),
        ranks: &[usize],
    ) -> Result<f64> {
        let vals: Vec<f64> = ranks
            .par_iter()
            .map(|&rank| self.location_value(theta, r, rank, sizes))
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum())
    }

    /// Fidelity-r subtotal with sizes derived from `theta`.
    pub fn fidelity_subtotal(&self, theta: &FidelityParams, r: usize) -> Result<f64> {
        let all: Vec<usize> = (0..self.ordering.len(r)).collect();
        self.fidelity_log_marginal(theta, r, self.sizes(theta, r), &all)
    }

    pub fn total_log_marginal(&self, theta: &HyperParams) -> Result<TotalLogMarginal> {
        let per_fidelity = (0..self.ordering.num_fidelities())
            .map(|r| self.fidelity_subtotal(theta.fidelity(r), r))
            .collect::<Result<Vec<_>>>()?;
        Ok(TotalLogMarginal { total: per_fidelity.iter().sum(), per_fidelity })
    }

    /// Central finite-difference gradient of `scale * sum over ranks` for
    /// fidelity r with respect to its free unconstrained coordinates.
    ///
    /// Returns the objective at `theta` and a gradient over all of the
    /// fidelity's coordinates (frozen ones are zero). Coordinate k uses the
    /// step `h_rel * max(1, |theta_k|)`.
    pub fn fidelity_gradient(
        &self,
        theta: &FidelityParams,
        r: usize,
        sizes: (usize, usize),
        ranks: &[usize],
        scale: f64,
        h_rel: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let coords = self.spec.free_coordinates(r);
        let steps: Vec<(FidelityParams, FidelityParams, f64)> = coords
            .iter()
            .map(|&k| {
                let v = theta.get(k);
                let h = h_rel * v.abs().max(1.0);
                let (plus, minus) = (v + h, v - h);
                (theta.with(k, plus), theta.with(k, minus), plus - minus)
            })
            .collect();

        let per_location: Vec<Vec<f64>> = ranks
            .par_iter()
            .map(|&rank| {
                let design = self.design(r, rank, sizes);
                let y = self.data.column(r, rank);
                let base = factorize(&self.kernel(theta, r, rank, &design), &design, y, r, rank)?;
                let eval = |t: &FidelityParams, k: usize| -> Result<f64> {
                    let (a, b) = self.prior(t, r, rank);
                    if PRIOR_ONLY.contains(&k) {
                        Ok(nig_log_marginal(design.n, base.logdet, base.quad, a, b))
                    } else {
                        let f = factorize(&self.kernel(t, r, rank, &design), &design, y, r, rank)?;
                        Ok(nig_log_marginal(design.n, f.logdet, f.quad, a, b))
                    }
                };
                let (a, b) = self.prior(theta, r, rank);
                let mut out = Vec::with_capacity(1 + 2 * coords.len());
                out.push(nig_log_marginal(design.n, base.logdet, base.quad, a, b));
                for (&k, (plus, minus, _)) in coords.iter().zip(&steps) {
                    out.push(eval(plus, k)?);
                    out.push(eval(minus, k)?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;

        let mut sums = vec![0.0; 1 + 2 * coords.len()];
        for v in &per_location {
            for (s, x) in sums.iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut grad = vec![0.0; FidelityParams::count(r)];
        for (c, (&k, (_, _, width))) in coords.iter().zip(&steps).enumerate() {
            let g = scale * (sums[1 + 2 * c] - sums[2 + 2 * c]) / width;
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { fidelity: r + 1, coordinate: COORDINATES[k] });
            }
            grad[k] = g;
        }
        Ok((scale * sums[0], grad))
    }

    /// Full-data gradient over all 9R - 2 coordinates (fidelity blocks concatenated).
    pub fn grad_log_marginal(&self, theta: &HyperParams, h_rel: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(theta.count());
        for r in 0..self.ordering.num_fidelities() {
            let t = theta.fidelity(r);
            let all: Vec<usize> = (0..self.ordering.len(r)).collect();
            let (_, g) = self.fidelity_gradient(t, r, self.sizes(t, r), &all, 1.0, h_rel)?;
            out.extend(g);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrelationFamily;

    fn zero_kernel(m: usize) -> Kernel {
        Kernel { weights: vec![0.0; m], sigma2: 0.0, range: 1.0, family: CorrelationFamily::Matern32 }
    }

    #[test]
    fn single_value_zero_kernel_is_student_t() {
        let design = Design { n: 1, m_same: 0, m_cross: 0, x: vec![] };
        let (a, b) = (2.0625, 1.0625);
        let (v, term) = location_log_marginal(&zero_kernel(0), (a, b), &design, &[0.0]).unwrap();
        // Student-t with 2a dof and scale^2 b/a at zero
        let nu = 2.0 * a;
        let scale2: f64 = b / a;
        let t = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI * scale2).ln();
        // jitter perturbs log|G| by about 1e-8
        assert!((v - t).abs() < 1e-7);
        assert_eq!(term.beta_post, b);
        assert_eq!(term.alpha_post - term.alpha, 0.5);
    }

    #[test]
    fn replicate_permutation_invariance() {
        let kernel = Kernel { weights: vec![0.7, 0.2], sigma2: 0.5, range: 0.8, family: CorrelationFamily::Matern32 };
        let x = vec![0.1, -0.4, 1.2, 0.3, -0.8, 0.9, 0.05, 0.5];
        let y = [0.3, -1.1, 0.4, 2.0];
        let perm = [2, 0, 3, 1];
        let xp: Vec<f64> = perm.iter().flat_map(|&j| x[2 * j..2 * j + 2].to_vec()).collect();
        let yp: Vec<f64> = perm.iter().map(|&j| y[j]).collect();
        let d = Design { n: 4, m_same: 2, m_cross: 0, x };
        let dp = Design { n: 4, m_same: 2, m_cross: 0, x: xp };
        let (v, t) = location_log_marginal(&kernel, (2.0625, 0.4), &d, &y).unwrap();
        let (vp, _) = location_log_marginal(&kernel, (2.0625, 0.4), &dp, &yp).unwrap();
        assert!((v - vp).abs() < 1e-12);
        assert!(t.beta_post >= t.beta);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let d = Design { n: 1, m_same: 1, m_cross: 0, x: vec![0.0] };
        assert!(location_log_marginal(&zero_kernel(2), (2.0, 1.0), &d, &[0.0]).is_err());
    }
}
