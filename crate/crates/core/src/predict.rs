//! Posterior predictive densities, log scores, the plug-in forward map, and
//! joint or conditional sampling from a fitted map.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::spatial::Ensemble;
use crate::train::TrainedMap;

/// Location-scale Student-t law of one map component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveComponent {
    pub mean: f64,
    pub scale: f64,
    pub dof: f64,
}

impl PredictiveComponent {
    pub fn log_density(&self, y: f64) -> f64 {
        student_t_log_density(y, self.mean, self.scale, self.dof)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let c: f64 = ChiSquared::new(self.dof).expect("positive degrees of freedom").sample(rng);
        self.mean + self.scale * z / (c / self.dof).sqrt()
    }
}

pub fn student_t_log_density(y: f64, mean: f64, scale: f64, dof: f64) -> f64 {
    let u = (y - mean) / scale;
    ln_gamma(0.5 * (dof + 1.0)) - ln_gamma(0.5 * dof) - 0.5 * (dof * std::f64::consts::PI).ln() - scale.ln()
        - 0.5 * (dof + 1.0) * (u * u / dof).ln_1p()
}

/// Conditioning vector of component (r, rank) drawn from values laid out by
/// rank (`vals[r][rank]`).
pub fn conditioning_vector(map: &TrainedMap, r: usize, rank: usize, vals: &[Vec<f64>]) -> Vec<f64> {
    let c = map.component(r, rank);
    let same = &map.sets.same(r, rank)[..c.design.m_same];
    let prev = &map.sets.prev(r, rank)[..c.design.m_cross];
    let mut x = Vec::with_capacity(same.len() + prev.len());
    x.extend(same.iter().map(|&s| vals[r][s]));
    if r > 0 {
        x.extend(prev.iter().map(|&s| vals[r - 1][s]));
    }
    x
}

pub fn predictive_component(map: &TrainedMap, r: usize, rank: usize, x: &[f64]) -> Result<PredictiveComponent> {
    let c = map.component(r, rank);
    if x.len() != c.design.width() {
        return Err(Error::InvalidArgument(format!(
            "conditioning vector of length {} for a component with {} inputs",
            x.len(),
            c.design.width()
        )));
    }
    let n = c.design.n;
    let xw = c.kernel.weighted_rows(x);
    let mut kstar = vec![0.0; n];
    c.kernel.cross_weighted(&xw, &c.scaled_rows, &mut kstar);
    let mean = kstar.iter().zip(c.weights.iter()).map(|(a, b)| a * b).sum::<f64>();
    let mut w = DVector::from_vec(kstar);
    c.term.chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let kss = xw.iter().map(|a| a * a).sum::<f64>() + c.kernel.sigma2;
    let mut inner = 1.0 + kss - w.norm_squared();
    if !(inner > 1e-12) {
        if inner > -1e-8 * (1.0 + kss) {
            warn!("clamping predictive variance {inner:e} at fidelity {}, ordered location {}", r + 1, rank + 1);
            inner = 1e-12;
        } else {
            return Err(Error::NegativeVariance { fidelity: r + 1, index: rank + 1, value: inner });
        }
    }
    let t = &c.term;
    let var = t.beta_post / t.alpha_post * inner;
    Ok(PredictiveComponent { mean, scale: var.sqrt(), dof: 2.0 * t.alpha_post })
}

/// Rearranges one replicate from original order into rank order.
pub fn to_rank_order(map: &TrainedMap, rows: &[&[f64]]) -> Vec<Vec<f64>> {
    (0..map.num_fidelities())
        .map(|r| map.ordering.permutation(r).iter().map(|&i| rows[r][i]).collect())
        .collect()
}

fn to_original_order(map: &TrainedMap, r: usize, ranked: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; ranked.len()];
    for (rank, &i) in map.ordering.permutation(r).iter().enumerate() {
        out[i] = ranked[rank];
    }
    out
}

/// Models that assign a joint density to one replicate, split by fidelity.
pub trait DensityModel {
    fn sizes(&self) -> Vec<usize>;

    /// Log density of each fidelity given the lower ones, for a replicate
    /// given as one original-order row per fidelity.
    fn log_density_by_fidelity(&self, rows: &[&[f64]]) -> Result<Vec<f64>>;
}

impl DensityModel for TrainedMap {
    fn sizes(&self) -> Vec<usize> {
        self.locations.sizes()
    }

    fn log_density_by_fidelity(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let vals = to_rank_order(self, rows);
        (0..self.num_fidelities())
            .map(|r| {
                let mut total = 0.0;
                for rank in 0..self.ordering.len(r) {
                    let x = conditioning_vector(self, r, rank, &vals);
                    let lp = predictive_component(self, r, rank, &x)?.log_density(vals[r][rank]);
                    if !lp.is_finite() {
                        return Err(Error::NonFiniteDensity { fidelity: r + 1, index: rank + 1 });
                    }
                    total += lp;
                }
                Ok(total)
            })
            .collect()
    }
}

/// Negative log scores of a test ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScore {
    /// `per_fidelity[rep][r]`: negative log density of fidelity r given lower ones.
    pub per_fidelity: Vec<Vec<f64>>,
    pub per_replicate: Vec<f64>,
    pub mean: f64,
}

impl LogScore {
    /// Mean over replicates of each fidelity's conditional score.
    pub fn fidelity_means(&self) -> Vec<f64> {
        let n = self.per_fidelity.len().max(1) as f64;
        let nfid = self.per_fidelity.first().map_or(0, Vec::len);
        (0..nfid).map(|r| self.per_fidelity.iter().map(|v| v[r]).sum::<f64>() / n).collect()
    }

    /// `replicate,fidelity,neg_log_score` rows; per-replicate totals use
    /// fidelity `total` and the final row holds the mean.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("replicate,fidelity,neg_log_score\n");
        for (j, row) in self.per_fidelity.iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", j + 1, r + 1, v).unwrap();
            }
            writeln!(out, "{},total,{}", j + 1, self.per_replicate[j]).unwrap();
        }
        writeln!(out, "mean,total,{}", self.mean).unwrap();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Scores every test replicate with its own observed conditioning values.
pub fn log_score<M: DensityModel + Sync>(model: &M, test: &Ensemble) -> Result<LogScore> {
    if test.sizes() != model.sizes().as_slice() {
        return Err(Error::InvalidArgument(format!(
            "test ensemble sizes {:?} differ from the model's {:?}",
            test.sizes(),
            model.sizes()
        )));
    }
    if test.replicates() == 0 {
        return Err(Error::InvalidArgument("test ensemble has no replicates".into()));
    }
    let per_fidelity: Vec<Vec<f64>> = (0..test.replicates())
        .into_par_iter()
        .map(|j| {
            let rows: Vec<&[f64]> = (0..test.num_fidelities()).map(|r| test.row(r, j)).collect();
            Ok(model.log_density_by_fidelity(&rows)?.into_iter().map(|v| -v).collect())
        })
        .collect::<Result<_>>()?;
    let per_replicate: Vec<f64> = per_fidelity.iter().map(|v| v.iter().sum()).collect();
    let mean = per_replicate.iter().sum::<f64>() / per_replicate.len() as f64;
    Ok(LogScore { per_fidelity, per_replicate, mean })
}

/// Plug-in forward map z = (y - m*) / d_hat with d_hat^2 the posterior mean
/// of d^2; result indexed `[r][rank]`.
pub fn forward_map(map: &TrainedMap, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    if rows.len() != map.num_fidelities() || rows.iter().zip(map.locations.sizes()).any(|(r, n)| r.len() != n) {
        return Err(Error::InvalidArgument("replicate does not match the training locations".into()));
    }
    let vals = to_rank_order(map, rows);
    (0..map.num_fidelities())
        .map(|r| {
            (0..map.ordering.len(r))
                .map(|rank| {
                    let x = conditioning_vector(map, r, rank, &vals);
                    let p = predictive_component(map, r, rank, &x)?;
                    let t = &map.component(r, rank).term;
                    let d = (t.beta_post / (t.alpha_post - 1.0)).sqrt();
                    Ok((vals[r][rank] - p.mean) / d)
                })
                .collect()
        })
        .collect()
}

/// Draws `count` replicates from the fitted joint distribution.
pub fn sample_joint(map: &TrainedMap, count: usize, seed: u64) -> Result<Ensemble> {
    let none = Ensemble::new(0, Vec::new(), Vec::new())?;
    sample_conditional(map, &none, count, seed)
}

/// Draws `count` replicates with fidelities `0..given.num_fidelities()` fixed
/// to `given`, which holds either one replicate (shared by all draws) or
/// `count` replicates. The returned ensemble echoes the given fidelities.
pub fn sample_conditional(map: &TrainedMap, given: &Ensemble, count: usize, seed: u64) -> Result<Ensemble> {
    let r0 = given.num_fidelities();
    let nfid = map.num_fidelities();
    if r0 > nfid {
        return Err(Error::InvalidArgument(format!("cannot condition on {r0} fidelities of a {nfid}-fidelity model")));
    }
    let sizes = map.locations.sizes();
    for r in 0..r0 {
        if given.sizes()[r] != sizes[r] {
            return Err(Error::ColumnCount { fidelity: r + 1, expected: sizes[r], found: given.sizes()[r] });
        }
    }
    if r0 > 0 && given.replicates() != 1 && given.replicates() != count {
        return Err(Error::InvalidArgument(format!(
            "conditioning data has {} replicates; expected 1 or {count}",
            given.replicates()
        )));
    }
    let draws: Vec<Vec<Vec<f64>>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let src = if given.replicates() == 1 { 0 } else { j };
            let mut vals: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for r in 0..r0 {
                let row = given.row(r, src);
                for (rank, &i) in map.ordering.permutation(r).iter().enumerate() {
                    vals[r][rank] = row[i];
                }
            }
            let mut rng = substream(seed, "sampling", j as u64);
            for r in r0..nfid {
                for rank in 0..sizes[r] {
                    let x = conditioning_vector(map, r, rank, &vals);
                    vals[r][rank] = predictive_component(map, r, rank, &x)?.sample(&mut rng);
                }
            }
            Ok((0..nfid).map(|r| to_original_order(map, r, &vals[r])).collect())
        })
        .collect::<Result<_>>()?;
    let values = (0..nfid).map(|r| draws.iter().flat_map(|d| d[r].iter().copied()).collect()).collect();
    Ensemble::new(count, sizes, values)
}
