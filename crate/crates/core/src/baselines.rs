//! Reference models for comparisons: independent per-location Gaussians and
//! the linear (Gaussian) special case of the transport map.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::predict::DensityModel;
use crate::spatial::{Ensemble, MultiFidelityLocations};
use crate::train::{fit, TrainConfig, TrainedMap};

const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-location normal with the empirical mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentGaussian {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

pub fn fit_independent_gaussian(train: &Ensemble) -> Result<IndependentGaussian> {
    let n = train.replicates();
    if n < 2 {
        return Err(Error::InvalidArgument("the independent baseline needs at least two replicates".into()));
    }
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for r in 0..train.num_fidelities() {
        let nr = train.sizes()[r];
        let vals = train.fidelity(r);
        let mu: Vec<f64> = (0..nr).map(|i| (0..n).map(|j| vals[j * nr + i]).sum::<f64>() / n as f64).collect();
        let v = (0..nr)
            .map(|i| {
                let s = (0..n).map(|j| (vals[j * nr + i] - mu[i]).powi(2)).sum::<f64>() / (n - 1) as f64;
                s.max(VARIANCE_FLOOR)
            })
            .collect();
        mean.push(mu);
        var.push(v);
    }
    Ok(IndependentGaussian { mean, var })
}

impl DensityModel for IndependentGaussian {
    fn sizes(&self) -> Vec<usize> {
        self.mean.iter().map(Vec::len).collect()
    }

    fn log_density_by_fidelity(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        Ok(rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row.iter()
                    .zip(&self.mean[r])
                    .zip(&self.var[r])
                    .map(|((y, m), v)| -0.5 * (ln_2pi + v.ln() + (y - m).powi(2) / v))
                    .sum()
            })
            .collect())
    }
}

/// The transport map with the nonlinear kernel term removed; everything else
/// follows `spec` and `config`.
pub fn fit_linear_map(
    train: &Ensemble,
    locs: &MultiFidelityLocations,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<TrainedMap> {
    fit(train, locs, &ModelSpec { nonlinear: false, ..*spec }, config)
}
