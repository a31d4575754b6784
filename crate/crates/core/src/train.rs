//! Empirical-Bayes fitting of the hyperparameters by minibatch Adam ascent on
//! the integrated log likelihood, one fidelity at a time.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorClass, Result};
use crate::likelihood::{Design, LocationTerm, OrderedData, Problem};
use crate::model::{FidelityParams, HyperParams, Kernel, ModelSpec};
use crate::ordering::{build_conditioning_sets, conditional_maximin, ConditioningSets, MaximinOrdering};
use crate::rng::substream;
use crate::spatial::{Ensemble, MultiFidelityLocations};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Relative per-epoch improvement below which an epoch counts as stalled;
    /// `None` disables early stopping.
    pub tolerance: Option<f64>,
    /// Consecutive stalled epochs before a fidelity stops.
    pub patience: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
    /// Fidelities to optimize; empty means all. Disabled ones keep their initial values.
    pub enabled: Vec<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            tolerance: Some(1e-4),
            patience: 10,
            fd_step: 1e-4,
            enabled: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment parameters must lie in [0, 1)");
        }
        if !(self.fd_step > 0.0) {
            return bad("finite-difference step must be positive");
        }
        if self.tolerance.is_some_and(|t| !(t >= 0.0)) {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }

    fn is_enabled(&self, r: usize) -> bool {
        self.enabled.get(r).copied().unwrap_or(true)
    }
}

/// What happened during training, per fidelity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub initial_objectives: Vec<f64>,
    pub final_objectives: Vec<f64>,
    /// Full-data objective after each epoch.
    pub trace: Vec<Vec<f64>>,
    /// Scaled minibatch objective of every update.
    pub batch_log: Vec<Vec<f64>>,
}

impl TrainReport {
    pub fn objective_trace(&self) -> &[Vec<f64>] {
        &self.trace
    }

    /// Running maximum of each fidelity's epoch objective.
    pub fn smoothed_trace(&self) -> Vec<Vec<f64>> {
        self.trace
            .iter()
            .map(|t| {
                let mut best = f64::NEG_INFINITY;
                t.iter().map(|&v| { best = best.max(v); best }).collect()
            })
            .collect()
    }

    /// `fidelity,epoch,objective` rows (1-based) of the smoothed trace.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("fidelity,epoch,objective\n");
        for (r, t) in self.smoothed_trace().iter().enumerate() {
            for (e, v) in t.iter().enumerate() {
                writeln!(out, "{},{},{}", r + 1, e + 1, v).unwrap();
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Cached posterior quantities of one map component.
#[derive(Debug, Clone)]
pub struct Component {
    pub design: Design,
    pub kernel: Kernel,
    pub term: LocationTerm,
    /// G^-1 y.
    pub weights: DVector<f64>,
    /// Design rows scaled by sqrt(q).
    pub(crate) scaled_rows: Vec<f64>,
}

/// A fitted model: hyperparameters plus everything prediction needs.
#[derive(Debug, Clone)]
pub struct TrainedMap {
    pub theta: HyperParams,
    pub spec: ModelSpec,
    pub locations: MultiFidelityLocations,
    pub ordering: MaximinOrdering,
    pub sets: ConditioningSets,
    pub data: OrderedData,
    pub sizes: Vec<(usize, usize)>,
    pub components: Vec<Vec<Component>>,
    pub report: Option<TrainReport>,
}

impl TrainedMap {
    /// Rebuilds the caches for given hyperparameters and training data.
    pub fn from_params(
        theta: HyperParams,
        spec: ModelSpec,
        locs: &MultiFidelityLocations,
        ens: &Ensemble,
    ) -> Result<Self> {
        ens.check_against(locs)?;
        if theta.num_fidelities() != locs.num_fidelities() {
            return Err(Error::InvalidArgument(format!(
                "parameters cover {} fidelities but the data has {}",
                theta.num_fidelities(),
                locs.num_fidelities()
            )));
        }
        let ordering = conditional_maximin(locs);
        let sets = build_conditioning_sets(&ordering, locs, spec.m_max, spec.mp_max)?;
        let data = OrderedData::new(ens, &ordering);
        Self::assemble(theta, spec, locs.clone(), ordering, sets, data, None)
    }

    fn assemble(
        theta: HyperParams,
        spec: ModelSpec,
        locations: MultiFidelityLocations,
        ordering: MaximinOrdering,
        sets: ConditioningSets,
        data: OrderedData,
        report: Option<TrainReport>,
    ) -> Result<Self> {
        use rayon::prelude::*;
        let problem = Problem { ordering: &ordering, sets: &sets, data: &data, spec: &spec };
        let mut sizes = Vec::new();
        let mut components = Vec::new();
        for r in 0..ordering.num_fidelities() {
            let t = theta.fidelity(r);
            let s = problem.sizes(t, r);
            let comps = (0..ordering.len(r))
                .into_par_iter()
                .map(|rank| {
                    let (design, term) = problem.location_term(t, r, rank, s)?;
                    let kernel = problem.kernel(t, r, rank, &design);
                    let weights = term.chol.solve(&DVector::from_column_slice(data.column(r, rank)));
                    let scaled_rows = kernel.weighted_rows(&design.x);
                    Ok(Component { design, kernel, term, weights, scaled_rows })
                })
                .collect::<Result<Vec<_>>>()?;
            sizes.push(s);
            components.push(comps);
        }
        Ok(Self { theta, spec, locations, ordering, sets, data, sizes, components, report })
    }

    pub fn num_fidelities(&self) -> usize {
        self.ordering.num_fidelities()
    }

    pub fn replicates(&self) -> usize {
        self.data.replicates()
    }

    pub fn component(&self, r: usize, rank: usize) -> &Component {
        &self.components[r][rank]
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem { ordering: &self.ordering, sets: &self.sets, data: &self.data, spec: &self.spec }
    }
}

/// Default starting point: data-scaled variance, moderate decay.
pub fn initial_params(data: &OrderedData, nfid: usize) -> HyperParams {
    HyperParams::new((0..nfid).map(|r| FidelityParams::initial(data.variance(r))).collect())
}

pub fn fit(ens: &Ensemble, locs: &MultiFidelityLocations, spec: &ModelSpec, config: &TrainConfig) -> Result<TrainedMap> {
    fit_from(ens, locs, spec, config, None)
}

/// Like [`fit`] but starting from `init` when given.
pub fn fit_from(
    ens: &Ensemble,
    locs: &MultiFidelityLocations,
    spec: &ModelSpec,
    config: &TrainConfig,
    init: Option<HyperParams>,
) -> Result<TrainedMap> {
    config.validate()?;
    ens.check_against(locs)?;
    if ens.replicates() == 1 {
        warn!("training on a single replicate; hyperparameters are weakly identified");
    }
    let ordering = conditional_maximin(locs);
    let sets = build_conditioning_sets(&ordering, locs, spec.m_max, spec.mp_max)?;
    let data = OrderedData::new(ens, &ordering);
    let nfid = locs.num_fidelities();
    let mut theta = match init {
        Some(t) if t.num_fidelities() == nfid => t,
        Some(t) => {
            return Err(Error::InvalidArgument(format!(
                "initial parameters cover {} fidelities but the data has {nfid}",
                t.num_fidelities()
            )))
        }
        None => initial_params(&data, nfid),
    };
    let problem = Problem { ordering: &ordering, sets: &sets, data: &data, spec };

    let mut report = TrainReport {
        config: config.clone(),
        initial_objectives: Vec::new(),
        final_objectives: Vec::new(),
        trace: Vec::new(),
        batch_log: Vec::new(),
    };
    for r in 0..nfid {
        let start = problem.fidelity_subtotal(theta.fidelity(r), r).map_err(|e| diverged(r, 0, e, theta.fidelity(r)))?;
        report.initial_objectives.push(start);
        if !config.is_enabled(r) {
            report.final_objectives.push(start);
            report.trace.push(Vec::new());
            report.batch_log.push(Vec::new());
            continue;
        }
        let run = train_fidelity(&problem, r, *theta.fidelity(r), start, config)?;
        info!("fidelity {}: objective {:.4} -> {:.4} in {} epochs", r + 1, start, run.best, run.trace.len());
        theta.fidelities[r] = run.theta;
        report.final_objectives.push(run.best);
        report.trace.push(run.trace);
        report.batch_log.push(run.batches);
    }
    TrainedMap::assemble(theta, *spec, locs.clone(), ordering, sets, data, Some(report))
}

struct FidelityRun {
    theta: FidelityParams,
    best: f64,
    trace: Vec<f64>,
    batches: Vec<f64>,
}

fn diverged(r: usize, epoch: usize, cause: Error, last: &FidelityParams) -> Error {
    if cause.class() != ErrorClass::Numerical {
        return cause;
    }
    Error::Diverged { fidelity: r + 1, epoch, cause: cause.to_string(), last_finite: last.to_vec(r) }
}

fn train_fidelity(
    problem: &Problem<'_>,
    r: usize,
    mut theta: FidelityParams,
    start: f64,
    config: &TrainConfig,
) -> Result<FidelityRun> {
    let nr = problem.ordering.len(r);
    let batch = config.batch_size.min(nr);
    let dim = FidelityParams::count(r);
    let free = problem.spec.free_coordinates(r);
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut step = 0i32;
    let mut rng = substream(config.seed, "batching", r as u64);
    let mut perm: Vec<usize> = (0..nr).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batches = Vec::new();
    let mut prev = start;
    let mut stalled = 0;
    let mut best = (start, theta);

    for epoch in 1..=config.epochs {
        let sizes = problem.sizes(&theta, r);
        perm.shuffle(&mut rng);
        for chunk in perm.chunks(batch) {
            let scale = nr as f64 / chunk.len() as f64;
            let (value, grad) = problem
                .fidelity_gradient(&theta, r, sizes, chunk, scale, config.fd_step)
                .map_err(|e| diverged(r, epoch, e, &theta))?;
            if !value.is_finite() {
                let cause = Error::InvalidArgument(format!("non-finite batch objective {value}"));
                return Err(Error::Diverged { fidelity: r + 1, epoch, cause: cause.to_string(), last_finite: theta.to_vec(r) });
            }
            batches.push(value);
            step += 1;
            let mut next = theta.to_vec(r);
            let (c1, c2) = (1.0 - config.beta1.powi(step), 1.0 - config.beta2.powi(step));
            for &k in &free {
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * grad[k];
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * grad[k] * grad[k];
                next[k] += config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + config.adam_eps);
            }
            if next.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    fidelity: r + 1,
                    epoch,
                    cause: "non-finite parameter update".into(),
                    last_finite: theta.to_vec(r),
                });
            }
            theta = FidelityParams::from_slice(&next);
        }
        let obj = problem.fidelity_subtotal(&theta, r).map_err(|e| diverged(r, epoch, e, &theta))?;
        if !obj.is_finite() {
            return Err(Error::Diverged {
                fidelity: r + 1,
                epoch,
                cause: format!("non-finite objective {obj}"),
                last_finite: theta.to_vec(r),
            });
        }
        trace.push(obj);
        if obj > best.0 {
            best = (obj, theta);
        }
        if let Some(tol) = config.tolerance {
            let rel = (obj - prev) / prev.abs().max(1e-12);
            stalled = if rel < tol { stalled + 1 } else { 0 };
            if stalled >= config.patience {
                info!("fidelity {}: stopping after epoch {epoch}", r + 1);
                break;
            }
        }
        prev = obj;
    }
    // stochastic steps can overshoot; keep the best full-data iterate
    Ok(FidelityRun { theta: best.1, best: best.0, trace, batches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: f64::NAN, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn smoothed_trace_is_running_max() {
        let report = TrainReport {
            config: TrainConfig::default(),
            initial_objectives: vec![0.0],
            final_objectives: vec![0.0],
            trace: vec![vec![1.0, 3.0, 2.0, 4.0]],
            batch_log: vec![vec![]],
        };
        assert_eq!(report.smoothed_trace(), vec![vec![1.0, 3.0, 3.0, 4.0]]);
    }
}
