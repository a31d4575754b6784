//! JSON checkpoints of fitted models.
//!
//! Only unconstrained hyperparameters and settings are stored; prediction
//! caches are rebuilt from the referenced training data on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CorrelationFamily, FidelityParams, HyperParams, ModelKind, ModelSpec};
use crate::train::{TrainConfig, TrainedMap};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEntry {
    /// 1-based.
    pub fidelity: usize,
    pub d1: f64,
    pub d2: f64,
    pub s1: f64,
    pub s2: f64,
    pub gamma: f64,
    pub q0: f64,
    pub q1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qp1: Option<f64>,
}

/// Files the model was trained on, as given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub locations: String,
    pub train: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: TrainConfig,
    pub initial_objectives: Vec<f64>,
    pub final_objectives: Vec<f64>,
    pub epochs_run: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelKind,
    #[serde(rename = "R")]
    pub num_fidelities: usize,
    pub g: f64,
    pub epsilon: f64,
    pub rho_family: CorrelationFamily,
    pub m_max: usize,
    pub mp_max: usize,
    pub theta: Vec<ThetaEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingRecord>,
}

impl Checkpoint {
    pub fn from_map(map: &TrainedMap, model: ModelKind, data: Option<DataPaths>) -> Self {
        let theta = map
            .theta
            .fidelities
            .iter()
            .enumerate()
            .map(|(r, p)| ThetaEntry {
                fidelity: r + 1,
                d1: p.d1,
                d2: p.d2,
                s1: p.s1,
                s2: p.s2,
                gamma: p.gamma,
                q0: p.q0,
                q1: p.q1,
                qp0: (r > 0).then_some(p.qp0),
                qp1: (r > 0).then_some(p.qp1),
            })
            .collect();
        let training = map.report.as_ref().map(|rep| TrainingRecord {
            config: rep.config.clone(),
            initial_objectives: rep.initial_objectives.clone(),
            final_objectives: rep.final_objectives.clone(),
            epochs_run: rep.trace.iter().map(Vec::len).collect(),
            data: data.clone(),
        });
        let s = &map.spec;
        Self {
            version: CHECKPOINT_VERSION,
            model,
            num_fidelities: map.num_fidelities(),
            g: s.g,
            epsilon: s.epsilon,
            rho_family: s.rho,
            m_max: s.m_max,
            mp_max: s.mp_max,
            theta,
            training,
        }
    }

    /// Checkpoint of the independent baseline, which has no hyperparameters.
    pub fn independent(num_fidelities: usize, data: Option<DataPaths>) -> Self {
        let s = ModelSpec::default();
        Self {
            version: CHECKPOINT_VERSION,
            model: ModelKind::Indep,
            num_fidelities,
            g: s.g,
            epsilon: s.epsilon,
            rho_family: s.rho,
            m_max: s.m_max,
            mp_max: s.mp_max,
            theta: Vec::new(),
            training: Some(TrainingRecord {
                config: TrainConfig::default(),
                initial_objectives: Vec::new(),
                final_objectives: Vec::new(),
                epochs_run: Vec::new(),
                data,
            }),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            g: self.g,
            epsilon: self.epsilon,
            rho: self.rho_family,
            m_max: self.m_max,
            mp_max: self.mp_max,
            nonlinear: self.model != ModelKind::Linear,
        }
    }

    pub fn hyperparams(&self) -> Result<HyperParams> {
        if self.theta.len() != self.num_fidelities {
            return Err(Error::InvalidArgument(format!(
                "checkpoint lists {} parameter blocks for {} fidelities",
                self.theta.len(),
                self.num_fidelities
            )));
        }
        let mut fids = Vec::with_capacity(self.theta.len());
        for (r, t) in self.theta.iter().enumerate() {
            if t.fidelity != r + 1 {
                return Err(Error::InvalidArgument(format!("parameter block {} is labeled fidelity {}", r + 1, t.fidelity)));
            }
            let mut v = vec![t.d1, t.d2, t.s1, t.s2, t.gamma, t.q0, t.q1];
            if r > 0 {
                match (t.qp0, t.qp1) {
                    (Some(a), Some(b)) => v.extend([a, b]),
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "fidelity {} needs cross-fidelity parameters qp0 and qp1",
                            r + 1
                        )))
                    }
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite parameter for fidelity {}", r + 1)));
            }
            fids.push(FidelityParams::from_slice(&v));
        }
        Ok(HyperParams::new(fids))
    }

    pub fn data_paths(&self) -> Option<&DataPaths> {
        self.training.as_ref().and_then(|t| t.data.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }
}
