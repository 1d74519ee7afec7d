//! Versioned JSON scenario files.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::SvmConfig;
use crate::geometry::Polytope;
use crate::icl::{IclConfig, Mode, DEFAULT_MAX_ITERATIONS};
use crate::qp::Backend;
use crate::rmpc::lqr_gain;
use crate::serde_util;
use crate::system::{DisturbanceLaw, LtiTask, TaskSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(rename = "A", with = "serde_util::matrix")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "serde_util::matrix")]
    pub b: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub set: Polytope,
    #[serde(default)]
    pub distribution: DisturbanceLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub known_state: Polytope,
    #[serde(default)]
    pub unknown_state: Option<Polytope>,
    pub input: Polytope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    #[serde(rename = "Q", with = "serde_util::matrix")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "serde_util::matrix")]
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSpec {
    /// LQR gain for the given weights.
    Lqr(Weights),
    /// Explicit gain `K` with `u = Kx`.
    Gain(#[serde(with = "serde_util::matrix")] DMatrix<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeName {
    #[serde(rename = "prob", alias = "probabilistic")]
    Prob,
    #[serde(rename = "robust")]
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSpec {
    pub mode: ModeName,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_epsilon() -> f64 {
    0.3
}

fn default_beta() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSpec {
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_weights")]
    pub class_weights: [f64; 2],
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

fn default_c() -> f64 {
    100.0
}

fn default_weights() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_samples() -> usize {
    1000
}

impl Default for SvmSpec {
    fn default() -> Self {
        Self {
            gamma: None,
            c: default_c(),
            class_weights: default_weights(),
            n_samples: default_samples(),
        }
    }
}

fn default_warm() -> usize {
    2
}

fn default_trials() -> usize {
    100
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub system: SystemSpec,
    pub disturbance: DisturbanceSpec,
    pub constraints: ConstraintSpec,
    #[serde(with = "serde_util::vector")]
    pub x_start: DVector<f64>,
    #[serde(with = "serde_util::vector")]
    pub x_ref: DVector<f64>,
    pub task_length: usize,
    pub horizon: usize,
    pub stage_cost: Weights,
    pub feedback: FeedbackSpec,
    pub certificate: CertificateSpec,
    #[serde(default)]
    pub svm: SvmSpec,
    #[serde(default = "default_warm")]
    pub warm_start_trajectories: usize,
    #[serde(default = "default_trials")]
    pub monte_carlo_trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub qp_backend: Backend,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Checks everything an [`LtiTask`] checks plus the run settings.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.mode()?
            .certificate()
            .map_err(|e| Error::Scenario(e.to_string()))?;
        if self.warm_start_trajectories == 0 {
            return Err(Error::Scenario(
                "warm_start_trajectories must be at least 1".into(),
            ));
        }
        if self.monte_carlo_trials == 0 || self.max_iterations == 0 {
            return Err(Error::Scenario(
                "monte_carlo_trials and max_iterations must be positive".into(),
            ));
        }
        if self.svm.n_samples < self.x_start.len() + 1 {
            return Err(Error::Scenario(
                "svm.n_samples must exceed the state dimension".into(),
            ));
        }
        self.task().map_err(|e| match e {
            Error::Scenario(_) => e,
            other => Error::Scenario(other.to_string()),
        })?;
        Ok(())
    }

    pub fn gain(&self) -> Result<DMatrix<f64>> {
        match &self.feedback {
            FeedbackSpec::Lqr(w) => {
                let (a, b) = (&self.system.a, &self.system.b);
                if w.q.shape() != a.shape()
                    || w.r.shape() != (b.ncols(), b.ncols())
                    || b.nrows() != a.nrows()
                {
                    return Err(Error::Scenario(
                        "LQR weights do not match the system".into(),
                    ));
                }
                lqr_gain(a, b, &w.q, &w.r)
            }
            FeedbackSpec::Gain(k) => Ok(k.clone()),
        }
    }

    pub fn task(&self) -> Result<LtiTask> {
        LtiTask::new(TaskSpec {
            a: self.system.a.clone(),
            b: self.system.b.clone(),
            disturbance: self.disturbance.set.clone(),
            disturbance_law: self.disturbance.distribution,
            known_state: self.constraints.known_state.clone(),
            unknown_state: self.constraints.unknown_state.clone(),
            input: self.constraints.input.clone(),
            x_start: self.x_start.clone(),
            x_ref: self.x_ref.clone(),
            task_length: self.task_length,
            horizon: self.horizon,
            q_stage: self.stage_cost.q.clone(),
            r_stage: self.stage_cost.r.clone(),
            gain: self.gain()?,
        })
    }

    pub fn mode(&self) -> Result<Mode> {
        Ok(match self.certificate.mode {
            ModeName::Prob => Mode::Probabilistic {
                epsilon: self.certificate.epsilon,
                beta: self.certificate.beta,
            },
            ModeName::Robust => Mode::Robust,
        })
    }

    pub fn icl_config(&self) -> Result<IclConfig> {
        Ok(IclConfig {
            mode: self.mode()?,
            svm: SvmConfig {
                gamma: self.svm.gamma,
                c: self.svm.c,
                class_weights: self.svm.class_weights,
                n_samples: self.svm.n_samples,
            },
            warm_start_trajectories: self.warm_start_trajectories,
            max_iterations: self.max_iterations,
            master_seed: self.master_seed,
            backend: self.qp_backend,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SCENARIO: &str = include_str!("../../../../scenarios/double_integrator.json");

    #[test]
    fn shipped_scenario_loads() {
        let s = Scenario::from_json(SCENARIO).unwrap();
        let task = s.task().unwrap();
        assert_eq!(task.true_state().num_rows(), 6);
        assert_eq!(task.task_length, 10);
        assert_eq!(task.horizon, 4);
        assert!(task.known_rows_are_true_rows());
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut v: serde_json::Value = serde_json::from_str(SCENARIO).unwrap();
        v["horizon"] = serde_json::json!(10);
        assert!(matches!(
            Scenario::from_json(&v.to_string()),
            Err(Error::Scenario(_))
        ));

        let mut v: serde_json::Value = serde_json::from_str(SCENARIO).unwrap();
        v["schema_version"] = serde_json::json!(2);
        assert!(matches!(
            Scenario::from_json(&v.to_string()),
            Err(Error::Scenario(_))
        ));

        let mut v: serde_json::Value = serde_json::from_str(SCENARIO).unwrap();
        v["certificate"]["epsilon"] = serde_json::json!(1.5);
        assert!(matches!(
            Scenario::from_json(&v.to_string()),
            Err(Error::Scenario(_))
        ));

        assert!(matches!(Scenario::from_json("{"), Err(Error::Scenario(_))));

        let mut v: serde_json::Value = serde_json::from_str(SCENARIO).unwrap();
        v["horizn"] = serde_json::json!(4);
        assert!(matches!(
            Scenario::from_json(&v.to_string()),
            Err(Error::Scenario(_))
        ));
    }
}
