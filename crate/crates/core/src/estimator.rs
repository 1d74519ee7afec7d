//! Constraint estimates built from labelled closed-loop data, the sample
//! bound of the probabilistic certificate and the certificate state.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, PointCloud, Polytope};
use crate::svm::{SvmModel, SvmParams};
use crate::system::{IterationRecord, LtiTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// Known constraints only.
    KnownOnly,
    /// SVM boundary intersected with the known constraints.
    Svm,
    /// Convex hull of feasible states and the origin.
    Cvx,
    /// The true constraints, for baselines.
    Oracle,
}

/// Summary of the data an estimate was built from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub iterations: usize,
    pub points: usize,
    pub violations: usize,
}

impl Fingerprint {
    pub fn of(records: &[IterationRecord]) -> Self {
        Self {
            iterations: records.len(),
            points: records.iter().map(|r| r.states.len()).sum(),
            violations: records.iter().map(IterationRecord::violations).sum(),
        }
    }
}

/// The state constraint estimate used by the controller, with the (never
/// estimated) input constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEstimate {
    pub state_set: Polytope,
    pub input_set: Polytope,
    pub method: EstimateMethod,
    pub source_iteration: usize,
    pub fingerprint: Fingerprint,
}

impl ConstraintEstimate {
    pub fn new(
        state_set: Polytope,
        input_set: Polytope,
        method: EstimateMethod,
        source_iteration: usize,
    ) -> Self {
        Self {
            state_set,
            input_set,
            method,
            source_iteration,
            fingerprint: Fingerprint::default(),
        }
    }

    /// Same estimate with `ĥ` scaled by `gamma` and intersected with the
    /// known constraints.
    pub fn scaled(&self, gamma: f64, known: &Polytope) -> Result<Self> {
        let state_set = self.state_set.scale(gamma)?.intersect(known)?;
        let state_set = state_set.reduce().unwrap_or(state_set);
        Ok(Self {
            state_set,
            ..self.clone()
        })
    }
}

pub fn init_estimate(task: &LtiTask) -> ConstraintEstimate {
    ConstraintEstimate::new(
        task.known_state.clone(),
        task.input.clone(),
        EstimateMethod::KnownOnly,
        1,
    )
}

/// The true constraints wrapped as an estimate. Evaluation use only.
pub fn oracle_estimate(task: &LtiTask) -> ConstraintEstimate {
    ConstraintEstimate::new(
        task.true_state().clone(),
        task.input.clone(),
        EstimateMethod::Oracle,
        0,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// RBF width; `None` selects `2 / diam²` of the known set.
    pub gamma: Option<f64>,
    pub c: f64,
    pub class_weights: [f64; 2],
    pub n_samples: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            gamma: None,
            c: 100.0,
            class_weights: [1.0, 1.0],
            n_samples: 1000,
        }
    }
}

impl SvmConfig {
    pub fn params(&self, known: &Polytope) -> Result<SvmParams> {
        let gamma = match self.gamma {
            Some(g) => g,
            None => SvmParams::default_gamma(known)?,
        };
        Ok(SvmParams {
            gamma,
            c: self.c,
            class_weights: self.class_weights,
        })
    }
}

/// Recorded states with their flags, plus the origin labelled feasible.
fn labelled_states(records: &[IterationRecord], dim: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut points = vec![DVector::zeros(dim)];
    let mut labels = vec![1.0];
    for r in records {
        for (x, f) in r.states.iter().zip(&r.flags) {
            points.push(x.clone());
            labels.push(if *f { 1.0 } else { -1.0 });
        }
    }
    (points, labels)
}

/// Trains the SVM on every recorded state and the origin, and returns the
/// hull of the sampled feasible region inside the known constraints.
pub fn svm_update<R: Rng + ?Sized>(
    records: &[IterationRecord],
    task: &LtiTask,
    config: &SvmConfig,
    iteration: usize,
    rng: &mut R,
) -> Result<(ConstraintEstimate, SvmModel)> {
    if records.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (points, labels) = labelled_states(records, task.state_dim());
    let params = config.params(&task.known_state)?;
    let model = SvmModel::train(&PointCloud::new(points)?, &labels, params)?;
    let state_set = model.inner_polytope(&task.known_state, config.n_samples, rng)?;
    let mut estimate = ConstraintEstimate::new(
        state_set,
        task.input.clone(),
        EstimateMethod::Svm,
        iteration,
    );
    estimate.fingerprint = Fingerprint::of(records);
    Ok((estimate, model))
}

/// Convex hull of the origin and every feasible-flagged state.
pub fn cvx_update(
    records: &[IterationRecord],
    task: &LtiTask,
    iteration: usize,
) -> Result<ConstraintEstimate> {
    let mut points = vec![DVector::zeros(task.state_dim())];
    for r in records {
        points.extend(
            r.states
                .iter()
                .zip(&r.flags)
                .filter(|(_, f)| **f)
                .map(|(x, _)| x.clone()),
        );
    }
    let state_set = convex_hull(&PointCloud::new(points)?)?;
    let mut estimate = ConstraintEstimate::new(
        state_set,
        task.input.clone(),
        EstimateMethod::Cvx,
        iteration,
    );
    estimate.fingerprint = Fingerprint::of(records);
    Ok(estimate)
}

/// Smallest `N` with `(1 − ε)^N ≤ β`.
pub fn required_successes(epsilon: f64, beta: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must lie in (0, 1), got {beta}"
        )));
    }
    let ratio = -beta.ln() / -(-epsilon).ln_1p();
    Ok(((ratio - 1e-9).ceil() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    Probabilistic,
    Robust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mode: CertificateMode,
    pub epsilon: f64,
    pub beta: f64,
    /// Required consecutive successes; `None` in robust mode.
    pub n_it: Option<usize>,
    /// Consecutive successes with the current estimate.
    pub l: usize,
    /// First iteration that used the certified estimate.
    pub j_bar: Option<usize>,
    /// Iteration after which the loop stopped.
    pub terminated_at: Option<usize>,
    /// First iteration that used the current estimate.
    pub frozen_since: usize,
}

impl Certificate {
    pub fn probabilistic(epsilon: f64, beta: f64) -> Result<Self> {
        let n_it = required_successes(epsilon, beta)?;
        Ok(Self {
            mode: CertificateMode::Probabilistic,
            epsilon,
            beta,
            n_it: Some(n_it),
            l: 0,
            j_bar: None,
            terminated_at: None,
            frozen_since: 1,
        })
    }

    pub fn robust() -> Self {
        Self {
            mode: CertificateMode::Robust,
            epsilon: 0.0,
            beta: 0.0,
            n_it: None,
            l: 0,
            j_bar: None,
            terminated_at: None,
            frozen_since: 1,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.j_bar.is_some()
    }

    /// A new estimate takes effect at `iteration`.
    pub fn estimate_changed(&self, iteration: usize) -> Self {
        Self {
            l: 0,
            frozen_since: iteration,
            ..self.clone()
        }
    }

    /// Closes a robust certificate on adoption of a sound estimate.
    pub fn close_robust(&self, iteration: usize) -> Self {
        Self {
            j_bar: Some(iteration),
            terminated_at: Some(iteration),
            frozen_since: iteration,
            ..self.clone()
        }
    }
}

/// Advances the success counter after iteration `iteration` and closes the
/// certificate once `N_it` consecutive successes used the same estimate.
pub fn record_outcome(
    cert: &Certificate,
    success: bool,
    estimate_changed: bool,
    iteration: usize,
) -> Certificate {
    if cert.is_closed() {
        return cert.clone();
    }
    let mut next = cert.clone();
    if estimate_changed {
        next.l = 0;
        next.frozen_since = iteration;
    } else if success {
        next.l += 1;
    } else {
        next.l = 0;
    }
    if let Some(n_it) = next.n_it {
        if next.l >= n_it {
            next.l = n_it;
            next.j_bar = Some(next.frozen_since);
            next.terminated_at = Some(iteration);
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::tests::benchmark_task;
    use crate::system::{classify_trajectory, TaskSpec};

    fn record(task: &LtiTask, iteration: usize, states: Vec<DVector<f64>>) -> IterationRecord {
        let flags = classify_trajectory(task, &states);
        let success = flags.iter().all(|f| *f);
        IterationRecord {
            iteration,
            inputs: vec![DVector::zeros(1); states.len() - 1],
            disturbances: vec![DVector::zeros(2); states.len() - 1],
            states,
            flags,
            success,
            cost: 0.0,
            aborted_at: None,
        }
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn sample_bound_examples() {
        assert_eq!(required_successes(0.5, 0.5).unwrap(), 1);
        assert_eq!(required_successes(0.3, 0.01).unwrap(), 13);
        assert_eq!(required_successes(0.5, 0.05).unwrap(), 5);
        assert!(required_successes(0.0, 0.5).is_err());
        assert!(required_successes(0.5, 1.0).is_err());
    }

    #[test]
    fn sample_bound_monotone() {
        let grid: Vec<f64> = (1..20).map(|i| i as f64 / 20.0).collect();
        for &b in &grid {
            for w in grid.windows(2) {
                assert!(
                    required_successes(w[1], b).unwrap() <= required_successes(w[0], b).unwrap()
                );
                assert!(
                    required_successes(b, w[1]).unwrap() <= required_successes(b, w[0]).unwrap()
                );
            }
        }
    }

    #[test]
    fn certificate_counter() {
        let cert = Certificate::probabilistic(0.5, 0.05).unwrap();
        let n = cert.n_it.unwrap();
        let mut c = cert.clone();
        c.l = n - 1;
        let closed = record_outcome(&c, true, false, 9);
        assert!(closed.is_closed());
        assert_eq!(closed.terminated_at, Some(9));

        let mut c = cert.clone();
        c.l = 7;
        let reset = record_outcome(&c, true, true, 4);
        assert_eq!(reset.l, 0);
        assert!(!reset.is_closed());

        let fail = record_outcome(&cert, false, false, 2);
        assert_eq!(fail.l, 0);
        assert!(!fail.is_closed());
    }

    #[test]
    fn j_bar_is_first_use_of_frozen_estimate() {
        let mut c = Certificate::probabilistic(0.5, 0.5)
            .unwrap()
            .estimate_changed(3);
        c = record_outcome(&c, true, false, 3);
        assert_eq!(c.j_bar, Some(3));
        assert_eq!(c.terminated_at, Some(3));
    }

    #[test]
    fn init_estimate_is_known_set() {
        let task = benchmark_task();
        let est = init_estimate(&task);
        assert_eq!(est.state_set, Polytope::symmetric_box(2, 20.0));
        assert_eq!(est.method, EstimateMethod::KnownOnly);
        assert_eq!(est.source_iteration, 1);

        let full = task.with_true_state(task.known_state.clone()).unwrap();
        assert_eq!(init_estimate(&full).state_set, *full.true_state());
    }

    #[test]
    fn cvx_update_is_inner_and_uses_origin() {
        let task = benchmark_task();
        let line = record(
            &task,
            1,
            vec![
                v(&[-1.0, 0.0]),
                v(&[-2.0, 1.0]),
                v(&[-3.0, 2.0]),
                v(&[8.0, 0.0]),
            ],
        );
        let est = cvx_update(&[line], &task, 2).unwrap();
        assert_eq!(est.method, EstimateMethod::Cvx);
        let verts = est.state_set.vertices().unwrap();
        assert_eq!(verts.len(), 3);
        for vert in &verts {
            assert!(task.true_state().contains(vert, 1e-9).unwrap());
        }
        assert!(!est.state_set.contains(&v(&[8.0, 0.0]), 1e-9).unwrap());
    }

    #[test]
    fn cvx_update_rejects_degenerate_data() {
        let task = benchmark_task();
        let rec = record(&task, 1, vec![v(&[1.0, 1.0]), v(&[2.0, 2.0])]);
        assert!(matches!(
            cvx_update(&[rec], &task, 2),
            Err(Error::DegenerateCloud { .. })
        ));
    }

    #[test]
    fn svm_update_single_class_fails() {
        let task = benchmark_task();
        let rec = record(&task, 1, vec![v(&[1.0, 1.0]), v(&[-2.0, 2.0])]);
        let mut rng = crate::rng::stream(1, crate::rng::Purpose::SvmSampler, 1);
        assert!(matches!(
            svm_update(&[rec], &task, &SvmConfig::default(), 2, &mut rng),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn svm_update_from_random_excitation_shrinks_known_set() {
        use crate::rng::{stream, Purpose};
        use crate::system::{rollout, RandomInput};
        let task = benchmark_task();
        let mut records = Vec::new();
        for i in 0..2 {
            let mut input_rng = stream(11, Purpose::WarmStart, 2 * i);
            let mut w_rng = stream(11, Purpose::WarmStart, 2 * i + 1);
            let mut ctrl = RandomInput {
                input: &task.input,
                rng: &mut input_rng,
            };
            records.push(rollout(&task, &mut ctrl, 0, &mut w_rng).unwrap());
        }
        assert!(records.iter().any(IterationRecord::has_violation));
        let mut rng = stream(11, Purpose::SvmSampler, 1);
        let (est, model) = svm_update(&records, &task, &SvmConfig::default(), 1, &mut rng).unwrap();
        assert_eq!(est.method, EstimateMethod::Svm);
        assert_eq!(est.fingerprint.iterations, 2);
        assert!(model.decide(&DVector::zeros(2)) <= 0.0);
        for vert in est.state_set.vertices().unwrap() {
            assert!(task.known_state.contains(&vert, 1e-9).unwrap());
        }
        let known_corners = [[20.0, 20.0], [20.0, -20.0], [-20.0, 20.0], [-20.0, -20.0]];
        assert!(known_corners
            .iter()
            .any(|c| !est.state_set.contains(&v(c), 1e-6).unwrap()));
    }

    #[test]
    fn fully_known_task_spec() {
        let task = benchmark_task();
        let spec = TaskSpec {
            a: task.a.clone(),
            b: task.b.clone(),
            disturbance: task.disturbance.clone(),
            disturbance_law: task.disturbance_law,
            known_state: task.known_state.clone(),
            unknown_state: None,
            input: task.input.clone(),
            x_start: task.x_start.clone(),
            x_ref: task.x_ref.clone(),
            task_length: task.task_length,
            horizon: task.horizon,
            q_stage: task.q_stage.clone(),
            r_stage: task.r_stage.clone(),
            gain: task.gain.clone(),
        };
        let full = LtiTask::new(spec).unwrap();
        assert_eq!(init_estimate(&full).state_set, *full.true_state());
    }
}
