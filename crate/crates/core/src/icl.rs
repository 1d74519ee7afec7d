//! The iterative learning loop: warm start, estimate updates, controller
//! rebuilds, certificate bookkeeping and termination.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    cvx_update, init_estimate, record_outcome, svm_update, Certificate, ConstraintEstimate,
    EstimateMethod, SvmConfig,
};
use crate::geometry::Polytope;
use crate::qp::Backend;
use crate::rmpc::{terminal_cost, terminal_set, DesignModel, RobustMpc};
use crate::rng::{stream, Purpose};
use crate::system::{
    rollout, rollout_with, sample_sequence, IterationRecord, LtiTask, RandomInput,
};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const SCALE_FACTOR: f64 = 1.25;
pub const MAX_SCALINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Probabilistic { epsilon: f64, beta: f64 },
    Robust,
}

impl Mode {
    pub fn certificate(&self) -> Result<Certificate> {
        match *self {
            Mode::Probabilistic { epsilon, beta } => Certificate::probabilistic(epsilon, beta),
            Mode::Robust => Ok(Certificate::robust()),
        }
    }

    /// ε of the guarantee; zero in robust mode.
    pub fn epsilon(&self) -> f64 {
        match *self {
            Mode::Probabilistic { epsilon, .. } => epsilon,
            Mode::Robust => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclConfig {
    pub mode: Mode,
    pub svm: SvmConfig,
    pub warm_start_trajectories: usize,
    pub max_iterations: usize,
    pub master_seed: u64,
    pub backend: Backend,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Probabilistic {
                epsilon: 0.3,
                beta: 0.01,
            },
            svm: SvmConfig::default(),
            warm_start_trajectories: 2,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            master_seed: 0,
            backend: Backend::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Certified,
    IterationCap,
}

/// What iteration `iteration` ran with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationEntry {
    pub iteration: usize,
    pub estimate: ConstraintEstimate,
    pub terminal: Polytope,
    /// Number of ×1.25 enlargements applied to make the problem feasible.
    pub scalings: usize,
    /// Why an attempted update was not adopted.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub mode: Mode,
    /// Last iteration index that was executed or certified.
    pub iteration: usize,
    pub outcome: RunOutcome,
    pub certificate: Certificate,
    /// Final estimate; the certified one when the certificate is closed.
    pub estimate: ConstraintEstimate,
    pub terminal: Polytope,
    pub history: Vec<IterationEntry>,
    pub warm_start: Vec<IterationRecord>,
}

/// A controller ready to run with a fixed estimate.
pub struct Prepared {
    pub estimate: ConstraintEstimate,
    pub terminal: Polytope,
    pub mpc: RobustMpc,
    pub scalings: usize,
}

/// Builds the terminal set and MPC for `estimate`, feasible at the start
/// state. `None` when the terminal set is empty or the first problem is
/// infeasible.
pub fn try_prepare(
    model: &DesignModel,
    x_start: &nalgebra::DVector<f64>,
    estimate: &ConstraintEstimate,
    p_terminal: &DMatrix<f64>,
    backend: Backend,
) -> Result<Option<(Polytope, RobustMpc)>> {
    let steps = model.task_length - model.horizon;
    let terminal = terminal_set(model, estimate, steps)?;
    if terminal.is_empty(crate::geometry::LP_FEAS_TOL) {
        return Ok(None);
    }
    let mpc = RobustMpc::new(model, estimate, &terminal, p_terminal, backend)?;
    Ok(mpc.solve(x_start).is_ok().then_some((terminal, mpc)))
}

/// [`try_prepare`] with the estimate enlarged by `SCALE_FACTOR` (and kept
/// inside the known set) until feasible, at most `MAX_SCALINGS` times.
pub fn prepare(
    task: &LtiTask,
    model: &DesignModel,
    estimate: ConstraintEstimate,
    p_terminal: &DMatrix<f64>,
    backend: Backend,
    iteration: usize,
) -> Result<Prepared> {
    let mut estimate = estimate;
    for scalings in 0..=MAX_SCALINGS {
        if scalings > 0 {
            estimate = estimate.scaled(SCALE_FACTOR, &task.known_state)?;
        }
        if let Some((terminal, mpc)) =
            try_prepare(model, &task.x_start, &estimate, p_terminal, backend)?
        {
            return Ok(Prepared {
                estimate,
                terminal,
                mpc,
                scalings,
            });
        }
    }
    Err(Error::UnrecoverableInfeasibility { iteration })
}

/// Random-input excitation from `x_start`. Records carry iteration 0.
pub fn warm_start(task: &LtiTask, n_traj: usize, master_seed: u64) -> Result<Vec<IterationRecord>> {
    (0..n_traj as u64)
        .map(|i| {
            let mut input_rng = stream(master_seed, Purpose::WarmStart, 2 * i);
            let mut w_rng = stream(master_seed, Purpose::WarmStart, 2 * i + 1);
            let mut ctrl = RandomInput {
                input: &task.input,
                rng: &mut input_rng,
            };
            rollout(task, &mut ctrl, 0, &mut w_rng)
        })
        .collect()
}

/// Disturbance sequence of controlled iteration `iteration`.
pub fn iteration_disturbances(
    task: &LtiTask,
    master_seed: u64,
    iteration: usize,
) -> Result<Vec<nalgebra::DVector<f64>>> {
    sample_sequence(
        task,
        &mut stream(master_seed, Purpose::Iteration, iteration as u64),
    )
}

/// Runs the learning loop. Returns the final state and the controlled
/// iteration records (warm start excluded).
pub fn run(task: &LtiTask, config: &IclConfig) -> Result<(RunState, Vec<IterationRecord>)> {
    let model = task.design_model();
    let p_terminal = terminal_cost(&model)?;
    let seed = config.master_seed;
    let warm = warm_start(task, config.warm_start_trajectories, seed)?;
    let mut data: Vec<IterationRecord> = warm.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut history: Vec<IterationEntry> = Vec::new();
    let mut cert = config.mode.certificate()?;

    let mut notes = Vec::new();
    let first = match svm_update(
        &data,
        task,
        &config.svm,
        1,
        &mut stream(seed, Purpose::SvmSampler, 1),
    ) {
        Ok((est, _)) => est,
        Err(e) => {
            notes.push(format!("svm: {e}"));
            init_estimate(task)
        }
    };
    let mut current = prepare(task, &model, first, &p_terminal, config.backend, 1)?;
    cert = cert.estimate_changed(1);
    let mut outcome = RunOutcome::IterationCap;
    let mut last_iteration = 0;

    for j in 1..=config.max_iterations {
        if j >= 2 && records.last().is_some_and(IterationRecord::has_violation) {
            match svm_update(
                &data,
                task,
                &config.svm,
                j,
                &mut stream(seed, Purpose::SvmSampler, j as u64),
            ) {
                Ok((est, _)) => {
                    current = prepare(task, &model, est, &p_terminal, config.backend, j)?;
                    cert = cert.estimate_changed(j);
                }
                Err(e) => notes.push(format!("svm: {e}")),
            }
        }
        if config.mode == Mode::Robust {
            match cvx_update(&data, task, j) {
                Ok(est) => {
                    match try_prepare(&model, &task.x_start, &est, &p_terminal, config.backend)? {
                        Some((terminal, mpc)) => {
                            current = Prepared {
                                estimate: est,
                                terminal,
                                mpc,
                                scalings: 0,
                            };
                            cert = cert.close_robust(j);
                            history.push(IterationEntry {
                                iteration: j,
                                estimate: current.estimate.clone(),
                                terminal: current.terminal.clone(),
                                scalings: 0,
                                notes: std::mem::take(&mut notes),
                            });
                            last_iteration = j;
                            outcome = RunOutcome::Certified;
                            break;
                        }
                        None => notes.push("cvx estimate infeasible".into()),
                    }
                }
                Err(e) => notes.push(format!("cvx: {e}")),
            }
        }

        let disturbances = iteration_disturbances(task, seed, j)?;
        let record = rollout_with(task, &mut &current.mpc, j, &disturbances)?;
        history.push(IterationEntry {
            iteration: j,
            estimate: current.estimate.clone(),
            terminal: current.terminal.clone(),
            scalings: current.scalings,
            notes: std::mem::take(&mut notes),
        });
        cert = record_outcome(&cert, record.success, false, j);
        data.push(record.clone());
        records.push(record);
        last_iteration = j;
        if cert.is_closed() {
            outcome = RunOutcome::Certified;
            break;
        }
    }

    let state = RunState {
        mode: config.mode,
        iteration: last_iteration,
        outcome,
        certificate: cert,
        estimate: current.estimate,
        terminal: current.terminal,
        history,
        warm_start: warm,
    };
    Ok((state, records))
}

impl RunState {
    /// Whether the final estimate comes from the convex hull path.
    pub fn is_robust_certified(&self) -> bool {
        self.outcome == RunOutcome::Certified && self.estimate.method == EstimateMethod::Cvx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::tests::benchmark_task;

    #[test]
    fn warm_start_shapes_and_input_bounds() {
        let task = benchmark_task();
        let recs = warm_start(&task, 2, 1).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs.iter().map(|r| r.states.len()).sum::<usize>(), 22);
        for r in &recs {
            for u in &r.inputs {
                assert!(u[0].abs() <= 30.0);
            }
        }
        assert_eq!(recs, warm_start(&task, 2, 1).unwrap());
    }

    #[test]
    fn zero_input_set_gives_pure_disturbance_response() {
        let task = benchmark_task();
        let mut t = task.clone();
        t.input = Polytope::symmetric_box(1, 0.0);
        let recs = warm_start(&t, 1, 3).unwrap();
        for (k, u) in recs[0].inputs.iter().enumerate() {
            assert_eq!(u[0], 0.0);
            let next = &t.a * &recs[0].states[k] + &recs[0].disturbances[k];
            assert!((next - &recs[0].states[k + 1]).amax() < 1e-12);
        }
    }

    #[test]
    fn fully_known_robust_run_terminates_sound() {
        let task = benchmark_task();
        let known = task.with_true_state(task.known_state.clone()).unwrap();
        let config = IclConfig {
            mode: Mode::Robust,
            master_seed: 5,
            ..IclConfig::default()
        };
        let (state, records) = run(&known, &config).unwrap();
        assert_eq!(state.outcome, RunOutcome::Certified);
        assert_eq!(state.estimate.method, EstimateMethod::Cvx);
        assert!(records.iter().all(|r| r.success));
        for v in state.estimate.state_set.vertices().unwrap() {
            assert!(known.true_state().contains(&v, 1e-9).unwrap());
        }
    }

    #[test]
    fn probabilistic_run_is_deterministic_and_valid() {
        let task = benchmark_task();
        let config = IclConfig {
            mode: Mode::Probabilistic {
                epsilon: 0.5,
                beta: 0.01,
            },
            master_seed: 2,
            ..IclConfig::default()
        };
        let (state, records) = run(&task, &config).unwrap();
        assert_eq!(state.outcome, RunOutcome::Certified);
        let n_it = state.certificate.n_it.unwrap();
        let j_bar = state.certificate.j_bar.unwrap();
        let last = state.certificate.terminated_at.unwrap();
        assert_eq!(last - j_bar + 1, n_it);
        let tail = &records[records.len() - n_it..];
        assert!(tail.iter().all(|r| r.success));
        let frozen = &state.history[j_bar - 1].estimate;
        for e in &state.history[j_bar - 1..] {
            assert_eq!(&e.estimate, frozen);
        }
        let (again, again_records) = run(&task, &config).unwrap();
        assert_eq!(again.certificate, state.certificate);
        assert_eq!(again_records, records);
    }
}
