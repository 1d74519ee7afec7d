//! Monte Carlo validation of a frozen estimate against the controller that
//! knows the true constraints, on paired disturbance draws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::{oracle_estimate, ConstraintEstimate};
use crate::geometry::Polytope;
use crate::qp::Backend;
use crate::rmpc::{terminal_cost, terminal_set, RobustMpc};
use crate::rng::{stream, Purpose};
use crate::system::{rollout_with, sample_sequence, IterationRecord, LtiTask, FLAG_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub trials: usize,
    /// Fraction of trials violating the true constraints or aborting.
    pub eps_hat: f64,
    pub failures: usize,
    /// Trials where the MPC became infeasible (counted in `failures`).
    pub aborted: usize,
    /// Fraction of trials leaving the estimated state set.
    pub estimated_set_violation_rate: f64,
    /// Mean closed-loop cost over successful trials.
    pub mean_cost: f64,
    /// Baseline mean cost over the same successful trials.
    pub baseline_mean_cost: f64,
    pub cost_ratio: f64,
    /// Mean closed-loop cost over all trials, aborted ones included.
    pub mean_cost_all: f64,
    pub baseline_mean_cost_all: f64,
    pub baseline_failures: usize,
    pub seed: u64,
}

/// Expected cost gap to the baseline; negative when the estimate is looser
/// than the true constraints.
pub fn performance_loss(report: &ValidationReport) -> f64 {
    report.mean_cost - report.baseline_mean_cost
}

struct Trial {
    success: bool,
    aborted: bool,
    cost: f64,
    left_estimate: bool,
    baseline_success: bool,
    baseline_cost: f64,
}

/// Controller for a fixed estimate with its terminal set.
pub fn frozen_controller(
    task: &LtiTask,
    estimate: &ConstraintEstimate,
    terminal: &Polytope,
    backend: Backend,
) -> Result<RobustMpc> {
    let model = task.design_model();
    let p = terminal_cost(&model)?;
    RobustMpc::new(&model, estimate, terminal, &p, backend)
}

/// Controller that knows the true constraints.
pub fn baseline_controller(task: &LtiTask, backend: Backend) -> Result<RobustMpc> {
    let oracle = oracle_estimate(task);
    let terminal = terminal_set(
        &task.design_model(),
        &oracle,
        task.task_length - task.horizon,
    )?;
    frozen_controller(task, &oracle, &terminal, backend)
}

pub fn validation_disturbances(
    task: &LtiTask,
    seed: u64,
    trial: usize,
) -> Result<Vec<nalgebra::DVector<f64>>> {
    sample_sequence(task, &mut stream(seed, Purpose::Validation, trial as u64))
}

pub fn monte_carlo_validate(
    task: &LtiTask,
    estimate: &ConstraintEstimate,
    terminal: &Polytope,
    n_trials: usize,
    seed: u64,
    backend: Backend,
) -> Result<ValidationReport> {
    let n_trials = n_trials.max(1);
    let mpc = frozen_controller(task, estimate, terminal, backend)?;
    let baseline = baseline_controller(task, backend)?;
    let trials: Vec<Trial> = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<Trial> {
            let w = validation_disturbances(task, seed, i)?;
            let rec = rollout_with(task, &mut &mpc, i + 1, &w)?;
            let base = rollout_with(task, &mut &baseline, i + 1, &w)?;
            let left_estimate = rec
                .states
                .iter()
                .any(|x| !estimate.state_set.contains(x, FLAG_TOL).unwrap_or(false));
            Ok(Trial {
                success: rec.success,
                aborted: rec.aborted_at.is_some(),
                cost: rec.cost,
                left_estimate,
                baseline_success: base.success,
                baseline_cost: base.cost,
            })
        })
        .collect::<Result<_>>()?;

    let n = n_trials as f64;
    let ok: Vec<&Trial> = trials.iter().filter(|t| t.success).collect();
    let failures = n_trials - ok.len();
    let mean = |xs: &mut dyn Iterator<Item = f64>, k: usize| {
        if k == 0 {
            f64::NAN
        } else {
            xs.sum::<f64>() / k as f64
        }
    };
    let mean_cost = mean(&mut ok.iter().map(|t| t.cost), ok.len());
    let baseline_mean_cost = mean(&mut ok.iter().map(|t| t.baseline_cost), ok.len());
    Ok(ValidationReport {
        trials: n_trials,
        eps_hat: failures as f64 / n,
        failures,
        aborted: trials.iter().filter(|t| t.aborted).count(),
        estimated_set_violation_rate: trials.iter().filter(|t| t.left_estimate).count() as f64 / n,
        mean_cost,
        baseline_mean_cost,
        cost_ratio: mean_cost / baseline_mean_cost,
        mean_cost_all: mean(&mut trials.iter().map(|t| t.cost), n_trials),
        baseline_mean_cost_all: mean(&mut trials.iter().map(|t| t.baseline_cost), n_trials),
        baseline_failures: trials.iter().filter(|t| !t.baseline_success).count(),
        seed,
    })
}

/// Further iterations with a frozen estimate, on their own disturbance
/// streams.
pub fn continuation(
    task: &LtiTask,
    estimate: &ConstraintEstimate,
    terminal: &Polytope,
    n: usize,
    seed: u64,
    backend: Backend,
) -> Result<Vec<IterationRecord>> {
    let mpc = frozen_controller(task, estimate, terminal, backend)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let w = sample_sequence(task, &mut stream(seed, Purpose::Continuation, i as u64))?;
            rollout_with(task, &mut &mpc, i + 1, &w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::tests::benchmark_task;

    #[test]
    fn true_estimate_matches_baseline() {
        let task = benchmark_task();
        let oracle = oracle_estimate(&task);
        let terminal = terminal_set(
            &task.design_model(),
            &oracle,
            task.task_length - task.horizon,
        )
        .unwrap();
        let r = monte_carlo_validate(&task, &oracle, &terminal, 8, 3, Backend::default()).unwrap();
        assert_eq!(r.eps_hat, 0.0);
        assert_eq!(r.failures, 0);
        assert!((r.cost_ratio - 1.0).abs() < 1e-12);
        assert!(performance_loss(&r).abs() < 1e-9);
        let again =
            monte_carlo_validate(&task, &oracle, &terminal, 8, 3, Backend::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn loss_identity() {
        let task = benchmark_task();
        let est = crate::estimator::init_estimate(&task);
        let terminal =
            terminal_set(&task.design_model(), &est, task.task_length - task.horizon).unwrap();
        let r = monte_carlo_validate(&task, &est, &terminal, 4, 1, Backend::default()).unwrap();
        assert_eq!(r.trials, 4);
        if r.mean_cost.is_finite() {
            assert!(
                (performance_loss(&r) - (r.cost_ratio - 1.0) * r.baseline_mean_cost).abs() < 1e-9
            );
        }
        assert!((0.0..=1.0).contains(&r.eps_hat));
    }
}
