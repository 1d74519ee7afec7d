//! The disturbed linear plant `x⁺ = Ax + Bu + w`, disturbance sampling,
//! closed-loop rollouts and the ground-truth feasibility oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::rmpc::DesignModel;
use crate::serde_util;

/// Absolute tolerance separating true constraint violations from solver noise.
pub const FLAG_TOL: f64 = 1e-7;

/// How disturbances are drawn from their (box) support.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceLaw {
    /// Independent uniform coordinates on the box.
    #[default]
    Uniform,
    /// Uniformly chosen box corner.
    Vertex,
}

/// Everything needed to build an [`LtiTask`].
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub disturbance: Polytope,
    pub disturbance_law: DisturbanceLaw,
    pub known_state: Polytope,
    /// Rows appended to the known ones to form the true state constraints.
    pub unknown_state: Option<Polytope>,
    pub input: Polytope,
    pub x_start: DVector<f64>,
    pub x_ref: DVector<f64>,
    pub task_length: usize,
    pub horizon: usize,
    pub q_stage: DMatrix<f64>,
    pub r_stage: DMatrix<f64>,
    pub gain: DMatrix<f64>,
}

/// A validated task. The true state constraints are only reachable through
/// [`LtiTask::true_state`]; controllers are built from [`DesignModel`],
/// which does not carry them.
#[derive(Debug, Clone)]
pub struct LtiTask {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub disturbance: Polytope,
    pub disturbance_law: DisturbanceLaw,
    pub known_state: Polytope,
    pub input: Polytope,
    pub x_start: DVector<f64>,
    pub x_ref: DVector<f64>,
    pub task_length: usize,
    pub horizon: usize,
    pub q_stage: DMatrix<f64>,
    pub r_stage: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    true_state: Polytope,
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn same_row(p: &Polytope, i: usize, q: &Polytope, k: usize) -> bool {
    let (a, b) = (p.normals().row(i), q.normals().row(k));
    let (na, nb) = (a.norm(), b.norm());
    let tol = 1e-12 * (1.0 + p.offsets()[i].abs() / na);
    (a / na - b / nb).amax() <= tol && (p.offsets()[i] / na - q.offsets()[k] / nb).abs() <= tol
}

impl LtiTask {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        let n = spec.a.nrows();
        let m = spec.b.ncols();
        let bad = |msg: String| Err(Error::InvalidTask(msg));
        if spec.a.ncols() != n || spec.b.nrows() != n {
            return bad(format!(
                "A is {}x{}, B is {}x{}",
                n,
                spec.a.ncols(),
                spec.b.nrows(),
                m
            ));
        }
        for (name, dim, want) in [
            ("disturbance", spec.disturbance.dim(), n),
            ("known_state", spec.known_state.dim(), n),
            ("input", spec.input.dim(), m),
            ("x_start", spec.x_start.len(), n),
            ("x_ref", spec.x_ref.len(), n),
        ] {
            if dim != want {
                return bad(format!("{name} has dimension {dim}, expected {want}"));
            }
        }
        if spec.q_stage.shape() != (n, n)
            || spec.r_stage.shape() != (m, m)
            || spec.gain.shape() != (m, n)
        {
            return bad("cost or gain matrix has wrong shape".into());
        }
        if spec.horizon == 0 || spec.task_length == 0 {
            return bad("horizon and task length must be positive".into());
        }
        if spec.horizon >= spec.task_length {
            return bad(format!(
                "horizon N = {} must be < task length T = {}",
                spec.horizon, spec.task_length
            ));
        }
        let true_state = match &spec.unknown_state {
            Some(u) => {
                if u.dim() != n {
                    return bad(format!(
                        "unknown_state has dimension {}, expected {n}",
                        u.dim()
                    ));
                }
                spec.known_state.intersect(u)?
            }
            None => spec.known_state.clone(),
        };
        let origin = DVector::zeros(n);
        if !true_state.contains(&origin, 0.0)? {
            return bad("origin must satisfy the true state constraints".into());
        }
        if !spec.input.contains(&DVector::zeros(m), 0.0)? {
            return bad("origin must satisfy the input constraints".into());
        }
        if spec.disturbance.bounding_box().is_err() {
            return bad("disturbance support must be bounded and nonempty".into());
        }
        let closed = &spec.a + &spec.b * &spec.gain;
        let rho = spectral_radius(&closed);
        if rho >= 1.0 {
            return bad(format!(
                "A + BK is not Schur stable (spectral radius {rho:.4})"
            ));
        }
        if spec.q_stage.symmetric_eigenvalues().min() < -1e-12 {
            return bad("stage state weight must be positive semidefinite".into());
        }
        if spec.r_stage.clone().cholesky().is_none() {
            return bad("stage input weight must be positive definite".into());
        }
        Ok(Self {
            a: spec.a,
            b: spec.b,
            disturbance: spec.disturbance,
            disturbance_law: spec.disturbance_law,
            known_state: spec.known_state,
            input: spec.input,
            x_start: spec.x_start,
            x_ref: spec.x_ref,
            task_length: spec.task_length,
            horizon: spec.horizon,
            q_stage: spec.q_stage,
            r_stage: spec.r_stage,
            gain: spec.gain,
            true_state,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Ground-truth state constraints. Only the oracle and evaluation code
    /// may read these.
    pub fn true_state(&self) -> &Polytope {
        &self.true_state
    }

    /// True when every known row also appears among the true rows.
    pub fn known_rows_are_true_rows(&self) -> bool {
        (0..self.known_state.num_rows()).all(|i| {
            (0..self.true_state.num_rows())
                .any(|k| same_row(&self.known_state, i, &self.true_state, k))
        })
    }

    /// The controller-side view of the task.
    pub fn design_model(&self) -> DesignModel {
        DesignModel {
            a: self.a.clone(),
            b: self.b.clone(),
            disturbance: self.disturbance.clone(),
            input: self.input.clone(),
            q_stage: self.q_stage.clone(),
            r_stage: self.r_stage.clone(),
            gain: self.gain.clone(),
            x_ref: self.x_ref.clone(),
            horizon: self.horizon,
            task_length: self.task_length,
        }
    }

    /// Copy with the true set replaced, for evaluation scenarios.
    pub fn with_true_state(&self, true_state: Polytope) -> Result<Self> {
        if true_state.dim() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                got: true_state.dim(),
            });
        }
        Ok(Self {
            true_state,
            ..self.clone()
        })
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = x - &self.x_ref;
        (e.transpose() * &self.q_stage * &e)[(0, 0)] + (u.transpose() * &self.r_stage * u)[(0, 0)]
    }
}

/// One full task execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    #[serde(with = "serde_util::vectors")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "serde_util::vectors")]
    pub inputs: Vec<DVector<f64>>,
    #[serde(with = "serde_util::vectors")]
    pub disturbances: Vec<DVector<f64>>,
    pub flags: Vec<bool>,
    /// All flags true and the rollout ran to completion.
    pub success: bool,
    pub cost: f64,
    /// Time index at which the controller failed to return an input.
    pub aborted_at: Option<usize>,
}

impl IterationRecord {
    pub fn violations(&self) -> usize {
        self.flags.iter().filter(|f| !**f).count()
    }

    pub fn has_violation(&self) -> bool {
        self.flags.iter().any(|f| !f)
    }
}

/// Why a controller could not produce an input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlFailure {
    Infeasible,
    NotConverged,
}

pub trait Controller {
    fn control(
        &mut self,
        t: usize,
        x: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, ControlFailure>;
}

/// Draws one disturbance from a box support.
pub fn sample_disturbance<R: Rng + ?Sized>(
    w: &Polytope,
    law: DisturbanceLaw,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let (lo, hi) = w.as_box().ok_or(Error::UnsupportedDistribution)?;
    Ok(DVector::from_fn(lo.len(), |i, _| {
        let u: f64 = rng.gen();
        match law {
            DisturbanceLaw::Uniform if hi[i] > lo[i] => lo[i] + (hi[i] - lo[i]) * u,
            DisturbanceLaw::Vertex if u < 0.5 => lo[i],
            DisturbanceLaw::Vertex => hi[i],
            DisturbanceLaw::Uniform => lo[i],
        }
    }))
}

/// A full disturbance sequence for one iteration.
pub fn sample_sequence<R: Rng + ?Sized>(task: &LtiTask, rng: &mut R) -> Result<Vec<DVector<f64>>> {
    (0..task.task_length)
        .map(|_| sample_disturbance(&task.disturbance, task.disturbance_law, rng))
        .collect()
}

pub fn step(
    task: &LtiTask,
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = task.state_dim();
    for got in [x.len(), w.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    if u.len() != task.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: task.input_dim(),
            got: u.len(),
        });
    }
    Ok(&task.a * x + &task.b * u + w)
}

/// Feasibility flag per state against the true constraints.
pub fn classify_trajectory(task: &LtiTask, states: &[DVector<f64>]) -> Vec<bool> {
    states
        .iter()
        .map(|x| task.true_state.contains(x, FLAG_TOL).unwrap_or(false))
        .collect()
}

/// Runs one iteration from `x_start` against a given disturbance sequence.
/// Flags are computed after the rollout ends.
pub fn rollout_with<C: Controller + ?Sized>(
    task: &LtiTask,
    controller: &mut C,
    iteration: usize,
    disturbances: &[DVector<f64>],
) -> Result<IterationRecord> {
    if disturbances.len() != task.task_length {
        return Err(Error::InvalidArgument(format!(
            "expected {} disturbances, got {}",
            task.task_length,
            disturbances.len()
        )));
    }
    let mut states = vec![task.x_start.clone()];
    let mut inputs = Vec::with_capacity(task.task_length);
    let mut used = Vec::with_capacity(task.task_length);
    let mut cost = 0.0;
    let mut aborted_at = None;
    for (t, w) in disturbances.iter().enumerate() {
        let x = &states[t];
        let u = match controller.control(t, x) {
            Ok(u) => u,
            Err(_) => {
                aborted_at = Some(t);
                break;
            }
        };
        cost += task.stage_cost(x, &u);
        let next = step(task, x, &u, w)?;
        inputs.push(u);
        used.push(w.clone());
        states.push(next);
    }
    let flags = classify_trajectory(task, &states);
    let success = aborted_at.is_none() && flags.iter().all(|f| *f);
    Ok(IterationRecord {
        iteration,
        states,
        inputs,
        disturbances: used,
        flags,
        success,
        cost,
        aborted_at,
    })
}

pub fn rollout<C: Controller + ?Sized, R: Rng + ?Sized>(
    task: &LtiTask,
    controller: &mut C,
    iteration: usize,
    rng: &mut R,
) -> Result<IterationRecord> {
    let disturbances = sample_sequence(task, rng)?;
    rollout_with(task, controller, iteration, &disturbances)
}

/// Applies `u = Kx`, ignoring constraints.
pub struct LinearFeedback<'a>(pub &'a DMatrix<f64>);

impl Controller for LinearFeedback<'_> {
    fn control(
        &mut self,
        _t: usize,
        x: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, ControlFailure> {
        Ok(self.0 * x)
    }
}

/// Open-loop inputs drawn uniformly from the bounding box of a polytope,
/// rejected until they land inside it.
pub struct RandomInput<'a, R: Rng> {
    pub input: &'a Polytope,
    pub rng: &'a mut R,
}

impl<R: Rng> Controller for RandomInput<'_, R> {
    fn control(
        &mut self,
        _t: usize,
        _x: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, ControlFailure> {
        let (lo, hi) = self
            .input
            .bounding_box()
            .map_err(|_| ControlFailure::Infeasible)?;
        for _ in 0..10_000 {
            let u = DVector::from_fn(lo.len(), |i, _| {
                if hi[i] > lo[i] {
                    self.rng.gen_range(lo[i]..=hi[i])
                } else {
                    lo[i]
                }
            });
            if self.input.contains(&u, 0.0).unwrap_or(false) {
                return Ok(u);
            }
        }
        Err(ControlFailure::Infeasible)
    }
}
