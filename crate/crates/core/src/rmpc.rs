//! Robust MPC with affine disturbance feedback
//! `u_k = Σ_{l<k} M_{k,l} w_l + v_k`, exact robustification over the
//! disturbance support, the robust terminal set and the Riccati terminal cost.

use std::collections::HashMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimator::ConstraintEstimate;
use crate::geometry::Polytope;
use crate::qp::{Backend, QpProblem, QpReport, QpSolver, QpStatus, Triplets};
use crate::system::{ControlFailure, Controller};

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 1_000_000;
/// Quadratic weight on feedback gains and auxiliary variables.
const REGULARIZATION: f64 = 1e-8;

/// Everything the controller is allowed to know about the task. The true
/// state constraints are deliberately absent.
#[derive(Debug, Clone)]
pub struct DesignModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub disturbance: Polytope,
    pub input: Polytope,
    pub q_stage: DMatrix<f64>,
    pub r_stage: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub horizon: usize,
    pub task_length: usize,
}

impl DesignModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.gain
    }
}

/// Infinite-horizon LQR: returns `(P, K)` with `u = Kx` and
/// `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gain_for = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r + b.transpose() * p * b;
        let rhs = b.transpose() * p * a;
        s.cholesky()
            .map(|c| -c.solve(&rhs))
            .ok_or_else(|| Error::InvalidArgument("R + BᵀPB is not positive definite".into()))
    };
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..RICCATI_MAX_ITER {
        let k = gain_for(&p)?;
        let next = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        residual = (&next - &p).amax();
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= RICCATI_TOL {
            let k = gain_for(&p)?;
            return Ok((p, k));
        }
    }
    Err(Error::RiccatiNotConverged(residual))
}

pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    riccati(a, b, q, r).map(|(_, k)| k)
}

/// Riccati solution for the stage weights, used as terminal weight.
pub fn terminal_cost(model: &DesignModel) -> Result<DMatrix<f64>> {
    riccati(&model.a, &model.b, &model.q_stage, &model.r_stage).map(|(p, _)| p)
}

fn empty_polytope(n: usize) -> Polytope {
    let mut h = DMatrix::zeros(2, n);
    h[(0, 0)] = 1.0;
    h[(1, 0)] = -1.0;
    Polytope::new(h, DVector::from_element(2, -1.0)).expect("valid rows")
}

/// Robust terminal set: states from which `u = Kx` keeps the estimated state
/// and input constraints satisfied for `steps` further steps under every
/// disturbance sequence.
pub fn terminal_set(
    model: &DesignModel,
    estimate: &ConstraintEstimate,
    steps: usize,
) -> Result<Polytope> {
    let n = model.state_dim();
    let state = &estimate.state_set;
    let input = &estimate.input_set;
    if state.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: state.dim(),
        });
    }
    let mut base: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..state.num_rows() {
        base.push((state.normals().row(i).transpose(), state.offsets()[i]));
    }
    for i in 0..input.num_rows() {
        let row = (input.normals().row(i) * &model.gain).transpose();
        base.push((row, input.offsets()[i]));
    }
    let a_cl = model.closed_loop();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for (row, h) in &base {
        // a · A_clⁱ, with the tightening accumulated over earlier powers
        let mut a = row.transpose();
        let mut tau = 0.0;
        for _ in 0..=steps {
            let rhs = h - tau;
            if a.amax() <= 1e-14 * (1.0 + row.amax()) {
                if rhs < 0.0 {
                    return Ok(empty_polytope(n));
                }
            } else {
                rows.push(a.iter().copied().collect());
                offsets.push(rhs);
            }
            tau += model.disturbance.support(&a.transpose())?;
            a = &a * &a_cl;
        }
    }
    if rows.is_empty() {
        return Err(Error::Unbounded);
    }
    let stacked = Polytope::from_rows(&rows, &offsets)?;
    Ok(stacked.reduce().unwrap_or(stacked))
}

/// Optimal policy of one MPC problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcDecision {
    /// `feedback[k][l] = M_{k,l}` for `l < k`; `feedback[0]` is empty.
    pub feedback: Vec<Vec<DMatrix<f64>>>,
    pub nominal_inputs: Vec<DVector<f64>>,
    pub nominal_states: Vec<DVector<f64>>,
}

impl MpcDecision {
    /// `Φ_{k,l}` for `l < k`, with `x_k = x̄_k + Σ_l Φ_{k,l} w_l`.
    pub fn state_response(&self, model: &DesignModel, k: usize) -> Vec<DMatrix<f64>> {
        let n = model.state_dim();
        let power = |p: usize| (0..p).fold(DMatrix::identity(n, n), |acc, _| &model.a * acc);
        (0..k)
            .map(|l| {
                let mut phi = power(k - 1 - l);
                for i in l + 1..k {
                    phi += power(k - 1 - i) * &model.b * &self.feedback[i][l];
                }
                phi
            })
            .collect()
    }

    /// `max_{w ∈ W^k} aᵀx_k` by stage-wise support functions.
    pub fn worst_case_state(&self, model: &DesignModel, a: &DVector<f64>, k: usize) -> Result<f64> {
        let mut value = a.dot(&self.nominal_states[k]);
        for phi in self.state_response(model, k) {
            value += model.disturbance.support(&(phi.transpose() * a))?;
        }
        Ok(value)
    }

    /// `max_{w ∈ W^k} aᵀu_k` by stage-wise support functions.
    pub fn worst_case_input(&self, model: &DesignModel, a: &DVector<f64>, k: usize) -> Result<f64> {
        let mut value = a.dot(&self.nominal_inputs[k]);
        for m in &self.feedback[k] {
            value += model.disturbance.support(&(m.transpose() * a))?;
        }
        Ok(value)
    }
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub u: DVector<f64>,
    pub decision: MpcDecision,
    /// `report.objective` includes the constant part of the cost.
    pub report: QpReport,
}

#[derive(Debug, Clone)]
pub enum MpcError {
    Infeasible(QpReport),
    NotConverged(QpReport),
}

impl MpcError {
    pub fn into_error(self, t: usize) -> Error {
        match self {
            MpcError::Infeasible(_) => Error::MpcInfeasible { t },
            MpcError::NotConverged(_) => Error::MpcNotConverged { t },
        }
    }
}

/// Sparse affine expression over QP variables.
#[derive(Debug, Clone, Default)]
struct Affine {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Identifies the expression up to sign, since `|e| = |−e|`.
    fn key(&self) -> Vec<u64> {
        let flip = self.coeffs.first().is_some_and(|c| c.1 < 0.0);
        let s = if flip { -1.0 } else { 1.0 };
        let mut key: Vec<u64> = Vec::with_capacity(2 * self.coeffs.len() + 1);
        for &(i, v) in &self.coeffs {
            key.push(i as u64);
            key.push((s * v + 0.0).to_bits());
        }
        key.push((s * self.constant + 0.0).to_bits());
        key
    }
}

/// `coeffs · z ≤ rhs − rhs_x · x`.
struct Row {
    coeffs: Vec<(usize, f64)>,
    rhs: f64,
    rhs_x: Option<DVector<f64>>,
}

enum Support {
    Box {
        center: DVector<f64>,
        radius: DVector<f64>,
    },
    Dual {
        g: DMatrix<f64>,
        h: DVector<f64>,
    },
}

struct Builder<'a> {
    model: &'a DesignModel,
    n_vars: usize,
    ineq: Vec<Row>,
    eq: Vec<Row>,
    support: Support,
    abs_cache: HashMap<Vec<u64>, usize>,
}

impl Builder<'_> {
    fn new_var(&mut self) -> usize {
        self.n_vars += 1;
        self.n_vars - 1
    }

    /// Variable `s` with `s ≥ |e|`.
    fn abs_var(&mut self, e: &Affine) -> usize {
        let key = e.key();
        if let Some(&s) = self.abs_cache.get(&key) {
            return s;
        }
        let s = self.new_var();
        for sign in [1.0, -1.0] {
            let mut coeffs: Vec<(usize, f64)> =
                e.coeffs.iter().map(|&(i, v)| (i, sign * v)).collect();
            coeffs.push((s, -1.0));
            self.ineq.push(Row {
                coeffs,
                rhs: -sign * e.constant,
                rhs_x: None,
            });
        }
        self.abs_cache.insert(key, s);
        s
    }

    /// Linear terms and constant whose value, at the optimum over auxiliary
    /// variables, equals `max_{w∈W} wᵀe`.
    fn support_of(&mut self, e: &[Affine]) -> Result<(Vec<(usize, f64)>, f64)> {
        let n = e.len();
        if e.iter().all(Affine::is_constant) {
            let dir = DVector::from_fn(n, |c, _| e[c].constant);
            return Ok((Vec::new(), self.model.disturbance.support(&dir)?));
        }
        let mut terms = Vec::new();
        let mut constant = 0.0;
        match &self.support {
            Support::Box { center, radius } => {
                let (center, radius) = (center.clone(), radius.clone());
                for (c, ec) in e.iter().enumerate() {
                    if center[c] != 0.0 {
                        constant += center[c] * ec.constant;
                        terms.extend(ec.coeffs.iter().map(|&(i, v)| (i, center[c] * v)));
                    }
                    if radius[c] == 0.0 {
                        continue;
                    }
                    if ec.is_constant() {
                        constant += radius[c] * ec.constant.abs();
                    } else {
                        let s = self.abs_var(ec);
                        terms.push((s, radius[c]));
                    }
                }
            }
            Support::Dual { g, h } => {
                // max wᵀe over Gw ≤ h equals min hᵀz over Gᵀz = e, z ≥ 0
                let (g, h) = (g.clone(), h.clone());
                let z: Vec<usize> = (0..g.nrows()).map(|_| self.new_var()).collect();
                for &zi in &z {
                    self.ineq.push(Row {
                        coeffs: vec![(zi, -1.0)],
                        rhs: 0.0,
                        rhs_x: None,
                    });
                }
                for (c, ec) in e.iter().enumerate() {
                    let mut coeffs: Vec<(usize, f64)> = z
                        .iter()
                        .enumerate()
                        .map(|(i, &zi)| (zi, g[(i, c)]))
                        .collect();
                    coeffs.extend(ec.coeffs.iter().map(|&(i, v)| (i, -v)));
                    self.eq.push(Row {
                        coeffs,
                        rhs: ec.constant,
                        rhs_x: None,
                    });
                }
                terms.extend(z.iter().enumerate().map(|(i, &zi)| (zi, h[i])));
            }
        }
        Ok((terms, constant))
    }
}

/// The QP for one `(estimate, terminal set)` pair; only the measured state
/// changes between solves.
pub struct RobustMpc {
    model: DesignModel,
    n: usize,
    m: usize,
    horizon: usize,
    n_v: usize,
    template: QpProblem,
    rhs_x: DMatrix<f64>,
    q_x: DMatrix<f64>,
    /// `A^k` for k = 0..=N.
    powers: Vec<DMatrix<f64>>,
    weights: Vec<DMatrix<f64>>,
    solver: Box<dyn QpSolver>,
    dump: Option<(PathBuf, usize)>,
}

impl std::fmt::Debug for RobustMpc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobustMpc")
            .field("vars", &self.template.num_vars())
            .field("rows", &self.template.b.len())
            .finish()
    }
}

fn m_index(n_v: usize, m: usize, n: usize, k: usize, l: usize, r: usize, c: usize) -> usize {
    n_v + (k * (k - 1) / 2 + l) * m * n + r * n + c
}

impl RobustMpc {
    pub fn new(
        model: &DesignModel,
        estimate: &ConstraintEstimate,
        terminal: &Polytope,
        p_terminal: &DMatrix<f64>,
        backend: Backend,
    ) -> Result<Self> {
        let (n, m, horizon) = (model.state_dim(), model.input_dim(), model.horizon);
        for d in [estimate.state_set.dim(), terminal.dim(), p_terminal.nrows()] {
            if d != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: d,
                });
            }
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let n_v = horizon * m;
        let n_m = horizon * (horizon - 1) / 2 * m * n;
        let powers: Vec<DMatrix<f64>> =
            std::iter::successors(Some(DMatrix::identity(n, n)), |p| Some(&model.a * p))
                .take(horizon + 1)
                .collect();
        let support = match model.disturbance.as_box() {
            Some((lo, hi)) => Support::Box {
                center: (&lo + &hi) * 0.5,
                radius: (&hi - &lo) * 0.5,
            },
            None => Support::Dual {
                g: model.disturbance.normals().clone(),
                h: model.disturbance.offsets().clone(),
            },
        };
        let mut builder = Builder {
            model,
            n_vars: n_v + n_m,
            ineq: Vec::new(),
            eq: Vec::new(),
            support,
            abs_cache: HashMap::new(),
        };

        // a · x̄_k plus worst case over the disturbances entering x_k
        let state_row = |b: &mut Builder, a: DVector<f64>, rhs: f64, k: usize| -> Result<()> {
            let at = a.transpose();
            let mut coeffs = Vec::new();
            for i in 0..k {
                let g = &at * &powers[k - 1 - i] * &model.b;
                coeffs.extend((0..m).filter(|&r| g[r] != 0.0).map(|r| (i * m + r, g[r])));
            }
            let mut constant = 0.0;
            for l in 0..k {
                let base = &at * &powers[k - 1 - l];
                let mut e: Vec<Affine> = (0..n)
                    .map(|c| Affine {
                        coeffs: Vec::new(),
                        constant: base[c],
                    })
                    .collect();
                for i in (l + 1)..k {
                    let g = &at * &powers[k - 1 - i] * &model.b;
                    for (c, ec) in e.iter_mut().enumerate() {
                        for r in 0..m {
                            if g[r] != 0.0 {
                                ec.coeffs.push((m_index(n_v, m, n, i, l, r, c), g[r]));
                            }
                        }
                    }
                }
                let (terms, cst) = b.support_of(&e)?;
                coeffs.extend(terms);
                constant += cst;
            }
            let rhs_x = (&at * &powers[k]).transpose();
            b.ineq.push(Row {
                coeffs,
                rhs: rhs - constant,
                rhs_x: Some(rhs_x),
            });
            Ok(())
        };

        let state = &estimate.state_set;
        for k in 1..horizon {
            for i in 0..state.num_rows() {
                state_row(
                    &mut builder,
                    state.normals().row(i).transpose(),
                    state.offsets()[i],
                    k,
                )?;
            }
        }
        for i in 0..terminal.num_rows() {
            state_row(
                &mut builder,
                terminal.normals().row(i).transpose(),
                terminal.offsets()[i],
                horizon,
            )?;
        }
        let input = &estimate.input_set;
        for k in 0..horizon {
            for i in 0..input.num_rows() {
                let h = input.normals().row(i);
                let mut coeffs: Vec<(usize, f64)> = (0..m)
                    .filter(|&r| h[r] != 0.0)
                    .map(|r| (k * m + r, h[r]))
                    .collect();
                let mut constant = 0.0;
                for l in 0..k {
                    let e: Vec<Affine> = (0..n)
                        .map(|c| Affine {
                            coeffs: (0..m)
                                .filter(|&r| h[r] != 0.0)
                                .map(|r| (m_index(n_v, m, n, k, l, r, c), h[r]))
                                .collect(),
                            constant: 0.0,
                        })
                        .collect();
                    let (terms, cst) = builder.support_of(&e)?;
                    coeffs.extend(terms);
                    constant += cst;
                }
                builder.ineq.push(Row {
                    coeffs,
                    rhs: input.offsets()[i] - constant,
                    rhs_x: None,
                });
            }
        }

        let n_vars = builder.n_vars;
        let n_eq = builder.eq.len();
        let rows: Vec<Row> = builder.eq.into_iter().chain(builder.ineq).collect();
        let mut a = Triplets::new(rows.len(), n_vars);
        let mut b = Vec::with_capacity(rows.len());
        let mut rhs_x = DMatrix::zeros(rows.len(), n);
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                a.push(i, j, v);
            }
            b.push(row.rhs);
            if let Some(rx) = &row.rhs_x {
                rhs_x.row_mut(i).copy_from(&rx.transpose());
            }
        }

        // nominal cost: Σ_{k<N} ‖x̄_k − r‖²_Q + ‖v_k‖²_R + ‖x̄_N − r‖²_P
        let weights: Vec<DMatrix<f64>> = (0..=horizon)
            .map(|k| {
                if k == horizon {
                    p_terminal.clone()
                } else {
                    model.q_stage.clone()
                }
            })
            .collect();
        let mut h = DMatrix::zeros(n_v, n_v);
        let mut q_x = DMatrix::zeros(n_v, n);
        let mut q_c = DVector::zeros(n_v);
        for k in 1..=horizon {
            let mut s = DMatrix::zeros(n, n_v);
            for i in 0..k {
                s.view_mut((0, i * m), (n, m))
                    .copy_from(&(&powers[k - 1 - i] * &model.b));
            }
            let sq = s.transpose() * &weights[k];
            h += &sq * &s * 2.0;
            q_x += &sq * &powers[k] * 2.0;
            q_c -= &sq * &model.x_ref * 2.0;
        }
        for k in 0..horizon {
            let mut block = h.view_mut((k * m, k * m), (m, m));
            block += &model.r_stage * 2.0;
        }
        let mut p = Triplets::new(n_vars, n_vars);
        for r in 0..n_v {
            for c in r..n_v {
                p.push(r, c, h[(r, c)]);
            }
        }
        for j in n_v..n_vars {
            p.push(j, j, 2.0 * REGULARIZATION);
        }
        let mut q = vec![0.0; n_vars];
        q[..n_v].copy_from_slice(q_c.as_slice());

        Ok(Self {
            model: model.clone(),
            n,
            m,
            horizon,
            n_v,
            template: QpProblem { p, q, a, b, n_eq },
            rhs_x,
            q_x,
            powers,
            weights,
            solver: backend.solver(),
            dump: None,
        })
    }

    /// Writes `qp_<j>_<t>.json` into `dir` for every solve.
    pub fn with_dump(mut self, dir: PathBuf, iteration: usize) -> Self {
        self.dump = Some((dir, iteration));
        self
    }

    pub fn num_vars(&self) -> usize {
        self.template.num_vars()
    }

    pub fn num_constraints(&self) -> usize {
        self.template.b.len()
    }

    /// The QP instance for measured state `x`.
    pub fn problem(&self, x: &DVector<f64>) -> QpProblem {
        let mut problem = self.template.clone();
        let shift = &self.rhs_x * x;
        for (b, s) in problem.b.iter_mut().zip(shift.iter()) {
            *b -= s;
        }
        let lin = &self.q_x * x;
        for (q, l) in problem.q.iter_mut().zip(lin.iter()) {
            *q += l;
        }
        problem
    }

    fn constant_cost(&self, x: &DVector<f64>) -> f64 {
        (0..=self.horizon)
            .map(|k| {
                let e = &self.powers[k] * x - &self.model.x_ref;
                (e.transpose() * &self.weights[k] * &e)[(0, 0)]
            })
            .sum()
    }

    pub fn solve(&self, x: &DVector<f64>) -> std::result::Result<MpcSolution, MpcError> {
        self.solve_at(x, None)
    }

    fn solve_at(
        &self,
        x: &DVector<f64>,
        t: Option<usize>,
    ) -> std::result::Result<MpcSolution, MpcError> {
        let problem = self.problem(x);
        let sol = self.solver.solve(&problem);
        if let (Some((dir, j)), Some(t)) = (&self.dump, t) {
            let dump = json!({
                "iteration": j,
                "t": t,
                "x": x.as_slice(),
                "n_eq": problem.n_eq,
                "P": problem.p.entries,
                "q": problem.q,
                "A": problem.a.entries,
                "b": problem.b,
                "num_vars": problem.num_vars(),
                "solution": sol.x,
                "status": sol.report.status,
            });
            let _ = std::fs::write(dir.join(format!("qp_{j}_{t}.json")), dump.to_string());
        }
        let mut report = sol.report.clone();
        match report.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => return Err(MpcError::Infeasible(report)),
            _ => return Err(MpcError::NotConverged(report)),
        }
        report.objective += self.constant_cost(x);
        let (n, m) = (self.n, self.m);
        let nominal_inputs: Vec<DVector<f64>> = (0..self.horizon)
            .map(|k| DVector::from_column_slice(&sol.x[k * m..(k + 1) * m]))
            .collect();
        let feedback = (0..self.horizon)
            .map(|k| {
                (0..k)
                    .map(|l| {
                        DMatrix::from_fn(m, n, |r, c| sol.x[m_index(self.n_v, m, n, k, l, r, c)])
                    })
                    .collect()
            })
            .collect();
        let mut nominal_states = vec![x.clone()];
        for v in &nominal_inputs {
            let next = &self.model.a * nominal_states.last().unwrap() + &self.model.b * v;
            nominal_states.push(next);
        }
        Ok(MpcSolution {
            u: nominal_inputs[0].clone(),
            decision: MpcDecision {
                feedback,
                nominal_inputs,
                nominal_states,
            },
            report,
        })
    }

    fn act(&self, t: usize, x: &DVector<f64>) -> std::result::Result<DVector<f64>, ControlFailure> {
        match self.solve_at(x, Some(t)) {
            Ok(s) => Ok(s.u),
            Err(MpcError::Infeasible(_)) => Err(ControlFailure::Infeasible),
            Err(MpcError::NotConverged(_)) => Err(ControlFailure::NotConverged),
        }
    }
}

impl Controller for RobustMpc {
    fn control(
        &mut self,
        t: usize,
        x: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, ControlFailure> {
        self.act(t, x)
    }
}

impl Controller for &RobustMpc {
    fn control(
        &mut self,
        t: usize,
        x: &DVector<f64>,
    ) -> std::result::Result<DVector<f64>, ControlFailure> {
        self.act(t, x)
    }
}

/// One-shot solve: builds the QP for this estimate and solves it at `x`.
pub fn solve_step(
    model: &DesignModel,
    x: &DVector<f64>,
    estimate: &ConstraintEstimate,
    terminal: &Polytope,
    p_terminal: &DMatrix<f64>,
) -> Result<std::result::Result<MpcSolution, MpcError>> {
    Ok(RobustMpc::new(model, estimate, terminal, p_terminal, Backend::default())?.solve(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{init_estimate, oracle_estimate};
    use crate::system::tests::benchmark_task;
    use crate::system::{rollout, LtiTask};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn riccati_fixed_point() {
        let (p, _) = riccati(&scalar(0.5), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let rhs = 1.0 + 0.25 * p[(0, 0)] - 0.25 * p[(0, 0)] * p[(0, 0)] / (1.0 + p[(0, 0)]);
        assert!((rhs - p[(0, 0)]).abs() <= 1e-10);

        let q = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let (p, _) = riccati(
            &DMatrix::zeros(2, 2),
            &DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            &q,
            &scalar(1.0),
        )
        .unwrap();
        assert_relative_eq!(p, q, epsilon = 1e-12);
    }

    #[test]
    fn benchmark_gain_is_stabilizing_and_consistent() {
        let task = benchmark_task();
        let model = task.design_model();
        let p = terminal_cost(&model).unwrap();
        let k = lqr_gain(&task.a, &task.b, &task.q_stage, &task.r_stage).unwrap();
        assert_relative_eq!(k, task.gain, epsilon = 1e-9);
        let res = &task.q_stage
            + task.a.transpose() * &p * &task.a
            + task.a.transpose() * &p * &task.b * &k
            - &p;
        assert!(res.amax() < 1e-8);
        let closed = model.closed_loop();
        assert!(closed.complex_eigenvalues().iter().all(|z| z.norm() < 1.0));
    }

    #[test]
    fn terminal_set_without_steps_is_constraint_set() {
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let t0 = terminal_set(&model, &est, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-25.0..25.0));
            let u = &task.gain * &x;
            let expect = task.true_state().contains(&x, 1e-9).unwrap()
                && task.input.contains(&u, 1e-9).unwrap();
            assert_eq!(t0.contains(&x, 1e-9).unwrap(), expect, "{x}");
        }
    }

    #[test]
    fn terminal_set_is_robustly_invariant_for_remaining_steps() {
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let steps = task.task_length - task.horizon;
        let term = terminal_set(&model, &est, steps).unwrap();
        assert!(!term.is_empty(1e-9));
        assert!(term.contains(&DVector::zeros(2), 0.0).unwrap());
        let verts = term.vertices().unwrap();
        let closed = model.closed_loop();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for v in &verts {
            for _ in 0..50 {
                let mut x = v.clone();
                for _ in 0..steps {
                    assert!(task.true_state().contains(&x, 1e-7).unwrap());
                    assert!(task.input.contains(&(&task.gain * &x), 1e-7).unwrap());
                    let w = DVector::from_fn(2, |_, _| if rng.gen::<bool>() { 0.5 } else { -0.5 });
                    x = &closed * &x + w;
                }
            }
        }
    }

    #[test]
    fn origin_fixed_point() {
        let mut task = benchmark_task();
        task.x_ref = DVector::zeros(2);
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let term = terminal_set(&model, &est, task.task_length - task.horizon).unwrap();
        let p = terminal_cost(&model).unwrap();
        let sol = solve_step(&model, &DVector::zeros(2), &est, &term, &p)
            .unwrap()
            .unwrap();
        assert!(sol.u.amax() < 1e-6);
        assert!(sol.report.objective.abs() < 1e-6);
    }

    fn lq_oracle(task: &LtiTask, p_terminal: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
        // backward recursion for V_k(x) = xᵀP_k x + 2s_kᵀx + const
        let (a, b, q, r) = (&task.a, &task.b, &task.q_stage, &task.r_stage);
        let xr = &task.x_ref;
        let mut p = p_terminal.clone();
        let mut s = -(p_terminal * xr);
        let mut gains = Vec::new();
        for _ in 0..task.horizon {
            let m = r + b.transpose() * &p * b;
            let chol = m.clone().cholesky().unwrap();
            let k = -chol.solve(&(b.transpose() * &p * a));
            let kff = -chol.solve(&(b.transpose() * &s));
            gains.push((k.clone(), kff.clone()));
            let acl = a + b * &k;
            let p_next = q + k.transpose() * r * &k + acl.transpose() * &p * &acl;
            let s_next =
                -(q * xr) + k.transpose() * r * &kff + acl.transpose() * (&p * b * &kff + &s);
            p = p_next;
            s = s_next;
        }
        let (k, kff) = gains.last().unwrap();
        k * x + kff
    }

    #[test]
    fn zero_disturbance_matches_lq() {
        let mut task = benchmark_task();
        task.disturbance = Polytope::symmetric_box(2, 0.0);
        task.known_state = Polytope::symmetric_box(2, 1e4);
        task.input = Polytope::symmetric_box(1, 1e4);
        let task = task
            .with_true_state(Polytope::symmetric_box(2, 1e4))
            .unwrap();
        let model = task.design_model();
        let est = init_estimate(&task);
        let term = Polytope::symmetric_box(2, 1e4);
        let p = terminal_cost(&model).unwrap();
        let x = DVector::from_vec(vec![-15.0, 15.0]);
        let sol = solve_step(&model, &x, &est, &term, &p).unwrap().unwrap();
        let oracle = lq_oracle(&task, &p, &x);
        assert!((&sol.u - &oracle).amax() < 1e-6, "{} vs {}", sol.u, oracle);
        for k in 1..task.horizon {
            for l in 0..k {
                assert!(sol.decision.feedback[k][l].amax() < 1e-6);
            }
        }
        for k in 0..task.horizon {
            let next = &task.a * &sol.decision.nominal_states[k]
                + &task.b * &sol.decision.nominal_inputs[k];
            assert!((next - &sol.decision.nominal_states[k + 1]).amax() < 1e-12);
        }
    }

    #[test]
    fn true_constraints_keep_rollouts_safe() {
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let term = terminal_set(&model, &est, task.task_length - task.horizon).unwrap();
        let p = terminal_cost(&model).unwrap();
        let mpc = RobustMpc::new(&model, &est, &term, &p, Backend::default()).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rec = rollout(&task, &mut &mpc, 1, &mut rng).unwrap();
            assert!(rec.success, "seed {seed}: {:?}", rec.flags);
        }
    }

    #[test]
    fn backends_agree() {
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let term = terminal_set(&model, &est, task.task_length - task.horizon).unwrap();
        let p = terminal_cost(&model).unwrap();
        let x = task.x_start.clone();
        let ip = RobustMpc::new(&model, &est, &term, &p, Backend::InteriorPoint)
            .unwrap()
            .solve(&x)
            .unwrap();
        let admm = RobustMpc::new(&model, &est, &term, &p, Backend::Admm)
            .unwrap()
            .solve(&x)
            .unwrap();
        assert!((ip.u[0] - admm.u[0]).abs() < 1e-2, "{} vs {}", ip.u, admm.u);
        assert!(
            (ip.report.objective - admm.report.objective).abs()
                < 1e-3 * ip.report.objective.abs().max(1.0)
        );
    }

    #[test]
    fn infeasible_start_is_reported() {
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let term = terminal_set(&model, &est, task.task_length - task.horizon).unwrap();
        let p = terminal_cost(&model).unwrap();
        let far = DVector::from_vec(vec![19.0, 19.0]);
        let res = solve_step(&model, &far, &est, &term, &p).unwrap();
        assert!(matches!(res, Err(MpcError::Infeasible(_))));
    }

    #[test]
    fn general_polytope_support_matches_box() {
        // the box written with a redundant diagonal row goes through the dual path
        let task = benchmark_task();
        let model = task.design_model();
        let est = oracle_estimate(&task);
        let term = terminal_set(&model, &est, task.task_length - task.horizon).unwrap();
        let p = terminal_cost(&model).unwrap();
        let mut dual_model = model.clone();
        dual_model.disturbance = Polytope::from_rows(
            &[
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
                vec![1.0, 1.0],
            ],
            &[0.5, 0.5, 0.5, 0.5, 5.0],
        )
        .unwrap();
        let x = task.x_start.clone();
        let a = RobustMpc::new(&model, &est, &term, &p, Backend::default())
            .unwrap()
            .solve(&x)
            .unwrap();
        let b = RobustMpc::new(&dual_model, &est, &term, &p, Backend::default())
            .unwrap()
            .solve(&x)
            .unwrap();
        assert!((a.report.objective - b.report.objective).abs() < 1e-5 * a.report.objective.abs());
        assert!((a.u[0] - b.u[0]).abs() < 1e-4);
    }
}
