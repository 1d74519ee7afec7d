//! Small dense linear programs, solved through the interior point backend.

use nalgebra::{DMatrix, DVector};

use crate::qp::{InteriorPointSolver, QpProblem, QpSolver, QpStatus, Triplets};

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
    Failed(QpStatus),
}

/// minimize cᵀx  s.t.  A_eq x = b_eq,  A_in x ≤ b_in
pub fn minimize(
    c: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
    a_eq: Option<(&DMatrix<f64>, &DVector<f64>)>,
) -> LpOutcome {
    let n = c.len();
    let n_eq = a_eq.map_or(0, |(a, _)| a.nrows());
    let m = n_eq + a_in.nrows();
    let mut a = Triplets::new(m, n);
    let mut b = Vec::with_capacity(m);
    if let Some((ae, be)) = a_eq {
        for i in 0..ae.nrows() {
            for j in 0..n {
                a.push(i, j, ae[(i, j)]);
            }
            b.push(be[i]);
        }
    }
    for i in 0..a_in.nrows() {
        for j in 0..n {
            a.push(n_eq + i, j, a_in[(i, j)]);
        }
        b.push(b_in[i]);
    }
    let problem = QpProblem {
        p: Triplets::new(n, n),
        q: c.iter().copied().collect(),
        a,
        b,
        n_eq,
    };
    let sol = InteriorPointSolver::default().solve(&problem);
    match sol.report.status {
        QpStatus::Optimal => LpOutcome::Optimal {
            value: sol.report.objective,
            x: DVector::from_vec(sol.x),
        },
        QpStatus::Infeasible => LpOutcome::Infeasible,
        QpStatus::Unbounded => LpOutcome::Unbounded,
        s => LpOutcome::Failed(s),
    }
}
