use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT,
    ZeroConeT,
};

use super::{QpProblem, QpReport, QpSolution, QpSolver, QpStatus, Triplets};

/// Primal-dual interior point backend (Clarabel).
#[derive(Debug, Clone)]
pub struct InteriorPointSolver {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for InteriorPointSolver {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

fn csc(t: &Triplets) -> CscMatrix<f64> {
    let (colptr, rowval, nzval) = t.to_csc();
    CscMatrix::new(t.nrows, t.ncols, colptr, rowval, nzval)
}

impl QpSolver for InteriorPointSolver {
    fn solve(&self, problem: &QpProblem) -> QpSolution {
        let n = problem.num_vars();
        let m = problem.b.len();
        let p = csc(&problem.p);
        let a = csc(&problem.a);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if problem.n_eq > 0 {
            cones.push(ZeroConeT(problem.n_eq));
        }
        if m > problem.n_eq {
            cones.push(NonnegativeConeT(m - problem.n_eq));
        }
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_gap_abs: self.tol,
            tol_gap_rel: self.tol,
            tol_feas: self.tol,
            ..DefaultSettings::default()
        };
        let failed = |status| QpSolution {
            x: vec![0.0; n],
            y: vec![0.0; m],
            report: QpReport {
                status,
                objective: f64::NAN,
                primal_residual: f64::INFINITY,
                dual_residual: f64::INFINITY,
                iterations: 0,
            },
        };
        let mut solver = match DefaultSolver::new(&p, &problem.q, &a, &problem.b, &cones, settings)
        {
            Ok(s) => s,
            Err(_) => return failed(QpStatus::NumericalError),
        };
        solver.solve();
        let x = solver.solution.x.clone();
        let y = solver.solution.z.clone();
        let primal_residual = problem.primal_residual(&x);
        let dual_residual = problem.dual_residual(&x, &y);
        let status = match solver.solution.status {
            SolverStatus::Solved => QpStatus::Optimal,
            SolverStatus::AlmostSolved if primal_residual < 1e-6 => QpStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                QpStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                QpStatus::Unbounded
            }
            SolverStatus::MaxIterations | SolverStatus::MaxTime | SolverStatus::AlmostSolved => {
                QpStatus::MaxIter
            }
            _ => QpStatus::NumericalError,
        };
        QpSolution {
            report: QpReport {
                status,
                objective: problem.objective(&x),
                primal_residual,
                dual_residual,
                iterations: solver.solution.iterations,
            },
            x,
            y,
        }
    }
}
