//! Dense operator-splitting QP solver in the OSQP form `l ≤ Ax ≤ u`.
//!
//! Each iteration solves the reduced KKT system
//! `(P + σI + Aᵀ diag(ρ) A) x̃ = σx − q + Aᵀ(ρ∘z − y)` with a cached Cholesky
//! factor, over-relaxes, projects onto the bounds and takes a dual ascent
//! step. ρ is rebalanced from the residual ratio every `check_every`
//! iterations.

use nalgebra::{DMatrix, DVector};

use super::{QpProblem, QpReport, QpSolution, QpSolver, QpStatus};

#[derive(Debug, Clone)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: u32,
    pub check_every: u32,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_infeasible: 1e-6,
            max_iter: 50_000,
            check_every: 25,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdmmSolver {
    pub settings: AdmmSettings,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Kkt {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Kkt {
    fn factor(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Option<Self> {
        let n = p.nrows();
        let mut k = p.clone() + DMatrix::identity(n, n) * sigma;
        let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * rho[i]);
        k += a.transpose() * scaled;
        k.cholesky().map(|chol| Self { chol })
    }
}

impl QpSolver for AdmmSolver {
    fn solve(&self, problem: &QpProblem) -> QpSolution {
        let s = &self.settings;
        let n = problem.num_vars();
        let m = problem.b.len();
        let mut p = problem.p.to_dense();
        for i in 0..n {
            for j in (i + 1)..n {
                let v = p[(i, j)] + p[(j, i)];
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
        let a = problem.a.to_dense();
        let q = DVector::from_column_slice(&problem.q);
        let upper = DVector::from_column_slice(&problem.b);
        let lower = DVector::from_fn(m, |i, _| {
            if i < problem.n_eq {
                problem.b[i]
            } else {
                f64::NEG_INFINITY
            }
        });
        let is_eq = |i: usize| i < problem.n_eq;

        let mut rho_scalar = s.rho;
        let rho_vec = |r: f64| DVector::from_fn(m, |i, _| if is_eq(i) { r * 1e3 } else { r });
        let mut rho = rho_vec(rho_scalar);
        let mut kkt = match Kkt::factor(&p, &a, &rho, s.sigma) {
            Some(k) => k,
            None => return failure(n, m, QpStatus::NumericalError),
        };

        let mut x = DVector::zeros(n);
        let mut z = DVector::zeros(m);
        let mut y = DVector::zeros(m);
        let mut status = QpStatus::MaxIter;
        let mut iterations = 0;

        for it in 1..=s.max_iter {
            iterations = it;
            let rhs = &x * s.sigma - &q + a.transpose() * (rho.component_mul(&z) - &y);
            let x_tilde = kkt.chol.solve(&rhs);
            let z_tilde = &a * &x_tilde;
            let x_next = &x_tilde * s.alpha + &x * (1.0 - s.alpha);
            let z_relaxed = &z_tilde * s.alpha + &z * (1.0 - s.alpha);
            let mut z_next = &z_relaxed + y.component_div(&rho);
            for i in 0..m {
                z_next[i] = z_next[i].clamp(lower[i], upper[i]);
            }
            let delta_y = rho.component_mul(&(z_relaxed - &z_next));
            let y_next = &y + &delta_y;
            x = x_next;
            z = z_next;
            y = y_next;

            if it % s.check_every != 0 && it != s.max_iter {
                continue;
            }

            let ax = &a * &x;
            let px = &p * &x;
            let aty = a.transpose() * &y;
            let r_prim = inf_norm(&(&ax - &z));
            let r_dual = inf_norm(&(&px + &q + &aty));
            let prim_scale = inf_norm(&ax).max(inf_norm(&z));
            let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&q));
            if r_prim <= s.eps_abs + s.eps_rel * prim_scale
                && r_dual <= s.eps_abs + s.eps_rel * dual_scale
            {
                status = QpStatus::Optimal;
                break;
            }

            // Primal infeasibility certificate from the last dual increment.
            let dy_norm = inf_norm(&delta_y);
            if dy_norm > 1e-12 {
                let atdy = inf_norm(&(a.transpose() * &delta_y));
                let mut support = 0.0;
                let mut valid = true;
                for i in 0..m {
                    let d = delta_y[i];
                    if d > 0.0 {
                        support += upper[i] * d;
                    } else if d < 0.0 {
                        if lower[i].is_finite() {
                            support += lower[i] * d;
                        } else if d < -s.eps_infeasible * dy_norm {
                            valid = false;
                        }
                    }
                }
                if valid
                    && atdy <= s.eps_infeasible * dy_norm
                    && support < -s.eps_infeasible * dy_norm
                {
                    status = QpStatus::Infeasible;
                    break;
                }
            }

            let ratio = ((r_prim / prim_scale.max(1e-12))
                / (r_dual / dual_scale.max(1e-12)).max(1e-12))
            .sqrt();
            let new_rho = (rho_scalar * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho_scalar || new_rho < rho_scalar / 5.0 {
                rho_scalar = new_rho;
                rho = rho_vec(rho_scalar);
                kkt = match Kkt::factor(&p, &a, &rho, s.sigma) {
                    Some(k) => k,
                    None => return failure(n, m, QpStatus::NumericalError),
                };
            }
        }

        let xs: Vec<f64> = x.iter().copied().collect();
        let ys: Vec<f64> = y.iter().copied().collect();
        QpSolution {
            report: QpReport {
                status,
                objective: problem.objective(&xs),
                primal_residual: problem.primal_residual(&xs),
                dual_residual: problem.dual_residual(&xs, &ys),
                iterations,
            },
            x: xs,
            y: ys,
        }
    }
}

fn failure(n: usize, m: usize, status: QpStatus) -> QpSolution {
    QpSolution {
        x: vec![0.0; n],
        y: vec![0.0; m],
        report: QpReport {
            status,
            objective: f64::NAN,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
            iterations: 0,
        },
    }
}
