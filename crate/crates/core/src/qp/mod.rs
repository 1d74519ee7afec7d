//! Convex quadratic programs and the pluggable solver surface used by the
//! MPC controller and the LP helpers.
//!
//! Problems are posed as
//!
//! ```text
//! minimize    ½ xᵀ P x + qᵀ x
//! subject to  A[..n_eq] x  = b[..n_eq]
//!             A[n_eq..] x ≤ b[n_eq..]
//! ```

mod admm;
mod interior;

use serde::{Deserialize, Serialize};

pub use admm::{AdmmSettings, AdmmSolver};
pub use interior::InteriorPointSolver;

/// Sparse matrix in coordinate form. Duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Column-compressed form with duplicates merged: (colptr, rowval, nzval).
    pub fn to_csc(&self) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let mut sorted = self.entries.clone();
        sorted.sort_by_key(|e| (e.1, e.0));
        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowval = Vec::with_capacity(sorted.len());
        let mut nzval: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &sorted {
            if last == Some((r, c)) {
                *nzval.last_mut().expect("merged entry") += v;
                continue;
            }
            rowval.push(r);
            nzval.push(v);
            colptr[c + 1] += 1;
            last = Some((r, c));
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        (colptr, rowval, nzval)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// y = self · x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// y = selfᵀ · x
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            y[c] += v * x[r];
        }
        y
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Upper triangle of the symmetric Hessian.
    pub p: Triplets,
    pub q: Vec<f64>,
    pub a: Triplets,
    pub b: Vec<f64>,
    /// Leading rows of `a` that are equalities.
    pub n_eq: usize,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    /// Full symmetric P·x from the stored upper triangle.
    pub fn hessian_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for &(r, c, v) in &self.p.entries {
            y[r] += v * x[c];
            if r != c {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.hessian_mul(x);
        let quad: f64 = px.iter().zip(x).map(|(a, b)| a * b).sum();
        let lin: f64 = self.q.iter().zip(x).map(|(a, b)| a * b).sum();
        0.5 * quad + lin
    }

    /// Largest equality residual or inequality violation.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul_vec(x);
        ax.iter()
            .zip(&self.b)
            .enumerate()
            .map(|(i, (v, b))| {
                if i < self.n_eq {
                    (v - b).abs()
                } else {
                    (v - b).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// ‖P x + q + Aᵀ y‖∞ for multipliers `y` (nonnegative on inequalities).
    pub fn dual_residual(&self, x: &[f64], y: &[f64]) -> f64 {
        let px = self.hessian_mul(x);
        let aty = self.a.tr_mul_vec(y);
        px.iter()
            .zip(&self.q)
            .zip(&aty)
            .map(|((p, q), a)| (p + q + a).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpReport {
    pub status: QpStatus,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Constraint multipliers, same ordering as the rows of `A`.
    pub y: Vec<f64>,
    pub report: QpReport,
}

pub trait QpSolver: Send + Sync {
    fn solve(&self, problem: &QpProblem) -> QpSolution;
}

/// Solver selection exposed in scenario files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    InteriorPoint,
    Admm,
}

impl Backend {
    pub fn solver(self) -> Box<dyn QpSolver> {
        match self {
            Backend::InteriorPoint => Box::new(InteriorPointSolver::default()),
            Backend::Admm => Box::new(AdmmSolver::default()),
        }
    }
}
