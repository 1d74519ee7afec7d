//! Polytopes in halfspace representation `{x : Hx ≤ h}` and point clouds.
//!
//! Every set in the controller is a [`Polytope`]: true and estimated state
//! constraints, input bounds, terminal sets, convex hulls of data and the
//! disturbance support.

mod hull;
pub mod lp;
mod planar;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hull::{convex_hull, convex_hull_with_vertices, Hull};

/// Relative tolerance used to decide collinearity and affine rank of clouds.
pub const COLLINEAR_TOL: f64 = 1e-9;
/// Feasibility tolerance for LP emptiness checks.
pub const LP_FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeJson", into = "PolytopeJson")]
pub struct Polytope {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    #[serde(rename = "H")]
    normals: Vec<Vec<f64>>,
    #[serde(rename = "h")]
    offsets: Vec<f64>,
}

impl TryFrom<PolytopeJson> for Polytope {
    type Error = Error;

    fn try_from(v: PolytopeJson) -> Result<Self> {
        Polytope::from_rows(&v.normals, &v.offsets)
    }
}

impl From<Polytope> for PolytopeJson {
    fn from(p: Polytope) -> Self {
        PolytopeJson {
            normals: (0..p.num_rows())
                .map(|i| p.normals.row(i).iter().copied().collect())
                .collect(),
            offsets: p.offsets.iter().copied().collect(),
        }
    }
}

impl Polytope {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        if normals.ncols() == 0 {
            return Err(Error::InvalidPolytope(
                "H must have at least one column".into(),
            ));
        }
        if normals.nrows() != offsets.len() {
            return Err(Error::InvalidPolytope(format!(
                "H has {} rows but h has {} entries",
                normals.nrows(),
                offsets.len()
            )));
        }
        for (i, row) in normals.row_iter().enumerate() {
            if row.iter().all(|v| *v == 0.0) {
                return Err(Error::InvalidPolytope(format!("row {i} of H is zero")));
            }
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPolytope("non-finite entry".into()));
        }
        Ok(Self { normals, offsets })
    }

    /// Build from row-major data; the dimension is taken from the first row.
    pub fn from_rows(rows: &[Vec<f64>], offsets: &[f64]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidPolytope("ragged H".into()));
        }
        let normals = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        Self::new(normals, DVector::from_column_slice(offsets))
    }

    /// Axis-aligned box `lo ≤ x ≤ hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        let n = lo.len();
        let mut normals = DMatrix::zeros(2 * n, n);
        let mut offsets = DVector::zeros(2 * n);
        for i in 0..n {
            normals[(i, i)] = 1.0;
            offsets[i] = hi[i];
            normals[(n + i, i)] = -1.0;
            offsets[n + i] = -lo[i];
        }
        Self::new(normals, offsets)
    }

    /// Box `|x_i| ≤ r` in dimension `n`.
    pub fn symmetric_box(n: usize, r: f64) -> Self {
        Self::from_box(&vec![-r; n], &vec![r; n]).expect("valid box")
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    /// Default membership tolerance: 1e-7 scaled by max(1, ‖h‖∞).
    pub fn default_tol(&self) -> f64 {
        1e-7 * self.offsets.amax().max(1.0)
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// Largest constraint value `max_i (H_i x − h_i)`; nonpositive inside.
    pub fn max_violation(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        let r = &self.normals * x - &self.offsets;
        Ok(r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `H x ≤ h + tol` row-wise.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(self.max_violation(x)? <= tol)
    }

    /// Stacked rows of both polytopes.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other.dim())?;
        let (r1, r2) = (self.num_rows(), other.num_rows());
        let mut normals = DMatrix::zeros(r1 + r2, self.dim());
        normals.rows_mut(0, r1).copy_from(&self.normals);
        normals.rows_mut(r1, r2).copy_from(&other.normals);
        let mut offsets = DVector::zeros(r1 + r2);
        offsets.rows_mut(0, r1).copy_from(&self.offsets);
        offsets.rows_mut(r1, r2).copy_from(&other.offsets);
        Polytope::new(normals, offsets)
    }

    /// `{x : Hx ≤ γh}`.
    pub fn scale(&self, gamma: f64) -> Result<Polytope> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be positive, got {gamma}"
            )));
        }
        Ok(Polytope {
            normals: self.normals.clone(),
            offsets: &self.offsets * gamma,
        })
    }

    /// Bounds `(lo, hi)` when every row is a signed coordinate direction and
    /// every coordinate is bounded on both sides.
    pub fn as_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let n = self.dim();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        for (i, row) in self.normals.row_iter().enumerate() {
            let nz: Vec<usize> = (0..n).filter(|&j| row[j] != 0.0).collect();
            if nz.len() != 1 {
                return None;
            }
            let j = nz[0];
            let bound = self.offsets[i] / row[j];
            if row[j] > 0.0 {
                hi[j] = hi[j].min(bound);
            } else {
                lo[j] = lo[j].max(bound);
            }
        }
        if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// `max_{x ∈ P} aᵀx`.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        self.check_dim(a.len())?;
        if a.iter().all(|v| *v == 0.0) {
            return Ok(0.0);
        }
        if let Some((lo, hi)) = self.as_box() {
            if (0..self.dim()).any(|i| lo[i] > hi[i]) {
                return Err(Error::EmptySet);
            }
            return Ok((0..self.dim())
                .map(|i| {
                    if a[i] >= 0.0 {
                        a[i] * hi[i]
                    } else {
                        a[i] * lo[i]
                    }
                })
                .sum());
        }
        match lp::minimize(&-a, &self.normals, &self.offsets, None) {
            lp::LpOutcome::Optimal { value, .. } => Ok(-value),
            lp::LpOutcome::Infeasible => Err(Error::EmptySet),
            lp::LpOutcome::Unbounded => Err(Error::Unbounded),
            lp::LpOutcome::Failed(s) => Err(Error::LpFailure(format!("{s:?}"))),
        }
    }

    /// Axis-aligned bounding box from support values.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>)> {
        if let Some(b) = self.as_box() {
            return Ok(b);
        }
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let e = DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 });
            hi[i] = self.support(&e)?;
            lo[i] = -self.support(&-e)?;
        }
        Ok((lo, hi))
    }

    /// Point minimizing the largest normalized constraint value, with that
    /// value. The value is ≤ 0 exactly when the set is nonempty; it is capped
    /// at −1 for sets that contain a unit ball.
    pub fn deepest_point(&self) -> Result<(DVector<f64>, f64)> {
        let n = self.dim();
        let r = self.num_rows();
        // variables (x, s): minimize s  s.t.  Ĥx − s ≤ ĥ,  −s ≤ 1
        let mut a = DMatrix::zeros(r + 1, n + 1);
        let mut b = DVector::zeros(r + 1);
        for i in 0..r {
            let norm = self.normals.row(i).norm();
            for j in 0..n {
                a[(i, j)] = self.normals[(i, j)] / norm;
            }
            a[(i, n)] = -1.0;
            b[i] = self.offsets[i] / norm;
        }
        a[(r, n)] = -1.0;
        b[r] = 1.0;
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        match lp::minimize(&c, &a, &b, None) {
            lp::LpOutcome::Optimal { x, value } => Ok((x.rows(0, n).into_owned(), value)),
            lp::LpOutcome::Infeasible | lp::LpOutcome::Unbounded => Err(Error::LpFailure(
                "auxiliary feasibility LP is always solvable".into(),
            )),
            lp::LpOutcome::Failed(s) => Err(Error::LpFailure(format!("{s:?}"))),
        }
    }

    /// True when `{x : Hx ≤ h}` has no point within `tol`.
    pub fn is_empty(&self, tol: f64) -> bool {
        if let Some((lo, hi)) = self.as_box() {
            return (0..self.dim()).any(|i| lo[i] > hi[i] + tol);
        }
        if self.dim() == 2 {
            if let Some(empty) = planar::is_empty(self, tol) {
                return empty;
            }
        }
        match self.deepest_point() {
            Ok((_, value)) => value > tol,
            Err(_) => true,
        }
    }

    /// Vertices of a bounded polytope in dimension 1 or 2, counter-clockwise.
    pub fn vertices(&self) -> Result<Vec<DVector<f64>>> {
        match self.dim() {
            1 => {
                let hi = self.support(&DVector::from_element(1, 1.0))?;
                let lo = -self.support(&DVector::from_element(1, -1.0))?;
                if lo > hi + LP_FEAS_TOL {
                    return Ok(Vec::new());
                }
                Ok(vec![
                    DVector::from_element(1, lo),
                    DVector::from_element(1, hi),
                ])
            }
            2 => planar::vertices(self),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }

    /// Same set with redundant rows removed. Empty or lower-dimensional sets
    /// are returned unchanged.
    pub fn reduce(&self) -> Result<Polytope> {
        if self.dim() == 2 {
            let vertices = planar::vertices(self)?;
            if vertices.len() < 3 {
                return Ok(self.clone());
            }
            return match convex_hull(&PointCloud::new(vertices)?) {
                Ok(p) => Ok(p),
                Err(Error::DegenerateCloud { .. }) => Ok(self.clone()),
                Err(e) => Err(e),
            };
        }
        self.reduce_lp()
    }

    fn reduce_lp(&self) -> Result<Polytope> {
        if self.is_empty(LP_FEAS_TOL) {
            return Ok(self.clone());
        }
        let mut keep: Vec<usize> = (0..self.num_rows()).collect();
        let mut i = 0;
        while i < keep.len() {
            let row = keep[i];
            let others: Vec<usize> = keep.iter().copied().filter(|&k| k != row).collect();
            let n = self.dim();
            // maximize H_row x over the other rows plus H_row x ≤ h_row + 1
            let mut a = DMatrix::zeros(others.len() + 1, n);
            let mut b = DVector::zeros(others.len() + 1);
            for (k, &o) in others.iter().enumerate() {
                a.row_mut(k).copy_from(&self.normals.row(o));
                b[k] = self.offsets[o];
            }
            a.row_mut(others.len()).copy_from(&self.normals.row(row));
            b[others.len()] = self.offsets[row] + 1.0;
            let c = -self.normals.row(row).transpose();
            let redundant = match lp::minimize(&c, &a, &b, None) {
                lp::LpOutcome::Optimal { value, .. } => {
                    -value <= self.offsets[row] + LP_FEAS_TOL * self.normals.row(row).norm()
                }
                _ => false,
            };
            if redundant {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        let normals = DMatrix::from_fn(keep.len(), self.dim(), |i, j| self.normals[(keep[i], j)]);
        let offsets = DVector::from_fn(keep.len(), |i, _| self.offsets[keep[i]]);
        Polytope::new(normals, offsets)
    }
}

/// A finite set of points of equal dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<DVector<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(first) = points.first() {
            let d = first.len();
            if let Some(bad) = points.iter().find(|p| p.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: bad.len(),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.len())
    }

    pub fn push(&mut self, p: DVector<f64>) -> Result<()> {
        if let Some(d) = self.dim() {
            if p.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
        }
        self.points.push(p);
        Ok(())
    }
}
