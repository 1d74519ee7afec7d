//! Exact vertex enumeration for bounded polygons.

use std::f64::consts::PI;

use nalgebra::DVector;

use super::Polytope;
use crate::error::{Error, Result};

struct Lines {
    normals: Vec<[f64; 2]>,
    offsets: Vec<f64>,
}

fn normalized(p: &Polytope) -> Lines {
    let mut normals = Vec::with_capacity(p.num_rows());
    let mut offsets = Vec::with_capacity(p.num_rows());
    for i in 0..p.num_rows() {
        let (a, b) = (p.normals()[(i, 0)], p.normals()[(i, 1)]);
        let norm = a.hypot(b);
        normals.push([a / norm, b / norm]);
        offsets.push(p.offsets()[i] / norm);
    }
    Lines { normals, offsets }
}

/// A polygon is bounded iff its normals leave no angular gap of π or more.
fn is_bounded(lines: &Lines) -> bool {
    let mut angles: Vec<f64> = lines.normals.iter().map(|n| n[1].atan2(n[0])).collect();
    if angles.len() < 3 {
        return false;
    }
    angles.sort_by(f64::total_cmp);
    let mut max_gap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    for w in angles.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    max_gap < PI - 1e-12
}

fn enumerate(lines: &Lines, tol: f64) -> Vec<[f64; 2]> {
    let r = lines.normals.len();
    let mut out: Vec<[f64; 2]> = Vec::new();
    for i in 0..r {
        for j in (i + 1)..r {
            let (a, b) = (lines.normals[i], lines.normals[j]);
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let (c, d) = (lines.offsets[i], lines.offsets[j]);
            let x = [(c * b[1] - a[1] * d) / det, (a[0] * d - c * b[0]) / det];
            let feasible = (0..r).all(|k| {
                let n = lines.normals[k];
                n[0] * x[0] + n[1] * x[1] <= lines.offsets[k] + tol
            });
            if feasible
                && !out
                    .iter()
                    .any(|y| (y[0] - x[0]).hypot(y[1] - x[1]) <= 10.0 * tol)
            {
                out.push(x);
            }
        }
    }
    out
}

fn vertex_tol(lines: &Lines) -> f64 {
    1e-9 * lines.offsets.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

pub(super) fn vertices(p: &Polytope) -> Result<Vec<DVector<f64>>> {
    let lines = normalized(p);
    if !is_bounded(&lines) {
        return Err(Error::Unbounded);
    }
    let mut pts = enumerate(&lines, vertex_tol(&lines));
    if pts.len() > 2 {
        let cx = pts.iter().map(|q| q[0]).sum::<f64>() / pts.len() as f64;
        let cy = pts.iter().map(|q| q[1]).sum::<f64>() / pts.len() as f64;
        pts.sort_by(|a, b| {
            (a[1] - cy)
                .atan2(a[0] - cx)
                .total_cmp(&(b[1] - cy).atan2(b[0] - cx))
        });
    }
    Ok(pts
        .into_iter()
        .map(|q| DVector::from_column_slice(&q))
        .collect())
}

/// `None` when the polygon is unbounded and the caller must fall back to LP.
pub(super) fn is_empty(p: &Polytope, tol: f64) -> Option<bool> {
    let lines = normalized(p);
    if !is_bounded(&lines) {
        return None;
    }
    Some(enumerate(&lines, tol.max(vertex_tol(&lines))).is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hexagon_vertices() {
        let p = Polytope::symmetric_box(2, 20.0)
            .intersect(
                &Polytope::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]], &[5.0, 5.0]).unwrap(),
            )
            .unwrap();
        let v = vertices(&p).unwrap();
        assert_eq!(v.len(), 5);
        for expected in [
            [5.0, 0.0],
            [-15.0, 20.0],
            [-20.0, 20.0],
            [-20.0, -20.0],
            [-15.0, -20.0],
        ] {
            assert!(v
                .iter()
                .any(|q| (q[0] - expected[0]).abs() < 1e-9 && (q[1] - expected[1]).abs() < 1e-9));
        }
    }

    #[test]
    fn unbounded_is_reported() {
        let p = Polytope::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]], &[5.0, 5.0]).unwrap();
        assert!(matches!(vertices(&p), Err(Error::Unbounded)));
        assert_eq!(is_empty(&p, 1e-8), None);
    }

    #[test]
    fn counter_clockwise_order() {
        let v = vertices(&Polytope::symmetric_box(2, 1.0)).unwrap();
        assert_eq!(v.len(), 4);
        let area: f64 = (0..4)
            .map(|i| {
                let (a, b) = (&v[i], &v[(i + 1) % 4]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum();
        assert!((area / 2.0 - 4.0).abs() < 1e-12);
    }
}
