//! Convex hulls of point clouds, returned in halfspace form.
//!
//! Dimension 1 and 2 are handled exactly (interval, monotone chain).
//! Dimensions 3 and 4 use an incremental beneath-beyond construction with
//! simplicial facets; coplanar input may yield duplicated facet rows, which
//! does not change the represented set.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{PointCloud, Polytope, COLLINEAR_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Hull {
    pub polytope: Polytope,
    pub vertices: Vec<DVector<f64>>,
}

pub fn convex_hull(cloud: &PointCloud) -> Result<Polytope> {
    convex_hull_with_vertices(cloud).map(|h| h.polytope)
}

pub fn convex_hull_with_vertices(cloud: &PointCloud) -> Result<Hull> {
    let dim = cloud.dim().ok_or(Error::EmptyCloud)?;
    if dim == 0 || dim > 4 {
        return Err(Error::UnsupportedDimension(dim));
    }
    let rank = affine_rank(cloud.points());
    if rank < dim {
        return Err(Error::DegenerateCloud { rank, dim });
    }
    match dim {
        1 => hull_1d(cloud.points()),
        2 => hull_2d(cloud.points()),
        _ => hull_nd(cloud.points(), dim),
    }
}

fn affine_rank(points: &[DVector<f64>]) -> usize {
    let d = points[0].len();
    if points.len() < 2 {
        return 0;
    }
    let centroid = points.iter().fold(DVector::zeros(d), |acc, p| acc + p) / points.len() as f64;
    let centered = DMatrix::from_fn(points.len(), d, |i, j| points[i][j] - centroid[j]);
    let sv = centered.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > COLLINEAR_TOL * top).count()
}

fn hull_1d(points: &[DVector<f64>]) -> Result<Hull> {
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = points
        .iter()
        .map(|p| p[0])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Hull {
        polytope: Polytope::from_box(&[lo], &[hi])?,
        vertices: vec![DVector::from_element(1, lo), DVector::from_element(1, hi)],
    })
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Keeps `b` only if `o → a → b` turns strictly left beyond the relative
/// collinearity tolerance.
fn left_turn(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let la = (a[0] - o[0]).hypot(a[1] - o[1]);
    let lb = (b[0] - o[0]).hypot(b[1] - o[1]);
    cross(o, a, b) > COLLINEAR_TOL * la * lb
}

fn hull_2d(points: &[DVector<f64>]) -> Result<Hull> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let mut chain: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while chain.len() >= 2 && !left_turn(chain[chain.len() - 2], chain[chain.len() - 1], p) {
            chain.pop();
        }
        chain.push(p);
    }
    let lower_len = chain.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while chain.len() >= lower_len
            && !left_turn(chain[chain.len() - 2], chain[chain.len() - 1], p)
        {
            chain.pop();
        }
        chain.push(p);
    }
    chain.pop();
    if chain.len() < 3 {
        return Err(Error::DegenerateCloud { rank: 1, dim: 2 });
    }
    let k = chain.len();
    let mut normals = DMatrix::zeros(k, 2);
    let mut offsets = DVector::zeros(k);
    for i in 0..k {
        let (a, b) = (chain[i], chain[(i + 1) % k]);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let len = ex.hypot(ey);
        let n = [ey / len, -ex / len];
        normals[(i, 0)] = n[0];
        normals[(i, 1)] = n[1];
        offsets[i] = n[0] * a[0] + n[1] * a[1];
    }
    Ok(Hull {
        polytope: Polytope::new(normals, offsets)?,
        vertices: chain
            .iter()
            .map(|p| DVector::from_column_slice(p))
            .collect(),
    })
}

struct Facet {
    verts: Vec<usize>,
    normal: DVector<f64>,
    offset: f64,
    alive: bool,
}

/// Unit normal of the hyperplane through `d` points in `R^d` via cofactors.
fn hyperplane(points: &[&DVector<f64>]) -> Option<(DVector<f64>, f64)> {
    let d = points.len();
    let base = points[0];
    let diffs = DMatrix::from_fn(d - 1, d, |i, j| points[i + 1][j] - base[j]);
    let mut normal = DVector::zeros(d);
    for col in 0..d {
        let minor = diffs.clone().remove_column(col);
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        normal[col] = sign * minor.determinant();
    }
    let norm = normal.norm();
    if norm == 0.0 {
        return None;
    }
    normal /= norm;
    let offset = normal.dot(base);
    Some((normal, offset))
}

fn make_facet(
    points: &[DVector<f64>],
    verts: Vec<usize>,
    interior: &DVector<f64>,
) -> Option<Facet> {
    let refs: Vec<&DVector<f64>> = verts.iter().map(|&i| &points[i]).collect();
    let (mut normal, mut offset) = hyperplane(&refs)?;
    if normal.dot(interior) > offset {
        normal = -normal;
        offset = -offset;
    }
    Some(Facet {
        verts,
        normal,
        offset,
        alive: true,
    })
}

fn initial_simplex(points: &[DVector<f64>], d: usize, tol: f64) -> Option<Vec<usize>> {
    let first = (0..points.len()).min_by(|&a, &b| points[a][0].total_cmp(&points[b][0]))?;
    let mut chosen = vec![first];
    let mut basis: Vec<DVector<f64>> = Vec::new();
    while chosen.len() < d + 1 {
        let origin = &points[chosen[0]];
        let residual = |p: &DVector<f64>| {
            let mut r = p - origin;
            for b in &basis {
                r -= b * b.dot(&r);
            }
            r
        };
        let (best, dist) = (0..points.len())
            .map(|i| (i, residual(&points[i]).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if dist <= tol {
            return None;
        }
        basis.push(residual(&points[best]) / dist);
        chosen.push(best);
    }
    Some(chosen)
}

fn hull_nd(points: &[DVector<f64>], d: usize) -> Result<Hull> {
    let scale = points.iter().map(|p| p.amax()).fold(1.0f64, f64::max);
    let eps = 1e-10 * scale;
    let simplex =
        initial_simplex(points, d, COLLINEAR_TOL * scale).ok_or(Error::DegenerateCloud {
            rank: d - 1,
            dim: d,
        })?;
    let interior = simplex
        .iter()
        .fold(DVector::zeros(d), |acc, &i| acc + &points[i])
        / (d + 1) as f64;

    let mut facets: Vec<Facet> = Vec::new();
    for skip in 0..=d {
        let verts: Vec<usize> = simplex
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != skip)
            .map(|(_, &v)| v)
            .collect();
        facets.push(
            make_facet(points, verts, &interior).ok_or(Error::DegenerateCloud {
                rank: d - 1,
                dim: d,
            })?,
        );
    }

    for (idx, p) in points.iter().enumerate() {
        if simplex.contains(&idx) {
            continue;
        }
        let visible: Vec<usize> = (0..facets.len())
            .filter(|&f| facets[f].alive && facets[f].normal.dot(p) - facets[f].offset > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let mut ridges: HashMap<Vec<usize>, usize> = HashMap::new();
        for &f in &visible {
            for skip in 0..d {
                let mut ridge: Vec<usize> = facets[f]
                    .verts
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .map(|(_, &v)| v)
                    .collect();
                ridge.sort_unstable();
                *ridges.entry(ridge).or_insert(0) += 1;
            }
        }
        for &f in &visible {
            facets[f].alive = false;
        }
        let mut horizon: Vec<Vec<usize>> = ridges
            .into_iter()
            .filter(|(_, c)| *c == 1)
            .map(|(r, _)| r)
            .collect();
        horizon.sort();
        for mut ridge in horizon {
            ridge.push(idx);
            if let Some(f) = make_facet(points, ridge, &interior) {
                facets.push(f);
            }
        }
    }

    let alive: Vec<&Facet> = facets.iter().filter(|f| f.alive).collect();
    let normals = DMatrix::from_fn(alive.len(), d, |i, j| alive[i].normal[j]);
    let offsets = DVector::from_fn(alive.len(), |i, _| alive[i].offset);
    let mut vertex_ids: Vec<usize> = alive.iter().flat_map(|f| f.verts.iter().copied()).collect();
    vertex_ids.sort_unstable();
    vertex_ids.dedup();
    Ok(Hull {
        polytope: Polytope::new(normals, offsets)?,
        vertices: vertex_ids.into_iter().map(|i| points[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[&[f64]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| DVector::from_column_slice(p)).collect()).unwrap()
    }

    #[test]
    fn triangle_has_three_facets() {
        let h =
            convex_hull_with_vertices(&cloud(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(h.polytope.num_rows(), 3);
        assert_eq!(h.vertices.len(), 3);
    }

    #[test]
    fn box_corners_give_unit_box() {
        let h = convex_hull(&cloud(&[
            &[1.0, 1.0],
            &[-1.0, 1.0],
            &[1.0, -1.0],
            &[-1.0, -1.0],
            &[0.2, 0.1],
        ]))
        .unwrap();
        assert_eq!(h.num_rows(), 4);
        for (x, y, inside) in [
            (0.99, -0.99, true),
            (1.01, 0.0, false),
            (0.0, -1.01, false),
            (-1.0, 1.0, true),
        ] {
            assert_eq!(
                h.contains(&DVector::from_vec(vec![x, y]), 1e-12).unwrap(),
                inside
            );
        }
    }

    #[test]
    fn degenerate_and_empty_clouds() {
        match convex_hull(&cloud(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]])) {
            Err(Error::DegenerateCloud { rank: 1, dim: 2 }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            convex_hull(&PointCloud::new(vec![]).unwrap()),
            Err(Error::EmptyCloud)
        ));
        let five = cloud(&[&[0.0, 0.0, 0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0, 0.0]]);
        assert!(matches!(
            convex_hull(&five),
            Err(Error::UnsupportedDimension(5))
        ));
    }

    #[test]
    fn collinear_points_on_edges_are_dropped() {
        let h = convex_hull_with_vertices(&cloud(&[
            &[0.0, 0.0],
            &[0.5, 0.0],
            &[1.0, 0.0],
            &[1.0, 1.0],
            &[0.0, 1.0],
        ]))
        .unwrap();
        assert_eq!(h.vertices.len(), 4);
    }

    #[test]
    fn cube_and_tesseract() {
        let mut pts = Vec::new();
        for mask in 0..8 {
            pts.push(DVector::from_fn(3, |i, _| {
                if mask >> i & 1 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }));
        }
        pts.push(DVector::zeros(3));
        let h = convex_hull_with_vertices(&PointCloud::new(pts).unwrap()).unwrap();
        assert_eq!(h.vertices.len(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.5..1.5));
            let inside = x.iter().all(|v: &f64| v.abs() <= 1.0);
            assert_eq!(h.polytope.contains(&x, 1e-9).unwrap(), inside);
        }

        let mut pts = Vec::new();
        for mask in 0..16 {
            pts.push(DVector::from_fn(4, |i, _| {
                if mask >> i & 1 == 1 {
                    2.0
                } else {
                    0.0
                }
            }));
        }
        let h = convex_hull_with_vertices(&PointCloud::new(pts).unwrap()).unwrap();
        assert_eq!(h.vertices.len(), 16);
        for _ in 0..500 {
            let x = DVector::from_fn(4, |_, _| rng.gen_range(-0.5..2.5));
            let inside = x.iter().all(|v| (0.0..=2.0).contains(v));
            assert_eq!(h.polytope.contains(&x, 1e-9).unwrap(), inside);
        }
    }

    #[test]
    fn random_3d_cloud_contains_inputs_and_facets_are_supported() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<DVector<f64>> = (0..200)
            .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let h = convex_hull(&PointCloud::new(pts.clone()).unwrap()).unwrap();
        for p in &pts {
            assert!(h.contains(p, 1e-9).unwrap());
        }
        for i in 0..h.num_rows() {
            let row = h.normals().row(i);
            let tight = pts
                .iter()
                .filter(|p| (row.dot(&p.transpose()) - h.offsets()[i]).abs() < 1e-9)
                .count();
            assert!(tight >= 3);
        }
    }
}
