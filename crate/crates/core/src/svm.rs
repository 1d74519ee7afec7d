//! Soft-margin kernel SVM with an RBF kernel, trained by sequential minimal
//! optimization, and the polyhedral inner approximation of its feasible
//! region.
//!
//! Labels are `+1` for feasible and `−1` for infeasible points. The decision
//! value is stored with a global sign so that `decide(x) ≤ 0` means feasible.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, PointCloud, Polytope};
use crate::serde_util;

pub const KKT_TOL: f64 = 1e-6;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// RBF width in `exp(−γ‖x − y‖²)`.
    pub gamma: f64,
    pub c: f64,
    /// Box weights `[feasible, infeasible]`; the bound of point i is `c·weight`.
    pub class_weights: [f64; 2],
}

impl SvmParams {
    pub fn new(gamma: f64, c: f64) -> Self {
        Self {
            gamma,
            c,
            class_weights: [1.0, 1.0],
        }
    }

    /// `γ = 2 / diam²` of the bounding box of `set`.
    pub fn default_gamma(set: &Polytope) -> Result<f64> {
        let (lo, hi) = set.bounding_box()?;
        let d2 = (&hi - &lo).norm_squared();
        if !(d2 > 0.0) {
            return Err(Error::InvalidArgument(
                "sampling set has zero diameter".into(),
            ));
        }
        Ok(2.0 / d2)
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.c > 0.0) || self.class_weights.iter().any(|w| !(*w > 0.0))
        {
            return Err(Error::InvalidArgument(
                "SVM gamma, C and class weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    #[serde(with = "serde_util::vectors")]
    pub support_points: Vec<DVector<f64>>,
    pub labels: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Bias of `g(x) = Σ αᵢyᵢk(pᵢ, x) + b`, which is positive on feasible points.
    pub bias: f64,
    pub params: SvmParams,
    /// Multiplies `g`; −1 so that feasible points have nonpositive decision.
    pub sign: f64,
    pub iterations: usize,
}

fn rbf(gamma: f64, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (-gamma * (x - y).norm_squared()).exp()
}

/// Dual variables and bias of a trained problem, before support extraction.
struct Dual {
    alpha: Vec<f64>,
    bias: f64,
    iterations: usize,
}

/// Second-order working set selection SMO for
/// `min ½αᵀQα − 1ᵀα, 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = yᵢyⱼK_ij`.
fn smo(kernel: &[f64], y: &[f64], bounds: &[f64], max_iter: usize) -> Result<Dual> {
    let n = y.len();
    let k = |i: usize, j: usize| kernel[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64, c: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64, c: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    let mut iterations = 0;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if up(alpha[t], y[t], bounds[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                if !low(alpha[t], y[t], bounds[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let a = (k(i, i) + k(t, t) - 2.0 * k(i, t)).max(TAU);
                    let obj = -b * b / a;
                    if obj <= best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < KKT_TOL {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::SvmNotConverged(iterations));
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (ci, cj) = (bounds[i], bounds[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = (k(i, i) + k(j, j) - 2.0 * k(i, j)).max(TAU);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(t, i) * di + y[j] * k(t, j) * dj);
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < bounds[t] {
            sum += yg;
            count += 1;
        } else if (y[t] > 0.0) == (alpha[t] >= bounds[t]) {
            lb = lb.max(yg);
        } else {
            ub = ub.min(yg);
        }
    }
    let rho = if count > 0 {
        sum / count as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(Dual {
        alpha,
        bias: -rho,
        iterations,
    })
}

impl SvmModel {
    /// Trains on `points` with labels `+1` (feasible) / `−1` (infeasible).
    /// Fails when the trained classifier does not place the origin on the
    /// feasible side.
    pub fn train(points: &PointCloud, labels: &[f64], params: SvmParams) -> Result<Self> {
        let model = Self::train_unsigned(points, labels, params)?;
        let at_origin = model.decide(&DVector::zeros(points.dim().unwrap_or(0)));
        if at_origin > 0.0 {
            return Err(Error::OriginInfeasible(at_origin));
        }
        Ok(model)
    }

    /// Training without the origin check.
    pub fn train_unsigned(points: &PointCloud, labels: &[f64], params: SvmParams) -> Result<Self> {
        params.validate()?;
        let pts = points.points();
        if pts.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: pts.len(),
                got: labels.len(),
            });
        }
        if pts.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if labels.iter().any(|l| *l != 1.0 && *l != -1.0) {
            return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
        }
        if labels.iter().all(|l| *l > 0.0) {
            return Err(Error::SingleClass("feasible only"));
        }
        if labels.iter().all(|l| *l < 0.0) {
            return Err(Error::SingleClass("infeasible only"));
        }
        let n = pts.len();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf(params.gamma, &pts[i], &pts[j]);
                kernel[i * n + j] = v;
                kernel[j * n + i] = v;
            }
        }
        let bounds: Vec<f64> = labels
            .iter()
            .map(|l| {
                params.c
                    * if *l > 0.0 {
                        params.class_weights[0]
                    } else {
                        params.class_weights[1]
                    }
            })
            .collect();
        let dual = smo(&kernel, labels, &bounds, (100 * n).max(10_000_000))?;
        let mut support_points = Vec::new();
        let mut sv_labels = Vec::new();
        let mut alphas = Vec::new();
        for i in 0..n {
            if dual.alpha[i] > 0.0 {
                support_points.push(pts[i].clone());
                sv_labels.push(labels[i]);
                alphas.push(dual.alpha[i]);
            }
        }
        Ok(Self {
            support_points,
            labels: sv_labels,
            alphas,
            bias: dual.bias,
            params,
            sign: -1.0,
            iterations: dual.iterations,
        })
    }

    /// `g(x) = Σ αᵢyᵢk(pᵢ, x) + b` without the global sign.
    pub fn raw_decision(&self, x: &DVector<f64>) -> f64 {
        self.support_points
            .iter()
            .zip(&self.labels)
            .zip(&self.alphas)
            .map(|((p, y), a)| a * y * rbf(self.params.gamma, p, x))
            .sum::<f64>()
            + self.bias
    }

    /// Nonpositive on the feasible side.
    pub fn decide(&self, x: &DVector<f64>) -> f64 {
        self.sign * self.raw_decision(x)
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.decide(x) <= 0.0
    }

    /// Convex hull of the origin and the sampled points of `known` that the
    /// classifier labels feasible.
    pub fn inner_polytope<R: Rng + ?Sized>(
        &self,
        known: &Polytope,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Polytope> {
        let n = known.dim();
        let (lo, hi) = known.bounding_box()?;
        let mut kept = vec![DVector::zeros(n)];
        for _ in 0..n_samples {
            let x = DVector::from_fn(n, |i, _| {
                if hi[i] > lo[i] {
                    rng.gen_range(lo[i]..hi[i])
                } else {
                    lo[i]
                }
            });
            if self.is_feasible(&x) && known.contains(&x, 0.0)? {
                kept.push(x);
            }
        }
        if kept.len() < n + 1 {
            return Err(Error::DegenerateCloud {
                rank: kept.len().saturating_sub(1),
                dim: n,
            });
        }
        convex_hull(&PointCloud::new(kept)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn wedge(x: &DVector<f64>) -> bool {
        x[0] + x[1] <= 5.0 && x[0] - x[1] <= 5.0
    }

    fn wedge_data(n: usize, seed: u64) -> (PointCloud, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<DVector<f64>> = (0..n)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-20.0..20.0)))
            .collect();
        let labels = pts
            .iter()
            .map(|p| if wedge(p) { 1.0 } else { -1.0 })
            .collect();
        (PointCloud::new(pts).unwrap(), labels)
    }

    #[test]
    fn two_point_separation() {
        let cloud = PointCloud::new(vec![v(&[-1.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        let m = SvmModel::train(&cloud, &[1.0, -1.0], SvmParams::new(1.0, 10.0)).unwrap();
        assert!(m.decide(&v(&[-1.0, 0.0])) < 0.0);
        assert!(m.decide(&v(&[1.0, 0.0])) > 0.0);
        assert!(m.decide(&v(&[0.0, 0.0])) <= 1e-9);
    }

    #[test]
    fn symmetric_data_has_zero_decision_at_origin() {
        let pts = vec![
            v(&[-1.0, 0.0]),
            v(&[1.0, 0.0]),
            v(&[-2.0, 1.0]),
            v(&[2.0, -1.0]),
        ];
        let cloud = PointCloud::new(pts).unwrap();
        let m =
            SvmModel::train_unsigned(&cloud, &[1.0, -1.0, 1.0, -1.0], SvmParams::new(0.5, 10.0))
                .unwrap();
        assert!(m.raw_decision(&v(&[0.0, 0.0])).abs() <= 1e-6);
    }

    #[test]
    fn single_class_is_rejected() {
        let cloud = PointCloud::new(vec![v(&[0.0, 0.0]), v(&[1.0, 0.0])]).unwrap();
        assert!(matches!(
            SvmModel::train(&cloud, &[1.0, 1.0], SvmParams::new(1.0, 1.0)),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn origin_on_infeasible_side_is_rejected() {
        let cloud = PointCloud::new(vec![v(&[0.0, 0.0]), v(&[5.0, 0.0])]).unwrap();
        assert!(matches!(
            SvmModel::train(&cloud, &[-1.0, 1.0], SvmParams::new(0.1, 10.0)),
            Err(Error::OriginInfeasible(_))
        ));
    }

    #[test]
    fn wedge_training_accuracy_and_dual_feasibility() {
        let (cloud, labels) = wedge_data(200, 1);
        let params = SvmParams::new(0.05, 100.0);
        let m = SvmModel::train(&cloud, &labels, params).unwrap();
        let correct = cloud
            .points()
            .iter()
            .zip(&labels)
            .filter(|(p, l)| (m.decide(p) <= 0.0) == (**l > 0.0))
            .count();
        assert!(correct as f64 >= 0.95 * 200.0, "accuracy {correct}/200");
        let balance: f64 = m.alphas.iter().zip(&m.labels).map(|(a, y)| a * y).sum();
        assert!(balance.abs() <= 1e-8);
        assert!(m.alphas.iter().all(|a| *a >= 0.0 && *a <= params.c + 1e-12));
        for ((p, y), a) in m.support_points.iter().zip(&m.labels).zip(&m.alphas) {
            if *y < 0.0 && *a < params.c - 1e-9 {
                assert!(m.decide(p) >= 1.0 - 1e-4, "margin at {p}: {}", m.decide(p));
            }
        }
    }

    #[test]
    fn diagonal_sign_change_brackets_true_boundary() {
        let (cloud, labels) = wedge_data(800, 1);
        let m = SvmModel::train(&cloud, &labels, SvmParams::new(0.05, 100.0)).unwrap();
        // the first sign change along the diagonal brackets x₁ + x₂ = 5
        let (mut lo, mut hi) = (0.0, 1.0);
        assert!(m.decide(&v(&[0.0, 0.0])) <= 0.0 && m.decide(&v(&[10.0, 10.0])) > 0.0);
        let mut s = 0.0;
        while s < 1.0 {
            if m.decide(&v(&[10.0 * s, 10.0 * s])) > 0.0 {
                hi = s;
                break;
            }
            lo = s;
            s += 0.01;
        }
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if m.decide(&v(&[10.0 * mid, 10.0 * mid])) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let crossing = 20.0 * lo;
        assert!(
            (crossing - 5.0).abs() <= 1.0,
            "boundary crossing at x1 + x2 = {crossing}"
        );
    }

    #[test]
    fn decision_is_lipschitz() {
        let (cloud, labels) = wedge_data(150, 2);
        let m = SvmModel::train(&cloud, &labels, SvmParams::new(0.05, 100.0)).unwrap();
        let g = m.params.gamma;
        let lip: f64 = m.alphas.iter().sum::<f64>() * (2.0 * g).sqrt() * (-0.5f64).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-20.0..20.0));
            let d = DVector::from_fn(2, |_, _| rng.gen_range(-1e-3..1e-3));
            let y = &x + &d;
            assert!((m.decide(&x) - m.decide(&y)).abs() <= lip * d.norm() * (1.0 + 1e-6));
        }
    }

    #[test]
    fn inner_polytope_properties() {
        let known = Polytope::symmetric_box(2, 20.0);
        let (cloud, labels) = wedge_data(800, 3);
        let m = SvmModel::train(&cloud, &labels, SvmParams::new(0.05, 100.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = m.inner_polytope(&known, 1000, &mut rng).unwrap();
        for vert in p.vertices().unwrap() {
            assert!(known.contains(&vert, 1e-9).unwrap());
        }
        let again = m
            .inner_polytope(&known, 1000, &mut ChaCha8Rng::seed_from_u64(4))
            .unwrap();
        assert_eq!(p, again);

        let mut inside = 0;
        let mut total = 0;
        let mut probe_rng = ChaCha8Rng::seed_from_u64(5);
        while total < 500 {
            let x = DVector::from_fn(2, |_, _| probe_rng.gen_range(-20.0..20.0));
            if p.contains(&x, 0.0).unwrap() {
                total += 1;
                inside += usize::from(m.decide(&x) <= 0.0);
            }
        }
        assert!(inside as f64 >= 0.99 * 500.0, "{inside}/500");
    }

    #[test]
    fn all_feasible_classifier_fills_known_set() {
        let known = Polytope::symmetric_box(2, 1.0);
        let cloud = PointCloud::new(vec![v(&[0.0, 0.0]), v(&[50.0, 50.0])]).unwrap();
        let m = SvmModel::train(&cloud, &[1.0, -1.0], SvmParams::new(1e-4, 100.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = m.inner_polytope(&known, 2000, &mut rng).unwrap();
        for vert in p.vertices().unwrap() {
            assert!(known.contains(&vert, 1e-9).unwrap());
            assert!(vert.amax() > 0.9);
        }
    }

    #[test]
    fn json_round_trip() {
        let (cloud, labels) = wedge_data(50, 7);
        let m = SvmModel::train(&cloud, &labels, SvmParams::new(0.05, 100.0)).unwrap();
        let back: SvmModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
