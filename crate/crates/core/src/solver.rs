//! Per-scan rigid update: linearized residuals, quadratic model assembly,
//! pseudo-inverse solve and the retraction update, plus the log-likelihood
//! of the clustered normal-distribution model.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector6};

use crate::clustering::{ClusterLabels, NdtCell};
use crate::geometry::{retract, skew};
use crate::{Error, Point, PointSet, Result, RigidTransform, Twist};

/// Relative singular-value cutoff of the pseudo-inverse, before scaling by the dimension.
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-12;

/// Quadratic model `ξᵀ H ξ + 2 bᵀ ξ + c` of the weighted residual around the current pose.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSystem {
    pub hessian: Matrix6<f64>,
    pub gradient_half: Vector6<f64>,
    pub constant: f64,
}

impl QpSystem {
    pub fn zero() -> Self {
        QpSystem {
            hessian: Matrix6::zeros(),
            gradient_half: Vector6::zeros(),
            constant: 0.0,
        }
    }

    /// Adds one point/cluster pair.
    pub fn accumulate(&mut self, t0: &RigidTransform, v: &Point, mean: &Point, information: &Matrix3<f64>) {
        let aligned = t0.apply(v);
        let r0 = aligned - mean;
        let j = jacobian(&aligned);
        let jt_omega = j.transpose() * information;
        self.hessian += jt_omega * j;
        self.gradient_half += jt_omega * r0;
        self.constant += r0.dot(&(information * r0));
    }

    /// Model value at `xi`.
    pub fn evaluate(&self, xi: &Vector6<f64>) -> f64 {
        xi.dot(&(self.hessian * xi)) + 2.0 * self.gradient_half.dot(xi) + self.constant
    }
}

/// `[-(R⁰v + t⁰)^  I]`, the derivative of the residual with respect to the twist.
pub fn jacobian(aligned: &Point) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(aligned)));
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    j
}

/// `T v - μ`.
pub fn residual(t: &RigidTransform, v: &Point, mu: &Point) -> Point {
    t.apply(v) - mu
}

/// Assembles the quadratic model over `points[j]` paired with `targets[j]`, in point order.
pub fn build_qp(points: &[Point], targets: &[&NdtCell], t0: &RigidTransform) -> Result<QpSystem> {
    if points.is_empty() {
        return Err(Error::InvalidInput("quadratic model needs at least one point".into()));
    }
    if points.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: targets.len(),
        });
    }
    if let Some(pos) = targets.iter().position(|c| !c.valid) {
        return Err(Error::InvalidInput(format!("point {pos} refers to an invalid cluster")));
    }
    let mut qp = QpSystem::zero();
    for (v, cell) in points.iter().zip(targets) {
        qp.accumulate(t0, v, &cell.mean, &cell.information);
    }
    Ok(qp)
}

/// Moore-Penrose pseudo-inverse of a 6x6 matrix by SVD, truncating singular
/// values below `max σ · 1e-12 · 6`.
pub fn pseudo_inverse(m: &Matrix6<f64>) -> Matrix6<f64> {
    let svd = m.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return Matrix6::zeros();
    }
    let cutoff = sigma_max * PINV_RELATIVE_CUTOFF * 6.0;
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let mut inv_sigma = Matrix6::zeros();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            inv_sigma[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * inv_sigma * u.transpose()
}

/// Minimum-norm minimizer `ξ* = -H† b` of the quadratic model.
pub fn solve_perturbation(qp: &QpSystem) -> Twist {
    let xi = -(pseudo_inverse(&qp.hessian) * qp.gradient_half);
    Twist::from_vector(&xi)
}

/// `retract(ξ) ∘ T⁰`.
pub fn update_transform(t0: &RigidTransform, xi: &Twist) -> RigidTransform {
    retract(xi).compose(t0)
}

/// Log-density of a trivariate normal given its information matrix's log-determinant.
fn log_normal(r: &Point, information: &Matrix3<f64>, log_det_information: f64) -> f64 {
    0.5 * log_det_information - 1.5 * (2.0 * PI).ln() - 0.5 * r.dot(&(information * r))
}

/// `log |Ω|` through a Cholesky factorization of `Ω`.
pub fn log_det_spd(m: &Matrix3<f64>) -> Option<f64> {
    let chol = m.cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Joint log-likelihood of all points in valid clusters; points in invalid
/// clusters contribute nothing.
pub fn log_likelihood(
    point_sets: &[PointSet],
    transforms: &[RigidTransform],
    labels: &ClusterLabels,
    cells: &[NdtCell],
) -> Result<f64> {
    if point_sets.len() != transforms.len() || point_sets.len() != labels.per_scan.len() {
        return Err(Error::LengthMismatch {
            left: point_sets.len(),
            right: transforms.len().min(labels.per_scan.len()),
        });
    }
    let log_dets: Vec<Option<f64>> = cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if !c.valid {
                return Ok(None);
            }
            log_det_spd(&c.information)
                .map(Some)
                .ok_or_else(|| Error::Numerical(format!("cluster {k}: information matrix is not positive definite")))
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    for ((ps, t), scan_labels) in point_sets.iter().zip(transforms).zip(&labels.per_scan) {
        for (v, &k) in ps.points.iter().zip(scan_labels) {
            if let Some(log_det) = log_dets[k] {
                let cell = &cells[k];
                total += log_normal(&residual(t, v, &cell.mean), &cell.information, log_det);
            }
        }
    }
    Ok(total)
}
