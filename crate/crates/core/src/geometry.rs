//! SO(3)/SE(3) primitives: skew operator, rotation exponential, retraction,
//! group action and composition.
//!
//! Rotations are kept as full 3x3 matrices; the solver consumes `R v + t`
//! directly and never needs a quaternion.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};

use crate::{Error, Point, Result};

/// Below this angle `so3_exp` switches to its second-order Taylor form.
pub const SMALL_ANGLE: f64 = 1e-10;

/// Tolerance of the rotation invariants (orthogonality and unit determinant).
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Rodrigues' formula for the exponential map so(3) -> SO(3).
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + k2 * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k2 * b
}

/// Largest element-wise deviation of `rᵀr` from the identity.
pub fn orthogonality_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Closest rotation matrix in the Frobenius sense (polar decomposition).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Tangent-space perturbation `(ξ_R, ξ_t)` of a rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rotational: Vector3<f64>,
    pub translational: Vector3<f64>,
}

impl Twist {
    pub fn new(rotational: Vector3<f64>, translational: Vector3<f64>) -> Self {
        Twist {
            rotational,
            translational,
        }
    }

    pub fn zero() -> Self {
        Twist::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Splits a 6-vector laid out as `(rotational, translational)`.
    pub fn from_vector(xi: &Vector6<f64>) -> Self {
        Twist::new(xi.fixed_rows::<3>(0).into(), xi.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&self.rotational);
        xi.fixed_rows_mut::<3>(3).copy_from(&self.translational);
        xi
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rotational.iter().chain(self.translational.iter()).all(|x| x.is_finite())
    }

    /// Scales the whole twist down so that `‖ξ_R‖ <= max_angle`.
    /// Returns the twist unchanged when it already satisfies the bound.
    pub fn with_rotation_capped(self, max_angle: f64) -> (Self, bool) {
        let angle = self.rotational.norm();
        if angle <= max_angle {
            return (self, false);
        }
        let s = max_angle / angle;
        (
            Twist::new(self.rotational * s, self.translational * s),
            true,
        )
    }
}

/// Element of SE(3), acting on points as `R v + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, checking the rotation block within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    /// Like [`RigidTransform::new`] with a caller-chosen tolerance. The matrix
    /// is stored as given; nothing is re-orthonormalized.
    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("non-finite transform entry".into()));
        }
        let defect = orthogonality_defect(&rotation);
        if defect > tolerance {
            return Err(Error::InvalidInput(format!(
                "rotation is not orthonormal (defect {defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tolerance {
            return Err(Error::InvalidInput(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    /// Builds from an exactly constructed rotation (e.g. `so3_exp` output).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Group action `R v + t`.
    pub fn apply(&self, v: &Point) -> Point {
        self.rotation * v + self.translation
    }

    /// `self ∘ other`: applies `other` first. The rotation block is projected
    /// back onto SO(3) only when floating-point drift exceeds the invariant tolerance.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        if orthogonality_defect(&rotation) > ROTATION_TOLERANCE {
            rotation = nearest_rotation(&rotation);
        }
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of the rotation block, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

/// Angle of a rotation matrix, `acos((tr R - 1) / 2)`, evaluated as
/// `atan2(sin θ, cos θ)` with `sin θ` taken from the skew part of `R`. The
/// plain arccosine loses about half the digits near zero (a trace rounded by
/// 1e-16 reads as 1e-8 rad); this form is accurate over the whole range.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    sin.atan2(cos)
}

/// Retraction ℝ⁶ -> SE(3): rotation `exp(ξ_R^)`, translation `ξ_t`.
pub fn retract(xi: &Twist) -> RigidTransform {
    RigidTransform::from_parts(so3_exp(&xi.rotational), xi.translational)
}
