//! Rotation and translation error against ground-truth transforms.

use std::fmt::Write as _;

use crate::geometry::rotation_angle;
use crate::{Error, Result, RigidTransform};

/// Geodesic angle between two rotations, `acos((tr(Ra Rbᵀ) - 1) / 2)`.
/// Identical rotations give exactly zero and the result is never NaN.
pub fn rotation_angle_between(a: &RigidTransform, b: &RigidTransform) -> f64 {
    rotation_angle(&(a.rotation() * b.rotation().transpose()))
}

pub fn translation_distance(a: &RigidTransform, b: &RigidTransform) -> f64 {
    (a.translation() - b.translation()).norm()
}

fn check(measured: &[RigidTransform], truth: &[RigidTransform]) -> Result<()> {
    if measured.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: measured.len(),
            right: truth.len(),
        });
    }
    if measured.is_empty() {
        return Err(Error::InvalidInput("no transforms to compare".into()));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Mean rotation error in radians.
pub fn rotation_error(measured: &[RigidTransform], truth: &[RigidTransform]) -> Result<f64> {
    check(measured, truth)?;
    Ok(mean(measured.iter().zip(truth).map(|(m, g)| rotation_angle_between(m, g))))
}

/// Mean translation error in scan units.
pub fn translation_error(measured: &[RigidTransform], truth: &[RigidTransform]) -> Result<f64> {
    check(measured, truth)?;
    Ok(mean(measured.iter().zip(truth).map(|(m, g)| translation_distance(m, g))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanError {
    pub scan: String,
    pub rotation: f64,
    pub translation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rotation_error: f64,
    pub translation_error: f64,
    pub per_scan: Vec<ScanError>,
}

impl ErrorReport {
    /// Per-scan breakdown with scans labelled by their position.
    pub fn compute(measured: &[RigidTransform], truth: &[RigidTransform]) -> Result<Self> {
        let ids: Vec<String> = (0..measured.len()).map(|i| i.to_string()).collect();
        Self::with_ids(measured, truth, &ids)
    }

    pub fn with_ids(measured: &[RigidTransform], truth: &[RigidTransform], ids: &[String]) -> Result<Self> {
        check(measured, truth)?;
        if ids.len() != measured.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: measured.len(),
            });
        }
        let per_scan: Vec<ScanError> = measured
            .iter()
            .zip(truth)
            .zip(ids)
            .map(|((m, g), id)| ScanError {
                scan: id.clone(),
                rotation: rotation_angle_between(m, g),
                translation: translation_distance(m, g),
            })
            .collect();
        Ok(ErrorReport {
            rotation_error: mean(per_scan.iter().map(|s| s.rotation)),
            translation_error: mean(per_scan.iter().map(|s| s.translation)),
            per_scan,
        })
    }

    /// `scan,rot_err_rad,trans_err` rows followed by a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scan,rot_err_rad,trans_err\n");
        for s in &self.per_scan {
            writeln!(out, "{},{:.9e},{:.9e}", s.scan, s.rotation, s.translation).unwrap();
        }
        writeln!(out, "mean,{:.9e},{:.9e}", self.rotation_error, self.translation_error).unwrap();
        out
    }
}
