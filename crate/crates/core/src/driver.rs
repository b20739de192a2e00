//! The alternation loop: cluster assignment, per-cluster distributions, then a
//! sequential per-scan pose update, repeated until the log-likelihood settles.

use std::f64::consts::FRAC_PI_2;

use log::{debug, warn};

use crate::clustering::{self, assign_with_index, compute_ndts, init_centroids, ClusterLabels, NdtCell};
use crate::solver::{log_likelihood, solve_perturbation, update_transform, QpSystem};
use crate::{CentroidIndex, Error, Point, PointSet, Result, RigidTransform};

/// Largest rotation a single update may apply; longer steps are scaled down.
pub const MAX_ROTATION_STEP: f64 = FRAC_PI_2;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub max_iterations: usize,
    /// Stop once `|L(h) - L(h-1)|` falls below this.
    pub likelihood_tolerance: f64,
    /// Fixed cluster count; `None` derives it from the data.
    pub k_override: Option<usize>,
    /// Covariance regularization added before inversion.
    pub epsilon_reg: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iterations: 300,
            likelihood_tolerance: 1e-6,
            k_override: None,
            epsilon_reg: clustering::DEFAULT_EPSILON,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.likelihood_tolerance.is_finite() && self.likelihood_tolerance > 0.0) {
            return Err(Error::InvalidInput("likelihood tolerance must be positive".into()));
        }
        if !(self.epsilon_reg.is_finite() && self.epsilon_reg > 0.0) {
            return Err(Error::InvalidInput("covariance regularization must be positive".into()));
        }
        if self.k_override == Some(0) {
            return Err(Error::InvalidInput("cluster count must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the convergence trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub valid_clusters: usize,
    /// `‖ξ*‖` per scan; the reference scan is always 0.
    pub step_norms: Vec<f64>,
}

impl IterationRecord {
    pub fn max_step_norm(&self) -> f64 {
        self.step_norms.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationState {
    pub transforms: Vec<RigidTransform>,
    pub labels: ClusterLabels,
    pub ndts: Vec<NdtCell>,
    pub likelihood_trace: Vec<f64>,
    /// Completed iterations.
    pub iteration: usize,
    pub records: Vec<IterationRecord>,
}

/// Cluster count used by [`register`]: the override when set, otherwise `round(N / (M + 6))`.
pub fn default_k(point_sets: &[PointSet], config: &RegistrationConfig) -> usize {
    config
        .k_override
        .unwrap_or_else(|| clustering::choose_k(point_sets))
}

/// Registers `point_sets` starting from `initial`. The first scan is the
/// reference frame and keeps its initial transform.
pub fn register(
    point_sets: &[PointSet],
    initial: &[RigidTransform],
    config: &RegistrationConfig,
) -> Result<(Vec<RigidTransform>, RegistrationState)> {
    config.validate()?;
    if point_sets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "registration needs at least 2 scans, got {}",
            point_sets.len()
        )));
    }
    if initial.len() != point_sets.len() {
        return Err(Error::LengthMismatch {
            left: point_sets.len(),
            right: initial.len(),
        });
    }
    if let Some(ps) = point_sets.iter().find(|ps| ps.is_empty()) {
        return Err(Error::InvalidInput(format!("scan '{}' has no points", ps.id)));
    }

    let k = default_k(point_sets, config);
    let mut centroids = init_centroids(point_sets, initial, k)?;
    let mut transforms = initial.to_vec();
    let mut trace = Vec::new();
    let mut records = Vec::new();

    let mut h = 0;
    let (labels, ndts) = loop {
        h += 1;
        let index = CentroidIndex::build(&centroids)?;
        let labels = assign_with_index(point_sets, &transforms, &index);
        let ndts = compute_ndts(point_sets, &transforms, &labels, &centroids, config.epsilon_reg)?;
        centroids = ndts.iter().map(|c| c.mean).collect::<Vec<Point>>();

        let valid_clusters = ndts.iter().filter(|c| c.valid).count();
        if valid_clusters == 0 {
            return Err(Error::Numerical(format!(
                "iteration {h}: all {k} clusters have 5 or fewer points"
            )));
        }
        if h == 1 {
            if let Some(i) = (0..point_sets.len()).find(|&i| labels.valid_count(i, &ndts) == 0) {
                return Err(Error::Numerical(format!(
                    "scan '{}' has no points in a valid cluster",
                    point_sets[i].id
                )));
            }
        }

        // Distributions stay frozen while every scan after the first is updated in order.
        let mut step_norms = vec![0.0; point_sets.len()];
        for i in 1..point_sets.len() {
            let t0 = transforms[i];
            let mut qp = QpSystem::zero();
            let mut used = 0usize;
            for (v, &c) in point_sets[i].points.iter().zip(&labels.per_scan[i]) {
                let cell = &ndts[c];
                if cell.valid {
                    qp.accumulate(&t0, v, &cell.mean, &cell.information);
                    used += 1;
                }
            }
            if used == 0 {
                warn!("iteration {h}: scan '{}' has no valid points, pose kept", point_sets[i].id);
                continue;
            }
            let (xi, capped) = solve_perturbation(&qp).with_rotation_capped(MAX_ROTATION_STEP);
            if capped {
                warn!("iteration {h}: scan '{}' rotation step capped", point_sets[i].id);
            }
            if !xi.is_finite() {
                return Err(Error::Numerical(format!(
                    "iteration {h}: non-finite update for scan '{}'",
                    point_sets[i].id
                )));
            }
            transforms[i] = update_transform(&t0, &xi);
            step_norms[i] = xi.norm();
        }

        let l = log_likelihood(point_sets, &transforms, &labels, &ndts)?;
        let record = IterationRecord {
            iteration: h,
            log_likelihood: l,
            valid_clusters,
            step_norms,
        };
        debug!(
            "iter {h}: L = {l:.6}, valid clusters = {valid_clusters}, max step = {:.3e}",
            record.max_step_norm()
        );
        records.push(record);
        let settled = trace
            .last()
            .is_some_and(|&prev: &f64| (l - prev).abs() < config.likelihood_tolerance);
        trace.push(l);
        if settled || h >= config.max_iterations {
            break (labels, ndts);
        }
    };

    let state = RegistrationState {
        transforms: transforms.clone(),
        labels,
        ndts,
        likelihood_trace: trace,
        iteration: h,
        records,
    };
    Ok((transforms, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn grid(n: usize) -> Vec<Point> {
        (0..n * n * n)
            .map(|i| {
                let (x, y, z) = (i % n, (i / n) % n, i / (n * n));
                Vector3::new(x as f64, (y * y) as f64 * 0.3, z as f64 * 0.7 + x as f64 * 0.1)
            })
            .collect()
    }

    #[test]
    fn rejects_single_scan() {
        let ps = vec![PointSet::new("a", grid(4))];
        let err = register(&ps, &[RigidTransform::identity()], &RegistrationConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn rejects_empty_scan_and_bad_config() {
        let ps = vec![PointSet::new("a", grid(4)), PointSet::new("b", vec![])];
        let init = [RigidTransform::identity(); 2];
        assert!(register(&ps, &init, &RegistrationConfig::default()).is_err());
        let ps = vec![PointSet::new("a", grid(4)), PointSet::new("b", grid(4))];
        let cfg = RegistrationConfig { max_iterations: 0, ..Default::default() };
        assert!(register(&ps, &init, &cfg).is_err());
    }

    #[test]
    fn default_k_respects_override() {
        let ps: Vec<PointSet> = (0..10).map(|i| PointSet::new(format!("{i}"), vec![Point::zeros(); 2000])).collect();
        assert_eq!(default_k(&ps, &RegistrationConfig::default()), 1250);
        let cfg = RegistrationConfig { k_override: Some(500), ..Default::default() };
        assert_eq!(default_k(&ps, &cfg), 500);
    }

    #[test]
    fn all_invalid_clusters_reported() {
        // 2 scans x 3 points, K = 1 would give one valid cluster; force K = 6 so every cluster is tiny.
        let ps = vec![PointSet::new("a", grid(2)[..3].to_vec()), PointSet::new("b", grid(2)[..3].to_vec())];
        let cfg = RegistrationConfig { k_override: Some(6), ..Default::default() };
        let err = register(&ps, &[RigidTransform::identity(); 2], &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn max_iterations_bounds_trace() {
        let ps = vec![PointSet::new("a", grid(5)), PointSet::new("b", grid(5))];
        let init = [RigidTransform::identity(), RigidTransform::from_translation(Vector3::new(0.05, 0.0, 0.0))];
        let cfg = RegistrationConfig { max_iterations: 1, ..Default::default() };
        let (_, state) = register(&ps, &init, &cfg).unwrap();
        assert_eq!(state.likelihood_trace.len(), 1);
        assert_eq!(state.iteration, 1);
        assert_eq!(state.records.len(), 1);
        assert_eq!(state.records[0].step_norms[0], 0.0);
    }
}
