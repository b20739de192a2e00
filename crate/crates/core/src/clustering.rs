//! Joint K-means over all aligned scans and the per-cluster normal
//! distributions (mean, covariance, information matrix).

use nalgebra::Matrix3;

use crate::io::stride_indices;
use crate::{CentroidIndex, Error, Point, PointSet, Result, RigidTransform};

/// Regularization added to every cluster covariance before inversion.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Minimum number of points a cluster needs to be valid (strictly more than 5).
pub const MIN_VALID_POINTS: usize = 6;

/// Normal distribution fitted to one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct NdtCell {
    pub mean: Point,
    pub covariance: Matrix3<f64>,
    /// `(covariance + εI)⁻¹`; identity placeholder when the cell is invalid.
    pub information: Matrix3<f64>,
    pub count: usize,
    pub valid: bool,
}

impl NdtCell {
    /// A valid cell with a given information matrix and no covariance
    /// bookkeeping. Used to feed the solver directly.
    pub fn from_information(mean: Point, information: Matrix3<f64>) -> Self {
        NdtCell {
            mean,
            covariance: Matrix3::zeros(),
            information,
            count: MIN_VALID_POINTS,
            valid: true,
        }
    }

    fn invalid(mean: Point, count: usize) -> Self {
        NdtCell {
            mean,
            covariance: Matrix3::zeros(),
            information: Matrix3::identity(),
            count,
            valid: false,
        }
    }
}

/// Cluster index of every point, one list per scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabels {
    pub per_scan: Vec<Vec<usize>>,
}

impl ClusterLabels {
    /// Number of points of scan `scan` whose cluster is valid.
    pub fn valid_count(&self, scan: usize, cells: &[NdtCell]) -> usize {
        self.per_scan[scan].iter().filter(|&&k| cells[k].valid).count()
    }

    pub fn total(&self) -> usize {
        self.per_scan.iter().map(Vec::len).sum()
    }
}

/// Number of clusters: `max(1, round(N / (M + 6)))`.
pub fn choose_k(point_sets: &[PointSet]) -> usize {
    let m = point_sets.len();
    let n: usize = point_sets.iter().map(PointSet::len).sum();
    let per_cluster = m + 6;
    ((2 * n + per_cluster) / (2 * per_cluster)).max(1)
}

/// Picks `k` of the aligned points with the same stride rule as downsampling.
pub fn init_centroids(
    point_sets: &[PointSet],
    transforms: &[RigidTransform],
    k: usize,
) -> Result<Vec<Point>> {
    check_lengths(point_sets, transforms)?;
    let n: usize = point_sets.iter().map(PointSet::len).sum();
    if k == 0 {
        return Err(Error::InvalidInput("cluster count must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidInput(format!(
            "cluster count {k} exceeds the number of points {n}"
        )));
    }
    let aligned: Vec<Point> = point_sets
        .iter()
        .zip(transforms)
        .flat_map(|(ps, t)| ps.points.iter().map(move |v| t.apply(v)))
        .collect();
    Ok(stride_indices(n, k).into_iter().map(|i| aligned[i]).collect())
}

fn check_lengths(point_sets: &[PointSet], transforms: &[RigidTransform]) -> Result<()> {
    if point_sets.len() != transforms.len() {
        return Err(Error::LengthMismatch {
            left: point_sets.len(),
            right: transforms.len(),
        });
    }
    Ok(())
}

/// Nearest-centroid label for every aligned point.
pub fn assign_clusters(
    point_sets: &[PointSet],
    transforms: &[RigidTransform],
    centroids: &[Point],
) -> Result<ClusterLabels> {
    check_lengths(point_sets, transforms)?;
    let index = CentroidIndex::build(centroids)?;
    Ok(assign_with_index(point_sets, transforms, &index))
}

pub(crate) fn assign_with_index(
    point_sets: &[PointSet],
    transforms: &[RigidTransform],
    index: &CentroidIndex,
) -> ClusterLabels {
    let per_scan = point_sets
        .iter()
        .zip(transforms)
        .map(|(ps, t)| ps.points.iter().map(|v| index.nearest(&t.apply(v)).0).collect())
        .collect();
    ClusterLabels { per_scan }
}

/// Fits a normal distribution to every cluster with more than five members.
/// Smaller clusters are returned invalid with their mean left at `previous[k]`.
pub fn compute_ndts(
    point_sets: &[PointSet],
    transforms: &[RigidTransform],
    labels: &ClusterLabels,
    previous: &[Point],
    epsilon: f64,
) -> Result<Vec<NdtCell>> {
    check_lengths(point_sets, transforms)?;
    if labels.per_scan.len() != point_sets.len() {
        return Err(Error::LengthMismatch {
            left: labels.per_scan.len(),
            right: point_sets.len(),
        });
    }
    let k = previous.len();
    let mut counts = vec![0usize; k];
    let mut sums = vec![Point::zeros(); k];

    for ((ps, t), scan_labels) in point_sets.iter().zip(transforms).zip(&labels.per_scan) {
        if scan_labels.len() != ps.len() {
            return Err(Error::LengthMismatch {
                left: scan_labels.len(),
                right: ps.len(),
            });
        }
        for (v, &c) in ps.points.iter().zip(scan_labels) {
            if c >= k {
                return Err(Error::InvalidInput(format!("label {c} out of range for {k} clusters")));
            }
            counts[c] += 1;
            sums[c] += t.apply(v);
        }
    }

    let means: Vec<Point> = (0..k)
        .map(|c| {
            if counts[c] >= MIN_VALID_POINTS {
                sums[c] / counts[c] as f64
            } else {
                previous[c]
            }
        })
        .collect();

    // Second pass for the scatter about the final means.
    let mut scatter = vec![Matrix3::zeros(); k];
    for ((ps, t), scan_labels) in point_sets.iter().zip(transforms).zip(&labels.per_scan) {
        for (v, &c) in ps.points.iter().zip(scan_labels) {
            if counts[c] >= MIN_VALID_POINTS {
                let d = t.apply(v) - means[c];
                scatter[c] += d * d.transpose();
            }
        }
    }

    let regularizer = Matrix3::identity() * epsilon;
    (0..k)
        .map(|c| {
            if counts[c] < MIN_VALID_POINTS {
                return Ok(NdtCell::invalid(means[c], counts[c]));
            }
            let covariance = scatter[c] / counts[c] as f64;
            let covariance = (covariance + covariance.transpose()) * 0.5;
            let information = regularized_inverse(&(covariance + regularizer)).ok_or_else(|| {
                Error::Numerical(format!("cluster {c}: regularized covariance is not positive definite"))
            })?;
            Ok(NdtCell {
                mean: means[c],
                covariance,
                information,
                count: counts[c],
                valid: true,
            })
        })
        .collect()
}

/// Solves `A X = I` through a Cholesky factorization and symmetrizes the result.
fn regularized_inverse(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let chol = a.cholesky()?;
    let x = chol.solve(&Matrix3::identity());
    Some((x + x.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{SymmetricEigen, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(points: Vec<Point>) -> Vec<PointSet> {
        vec![PointSet::new("s", points)]
    }

    fn line_points(n: usize) -> Vec<PointSet> {
        single((0..n).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect())
    }

    #[test]
    fn choose_k_rule() {
        let sets: Vec<PointSet> = (0..10)
            .map(|i| PointSet::new(format!("{i}"), vec![Vector3::zeros(); 2000]))
            .collect();
        assert_eq!(choose_k(&sets), 1250);
        assert_eq!(choose_k(&single(vec![Vector3::zeros(); 7])), 1);
        let sets: Vec<PointSet> = (0..4).map(|i| PointSet::new(format!("{i}"), vec![Vector3::zeros(); 250])).collect();
        assert_eq!(choose_k(&sets), 100);
    }

    #[test]
    fn init_centroids_stride() {
        let ps = line_points(10);
        let id = [RigidTransform::identity()];
        assert_eq!(init_centroids(&ps, &id, 10).unwrap(), ps[0].points);
        let ps = line_points(1000);
        let cs = init_centroids(&ps, &id, 100).unwrap();
        assert_eq!(cs.len(), 100);
        assert!(cs.iter().enumerate().all(|(j, c)| c.x == (10 * j) as f64));
        assert!(init_centroids(&ps, &id, 1001).is_err());
    }

    #[test]
    fn init_centroids_uses_aligned_points_in_scan_order() {
        let sets = vec![
            PointSet::new("a", vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]),
            PointSet::new("b", vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]),
        ];
        let ts = [
            RigidTransform::identity(),
            RigidTransform::from_translation(Vector3::new(0.0, 5.0, 0.0)),
        ];
        let cs = init_centroids(&sets, &ts, 4).unwrap();
        assert_eq!(cs[2], Vector3::new(0.0, 5.0, 0.0));
        assert_eq!(cs[3], Vector3::new(1.0, 5.0, 0.0));
    }

    #[test]
    fn assign_examples() {
        let ps = single(vec![Vector3::new(1.0, 1.0, 1.0), Vector3::new(99.0, 0.0, 0.0)]);
        let id = [RigidTransform::identity()];
        let labels = assign_clusters(&ps, &id, &[Vector3::zeros()]).unwrap();
        assert_eq!(labels.per_scan, vec![vec![0, 0]]);
        let labels = assign_clusters(&ps, &id, &[Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)]).unwrap();
        assert_eq!(labels.per_scan, vec![vec![0, 1]]);
    }

    #[test]
    fn octahedron_cluster() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
        ];
        let ps = single(pts);
        let labels = ClusterLabels { per_scan: vec![vec![0; 6]] };
        let cells = compute_ndts(&ps, &[RigidTransform::identity()], &labels, &[Vector3::zeros()], DEFAULT_EPSILON).unwrap();
        let c = &cells[0];
        assert!(c.valid);
        assert_eq!(c.count, 6);
        assert!(c.mean.norm() < 1e-15);
        assert!((c.covariance - Matrix3::identity() / 3.0).amax() < 1e-15);
        let expected: f64 = 1.0 / (1.0 / 3.0 + 1e-6);
        assert!((expected - 2.999991).abs() < 1e-6);
        assert!((c.information - Matrix3::identity() * expected).amax() < 1e-9);
    }

    #[test]
    fn five_points_is_invalid() {
        let ps = single(vec![Vector3::new(1.0, 2.0, 3.0); 5]);
        let labels = ClusterLabels { per_scan: vec![vec![0; 5]] };
        let prev = [Vector3::new(7.0, 7.0, 7.0)];
        let cells = compute_ndts(&ps, &[RigidTransform::identity()], &labels, &prev, DEFAULT_EPSILON).unwrap();
        assert!(!cells[0].valid);
        assert_eq!(cells[0].count, 5);
        assert_eq!(cells[0].mean, prev[0]);
    }

    #[test]
    fn empty_cluster_retains_centroid() {
        let ps = single(vec![Vector3::zeros(); 6]);
        let labels = ClusterLabels { per_scan: vec![vec![0; 6]] };
        let prev = [Vector3::zeros(), Vector3::new(4.0, 4.0, 4.0)];
        let cells = compute_ndts(&ps, &[RigidTransform::identity()], &labels, &prev, DEFAULT_EPSILON).unwrap();
        assert!(!cells[1].valid);
        assert_eq!(cells[1].count, 0);
        assert_eq!(cells[1].mean, prev[1]);
    }

    #[test]
    fn identical_points_hit_epsilon_floor() {
        let p = Vector3::new(0.5, -2.0, 3.0);
        let ps = single(vec![p; 6]);
        let labels = ClusterLabels { per_scan: vec![vec![0; 6]] };
        let cells = compute_ndts(&ps, &[RigidTransform::identity()], &labels, &[Vector3::zeros()], DEFAULT_EPSILON).unwrap();
        assert_eq!(cells[0].mean, p);
        assert_eq!(cells[0].covariance, Matrix3::zeros());
        assert!((cells[0].information - Matrix3::identity() * 1e6).amax() < 1e-6);
    }

    #[test]
    fn coplanar_cluster_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point> = (0..30)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let ps = single(pts);
        let labels = ClusterLabels { per_scan: vec![vec![0; 30]] };
        let cells = compute_ndts(&ps, &[RigidTransform::identity()], &labels, &[Vector3::zeros()], DEFAULT_EPSILON).unwrap();
        let eig = SymmetricEigen::new(cells[0].information);
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0 && l.is_finite()));
        let largest = eig.eigenvalues.max();
        assert!((largest - 1e6).abs() / 1e6 < 1e-9);
        let check = cells[0].information * (cells[0].covariance + Matrix3::identity() * 1e-6);
        assert!((check - Matrix3::identity()).amax() < 1e-8 * cells[0].information.norm());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let ps = single(vec![Vector3::zeros(); 2]);
        let labels = ClusterLabels { per_scan: vec![vec![0, 3]] };
        assert!(compute_ndts(&ps, &[RigidTransform::identity()], &labels, &[Vector3::zeros()], DEFAULT_EPSILON).is_err());
    }
}
