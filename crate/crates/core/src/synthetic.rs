//! Seeded synthetic multi-view benchmark.
//!
//! The scene is a dome (upper hemisphere) standing on a square floor under a
//! half-cylinder vault whose axis runs along x. Each surface leaves a different
//! set of motions unconstrained, so any sector of the scene pins down all six
//! degrees of freedom. Scan `i` samples the sector of azimuths
//! `[iΔ - 1.5Δ, iΔ + 1.5Δ]` around the origin with `Δ = 2π / M`, so
//! consecutive scans share two thirds of their window.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::geometry::{so3_exp, Twist};
use crate::io::{save_transforms, save_xyz};
use crate::{geometry, Error, Point, PointSet, Result, RigidTransform};

const DOME_CENTER: [f64; 2] = [0.1, -0.05];
const DOME_RADIUS: f64 = 0.45;
/// The vault spans `x` in `[-HALF_LENGTH, HALF_LENGTH]`; the floor is the square of the same half-size.
const HALF_LENGTH: f64 = 1.0;
const VAULT_RADIUS: f64 = 1.0;

/// Largest ground-truth rotation angle and translation norm of a scan.
const TRUTH_MAX_ANGLE: f64 = 0.5;
const TRUTH_MAX_SHIFT: f64 = 0.5;

/// Half-width of a scan's azimuth window in units of the window spacing.
const WINDOW_HALF_WIDTH: f64 = 1.5;

/// Diagonal of the scene's bounding box in world coordinates.
pub fn scene_diagonal() -> f64 {
    let dx = 2.0 * HALF_LENGTH;
    let dy = 2.0 * VAULT_RADIUS;
    let dz = VAULT_RADIUS;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub scans: usize,
    pub points_per_scan: usize,
    /// Upper bound of the initial rotation error, radians.
    pub perturb_rot: f64,
    /// Upper bound of the initial translation error, scene units.
    pub perturb_trans: f64,
    /// Standard deviation of isotropic Gaussian noise added to every point.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            scans: 5,
            points_per_scan: 2000,
            perturb_rot: 0.03,
            perturb_trans: 0.02 * scene_diagonal(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scans < 2 {
            return Err(Error::InvalidInput("at least 2 scans are required".into()));
        }
        if self.points_per_scan < 100 {
            return Err(Error::InvalidInput("at least 100 points per scan are required".into()));
        }
        if !(0.0..=PI / 4.0).contains(&self.perturb_rot) {
            return Err(Error::InvalidInput("rotation perturbation must lie in [0, π/4]".into()));
        }
        if !(self.perturb_trans >= 0.0 && self.perturb_trans.is_finite()) {
            return Err(Error::InvalidInput("translation perturbation must be non-negative".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput("noise level must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Points in each scan's local frame: `truth[i]` maps them into the world.
    pub scans: Vec<PointSet>,
    pub truth: Vec<RigidTransform>,
    /// Ground truth with a bounded error; the first scan is left exact since it fixes the frame.
    pub initial: Vec<RigidTransform>,
    pub diagonal: f64,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> nalgebra::Matrix3<f64> {
    let axis = unit_vector(rng);
    let angle = rng.random::<f64>() * max_angle;
    so3_exp(&(axis * angle))
}

fn in_dome_footprint(x: f64, y: f64) -> bool {
    let (dx, dy) = (x - DOME_CENTER[0], y - DOME_CENTER[1]);
    dx * dx + dy * dy < DOME_RADIUS * DOME_RADIUS
}

/// Maps a point of the unit square onto the scene, uniformly by area. The
/// first coordinate selects the surface in proportion to its area. Returns
/// `None` for the floor samples that fall under the dome.
fn surface_point(u: f64, v: f64) -> Option<Point> {
    let dome = TAU * DOME_RADIUS * DOME_RADIUS;
    let vault = PI * VAULT_RADIUS * 2.0 * HALF_LENGTH;
    let floor = 4.0 * HALF_LENGTH * VAULT_RADIUS;
    let total = dome + vault + floor;
    let a = u * total;
    if a < dome {
        // Uniform on the hemisphere: height is uniform (Archimedes).
        let phi = a / dome * TAU;
        let z = v * DOME_RADIUS;
        let rho = (DOME_RADIUS * DOME_RADIUS - z * z).max(0.0).sqrt();
        Some(Vector3::new(DOME_CENTER[0] + rho * phi.cos(), DOME_CENTER[1] + rho * phi.sin(), z))
    } else if a < dome + vault {
        let x = ((a - dome) / vault * 2.0 - 1.0) * HALF_LENGTH;
        let phi = v * PI;
        Some(Vector3::new(x, VAULT_RADIUS * phi.cos(), VAULT_RADIUS * phi.sin()))
    } else {
        let x = ((a - dome - vault) / floor * 2.0 - 1.0) * HALF_LENGTH;
        let y = (2.0 * v - 1.0) * VAULT_RADIUS;
        (!in_dome_footprint(x, y)).then(|| Vector3::new(x, y, 0.0))
    }
}

fn in_window(p: &Point, center: f64, half_width: f64) -> bool {
    if half_width >= PI {
        return true;
    }
    let azimuth = p.y.atan2(p.x);
    let d = (azimuth - center + PI).rem_euclid(TAU) - PI;
    d.abs() <= half_width
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let m = config.scans;
    let step = TAU / m as f64;
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;

    let mut truth = Vec::with_capacity(m);
    for _ in 0..m {
        let rotation = random_rotation(&mut rng, TRUTH_MAX_ANGLE);
        let shift = unit_vector(&mut rng) * (rng.random::<f64>() * TRUTH_MAX_SHIFT);
        truth.push(RigidTransform::new(rotation, shift)?);
    }

    let mut scans = Vec::with_capacity(m);
    for (i, t) in truth.iter().enumerate() {
        let to_local = t.inverse();
        let center = i as f64 * step;
        let mut points = Vec::with_capacity(config.points_per_scan);
        while points.len() < config.points_per_scan {
            let Some(p) = surface_point(rng.random(), rng.random()) else {
                continue;
            };
            if !in_window(&p, center, WINDOW_HALF_WIDTH * step) {
                continue;
            }
            let mut local = to_local.apply(&p);
            if config.noise_sigma > 0.0 {
                local += Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            }
            points.push(local);
        }
        scans.push(PointSet::new(format!("scan_{i:03}"), points));
    }

    let mut initial = Vec::with_capacity(m);
    initial.push(truth[0]);
    for t in &truth[1..] {
        let rotation = random_rotation(&mut rng, config.perturb_rot) * t.rotation();
        let shift = unit_vector(&mut rng) * (rng.random::<f64>() * config.perturb_trans);
        let rotation = if geometry::orthogonality_defect(&rotation) > geometry::ROTATION_TOLERANCE {
            geometry::nearest_rotation(&rotation)
        } else {
            rotation
        };
        initial.push(RigidTransform::new(rotation, t.translation() + shift)?);
    }

    Ok(SyntheticScene {
        scans,
        truth,
        initial,
        diagonal: scene_diagonal(),
    })
}

impl SyntheticScene {
    /// Writes `scan_NNN.xyz` files plus `truth.txt` and `init.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for scan in &self.scans {
            save_xyz(dir.join(format!("{}.xyz", scan.id)), scan)?;
        }
        save_transforms(dir.join("truth.txt"), &self.truth)?;
        save_transforms(dir.join("init.txt"), &self.initial)?;
        Ok(())
    }

    /// Applies one rigid motion `g` on the left of every ground-truth and initial transform.
    pub fn regauged(&self, g: &RigidTransform) -> SyntheticScene {
        SyntheticScene {
            scans: self.scans.clone(),
            truth: self.truth.iter().map(|t| g.compose(t)).collect(),
            initial: self.initial.iter().map(|t| g.compose(t)).collect(),
            diagonal: self.diagonal,
        }
    }
}

/// Random twist helper for tests and tooling.
pub fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> Twist {
    Twist::new(
        unit_vector(rng) * (rng.random::<f64>() * max_angle),
        unit_vector(rng) * (rng.random::<f64>() * max_shift),
    )
}
