//! Multi-view rigid registration of 3D point sets.
//!
//! All scans are clustered jointly with K-means, every cluster is summarized by
//! a normal distribution (mean and information matrix), and the rigid motion of
//! each scan is refined in turn by maximizing the resulting log-likelihood with
//! a retraction-based Gauss-Newton step on SE(3).
//!
//! ```no_run
//! use mndt::{register, RegistrationConfig, RigidTransform};
//! # fn run(scans: Vec<mndt::PointSet>) -> mndt::Result<()> {
//! let initial = vec![RigidTransform::identity(); scans.len()];
//! let (transforms, state) = register(&scans, &initial, &RegistrationConfig::default())?;
//! println!("{} iterations, L = {:?}", state.iteration, state.likelihood_trace.last());
//! # let _ = transforms;
//! # Ok(())
//! # }
//! ```

pub mod clustering;
pub mod driver;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod solver;
pub mod spatial_index;
pub mod synthetic;

pub use clustering::{ClusterLabels, NdtCell};
pub use driver::{register, IterationRecord, RegistrationConfig, RegistrationState};
pub use error::{Error, Result};
pub use evaluation::ErrorReport;
pub use geometry::{RigidTransform, Twist};
pub use io::PointSet;
pub use spatial_index::CentroidIndex;

/// A point or free vector in 3D.
pub type Point = nalgebra::Vector3<f64>;
