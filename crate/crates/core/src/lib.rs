//! Robust partial-to-full rigid registration of sparse point clouds against
//! a gradient signed-distance field.
//!
//! The pipeline: build a [`sdf::GradientSdf`] from a triangle mesh, then align
//! a (noisy, outlier-contaminated) point cloud with
//! [`registration::robust_register`], which runs damped Gauss-Newton on SE(3)
//! inside a Cauchy IRLS loop and discards points whose weights collapse.
//! [`simulate`] and [`metrics`] provide the synthetic evaluation harness.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod par;
pub mod registration;
pub mod sdf;
pub mod simulate;

pub use error::{GeometryError, IoError, MetricsError, RegistrationError, SdfError, SimulationError};
pub use geometry::{RigidTransform, Twist, Vec3};
pub use mesh::TriangleMesh;
pub use par::Execution;

pub use registration::{robust_register, RegistrationResult, RobustConfig};
pub use sdf::{build_gradient_sdf, BuildOptions, GradientSdf, SdfSample};

/// Crate version recorded in result files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
