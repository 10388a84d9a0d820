//! Post-processing of multi-person 3D pose detections into identity-stable,
//! world-coordinate trajectories and a seekable playback stream.
//!
//! The math modules are generic over [`Real`] (`f32` or `f64`). The aliases
//! below fix the scalar to `f64`, which is what the file formats carry.

pub mod cleanse;
pub mod error;
pub mod geom;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod scenecut;
pub mod smooth;
pub mod synth;
pub mod track;

pub use error::{Error, FieldError, Result, Violation};
pub use model::{JointLayout, PipelineConfig, Provenance, YAxis, DISCARDED};
pub use scalar::Real;

pub type Skeleton = model::Skeleton<f64>;
pub type Detection = model::Detection<f64>;
pub type Frame = model::Frame<f64>;
pub type DetectionSequence = model::DetectionSequence<f64>;
pub type Sample = model::Sample<f64>;
pub type Track = model::Track<f64>;
pub type TrackSet = model::TrackSet<f64>;
pub type FpsRule = model::FpsRule<f64>;
pub type CameraExtrinsics = geom::CameraExtrinsics<f64>;
pub type GroundLine = geom::GroundLine<f64>;
pub type PointCloud = geom::PointCloud<f64>;
pub type RbfModel = smooth::RbfModel<f64>;
pub type FrameFeatures = scenecut::FrameFeatures<f64>;

/// Version string reported by binaries, manifests and the service.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
