//! Viewpoint-aware spatial relations between object instances in 3D scenes,
//! referring-segmentation sample generation, and mask evaluation.
//!
//! The pipeline is: load or synthesize a [`SceneBundle`], pick viewpoints from
//! its trajectory, annotate each viewpoint with relation samples
//! ([`sampler`]), write them as a dataset ([`dataset`]), and score predicted
//! masks against it ([`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod relations;
pub mod sampler;
pub mod scene;
pub mod synth;
pub mod util;
pub mod visibility;

pub use error::{Error, Result};
pub use geometry::{Aabb3, Axis, CameraPose, Interval, Vec3};
pub use relations::{valid_relation_sets, RelationConfig, RelationLabel, RelationSet};
pub use sampler::{GenConfig, Sample, StatsTable};
pub use scene::{InstanceId, InstanceMeta, SceneBundle, SceneParts};
pub use visibility::{Intrinsics, VisibilityConfig};
