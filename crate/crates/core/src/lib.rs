//! Siamese 2D→3D human pose lifting with a rotation-equivariant embedding.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::type_complexity)]

pub mod checkpoint;
pub mod compute;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod model;
pub mod trainer;

pub use compute::{Matrix, Mode, Param, Parameterized, RngStream};
pub use data::{FrameRecord, NormStats, PairBatch};
pub use geometry::{Camera, Pose2D, Pose3D, Rotation3};
pub use losses::{LossBreakdown, SiameseTarget};
pub use model::{LiftingModel, ModelConfig};
