//! Per-point 3D intention heatmaps over scene point clouds, predicted from
//! sparse head and hand motion plus head orientation.

pub mod baselines;
pub mod datapipe;
pub mod error;
pub mod harness;
pub mod int3dnet;
pub mod metrics;
pub mod motionenc;
pub mod objective;
pub mod pointcloud;
pub mod tape;

pub use error::{Error, Result};
