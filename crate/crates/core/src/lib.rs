pub mod axis;
pub mod clearance;
pub mod complement;
pub mod contact;
pub mod voxel;
pub mod error;
pub mod metrics;
pub mod mesh;
pub mod pipeline;

pub use error::{Error, Result};
