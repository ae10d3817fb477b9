pub mod costmap;
pub mod dstar;
pub mod error;
pub mod geometry;
pub mod lm;
pub mod loam;
pub mod orchestrator;
pub mod pointcloud;
pub mod segmentation;
pub mod sim;
pub mod teb;

pub use error::{Error, Result};
pub use geometry::Pose2;
