//! Graph convolutions over RGB-D point clouds with dual (Euclidean and
//! feature-space) neighbourhoods, nearest voxel pooling, and proximity-based
//! 2D-3D feature fusion for scene classification.

pub mod cli;
pub mod cloud;
pub mod error;
pub mod fusion;
pub mod gconv;
pub mod graph;
pub mod io;
pub mod model;
pub mod nn;
pub mod pooling;

pub use cloud::{Point3, PointCloud};
pub use error::{Error, Result};
