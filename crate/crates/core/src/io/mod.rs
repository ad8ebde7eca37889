//! Ingestion: depth back-projection, depth encoding, PLY and capture files.

pub mod camera;
pub mod capture;
pub mod hha;
pub mod ply;

pub use camera::{backproject, project_to_pixel, CameraIntrinsics, DepthImage};
pub use capture::{load_capture, save_capture, Capture, FeatureMap};
pub use hha::simplified_hha;
pub use ply::{read_ply, write_ply, write_ply_with, ExtraColumns};
