//! Glue from captures on disk to the inputs of each training stage.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::train::{thread_pool, FusionSample, GeometricModel};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::fusion::lift_feature_map;
use crate::io::{load_capture, simplified_hha, Capture};

/// Capture directories under `root`, sorted by name.
pub fn capture_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidDataset(format!("no captures under {}", root.display())));
    }
    Ok(dirs)
}

pub fn load_captures(root: &Path, workers: usize) -> Result<Vec<Capture>> {
    let dirs = capture_dirs(root)?;
    thread_pool(workers)?.install(|| dirs.par_iter().map(load_capture).collect())
}

/// Labelled HHA point clouds at decimation `stride`.
pub fn hha_clouds(captures: &[Capture], stride: usize, workers: usize) -> Result<Vec<PointCloud>> {
    thread_pool(workers)?.install(|| {
        captures
            .par_iter()
            .map(|c| Ok(simplified_hha(&c.depth, &c.intrinsics, stride)?.with_label(c.label)))
            .collect()
    })
}

/// Final geometric nodes from a trained branch paired with the lifted texture map.
pub fn fusion_samples(
    geometric: &GeometricModel,
    captures: &[Capture],
    stride: usize,
    workers: usize,
) -> Result<Vec<FusionSample>> {
    thread_pool(workers)?.install(|| {
        captures
            .par_iter()
            .map(|c| {
                let cloud = simplified_hha(&c.depth, &c.intrinsics, stride)?;
                Ok(FusionSample {
                    geometric: geometric.features(&cloud)?,
                    texture: lift_feature_map(c)?,
                    label: c.label,
                })
            })
            .collect()
    })
}
