//! Capture directories: `depth.png` (16-bit, millimeters), `intrinsics.txt`
//! (`fx fy cx cy`), `label.txt` (class id) and an optional `feat2d.bin`
//! tensor container with entries `features` (`H'×W'×F`) and `stride`.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};

use super::camera::{CameraIntrinsics, DepthImage};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, Entry, EntryData, Tensor};

pub const DEPTH_FILE: &str = "depth.png";
pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const LABEL_FILE: &str = "label.txt";
pub const FEATURES_FILE: &str = "feat2d.bin";

/// Externally computed 2D feature map sampled every `stride` pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `H' × W' × F` values.
    pub features: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(features: Tensor, stride: usize) -> Result<Self> {
        if features.shape().len() != 3 {
            return Err(Error::dim(format!("feature map must be H×W×F, got {:?}", features.shape())));
        }
        if stride == 0 {
            return Err(Error::invalid("feature map stride must be positive"));
        }
        Ok(Self { features, stride })
    }

    pub fn grid_height(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn grid_width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let c = self.channels();
        let off = (row * self.grid_width() + col) * c;
        &self.features.data()[off..off + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub feature_map: Option<FeatureMap>,
    pub label: usize,
}

impl Capture {
    pub fn new(depth: DepthImage, intrinsics: CameraIntrinsics, feature_map: Option<FeatureMap>, label: usize) -> Result<Self> {
        if let Some(fm) = &feature_map {
            if fm.grid_height() * fm.stride > depth.height || fm.grid_width() * fm.stride > depth.width {
                return Err(Error::dim(format!(
                    "{}x{} feature grid at stride {} exceeds the {}x{} depth image",
                    fm.grid_width(),
                    fm.grid_height(),
                    fm.stride,
                    depth.width,
                    depth.height
                )));
            }
        }
        Ok(Self {
            depth,
            intrinsics,
            feature_map,
            label,
        })
    }
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            DepthImage::new(w as usize, h as usize, buf.into_raw())
        }
        other => Err(Error::format(format!(
            "{}: depth must be 16-bit grayscale, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

pub fn write_depth_png(depth: &DepthImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, depth.data.clone())
            .ok_or_else(|| Error::dim("depth buffer size"))?;
    buf.save(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn read_required(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(format!("bad intrinsics value '{t}'")))
        })
        .collect::<Result<_>>()?;
    match vals.as_slice() {
        [fx, fy, cx, cy] => CameraIntrinsics::new(*fx, *fy, *cx, *cy).map_err(|e| Error::format(format!("intrinsics: {e}"))),
        _ => Err(Error::format(format!("intrinsics need 4 values, found {}", vals.len()))),
    }
}

pub fn feature_map_from_container(ckpt: &Checkpoint) -> Result<FeatureMap> {
    let features = ckpt
        .get("features")
        .ok_or_else(|| Error::format("feat2d.bin lacks a 'features' entry"))?;
    let stride = ckpt
        .get("stride")
        .ok_or_else(|| Error::format("feat2d.bin lacks a 'stride' entry"))?;
    let s = match &stride.data {
        EntryData::I64(v) if v.len() == 1 && v[0] > 0 => v[0] as usize,
        EntryData::F64(v) if v.len() == 1 && v[0] >= 1.0 && v[0].fract() == 0.0 => v[0] as usize,
        _ => return Err(Error::format("'stride' must be a positive integer scalar")),
    };
    FeatureMap::new(features.to_tensor(), s)
}

pub fn feature_map_to_container(fm: &FeatureMap) -> Checkpoint {
    let mut c = Checkpoint::new();
    c.insert_tensor("features", &fm.features);
    c.insert(
        "stride",
        Entry {
            shape: vec![],
            data: EntryData::I64(vec![fm.stride as i64]),
        },
    )
    .expect("scalar entry");
    c
}

pub fn load_capture(dir: impl AsRef<Path>) -> Result<Capture> {
    let dir = dir.as_ref();
    let depth = read_depth_png(&dir.join(DEPTH_FILE))?;
    let intrinsics = parse_intrinsics(&read_required(&dir.join(INTRINSICS_FILE))?)?;
    let label_text = read_required(&dir.join(LABEL_FILE))?;
    let label = label_text
        .trim()
        .parse()
        .map_err(|_| Error::format(format!("bad label '{}'", label_text.trim())))?;
    let feat_path = dir.join(FEATURES_FILE);
    let feature_map = if feat_path.exists() {
        Some(feature_map_from_container(&Checkpoint::load(&feat_path)?)?)
    } else {
        None
    };
    Capture::new(depth, intrinsics, feature_map, label)
}

pub fn save_capture(capture: &Capture, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_depth_png(&capture.depth, &dir.join(DEPTH_FILE))?;
    let k = &capture.intrinsics;
    fs::write(dir.join(INTRINSICS_FILE), format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy))?;
    fs::write(dir.join(LABEL_FILE), format!("{}\n", capture.label))?;
    if let Some(fm) = &capture.feature_map {
        feature_map_to_container(fm).save(dir.join(FEATURES_FILE))?;
    }
    Ok(())
}
