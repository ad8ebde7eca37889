//! Synthetic indoor captures with class-dependent geometry and texture.
//!
//! Every scene has a floor and a back wall seen from a camera looking along
//! `+z` with `+y` pointing down. Geometry classes add a side wall (a room
//! corner), one large sphere, or two small spheres. Texture feature maps are
//! Gaussian noise plus a label-dependent pattern.
//!
//! The `xor` variant has four classes, `label = 2·geometry + texture`, where
//! geometry picks corner or large sphere and texture picks one of two
//! patterns. Either modality alone identifies only one of the two bits.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::rng::{stream_rng, Stream};
use crate::cloud::Point3;
use crate::error::Result;
use crate::io::{CameraIntrinsics, Capture, DepthImage, FeatureMap};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthVariant {
    #[default]
    Shapes3,
    Xor,
}

impl SynthVariant {
    pub fn classes(self) -> usize {
        match self {
            SynthVariant::Shapes3 => 3,
            SynthVariant::Xor => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub variant: SynthVariant,
    pub train: usize,
    pub test: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub depth_noise_mm: f64,
    pub pixel_dropout: f64,
    pub texture_stride: usize,
    pub texture_channels: usize,
    pub texture_signal: f64,
    pub texture_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            variant: SynthVariant::Shapes3,
            train: 200,
            test: 100,
            width: 216,
            height: 160,
            focal: 200.0,
            depth_noise_mm: 2.0,
            pixel_dropout: 0.05,
            texture_stride: 16,
            texture_channels: 8,
            texture_signal: 0.5,
            texture_noise: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub classes: usize,
    pub train: Vec<Capture>,
    pub test: Vec<Capture>,
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Plane { normal: Point3, offset: f64 },
    Sphere { centre: Point3, radius: f64 },
}

impl Surface {
    /// Smallest positive ray parameter along `dir` from the origin.
    fn hit(&self, dir: &Point3) -> Option<f64> {
        match *self {
            Surface::Plane { normal, offset } => {
                let denom = dot(&normal, dir);
                (denom.abs() > 1e-12).then(|| offset / denom).filter(|t| *t > 0.0)
            }
            Surface::Sphere { centre, radius } => {
                let a = dot(dir, dir);
                let b = -2.0 * dot(dir, &centre);
                let c = dot(&centre, &centre) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)].into_iter().find(|t| *t > 0.0)
            }
        }
    }
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn yawed(v: Point3, yaw: f64) -> Point3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn scene<R: Rng>(geometry: usize, rng: &mut R) -> Vec<Surface> {
    let floor = rng.random_range(1.0..1.4);
    let back = rng.random_range(3.2..4.0);
    let yaw = rng.random_range(-0.15..0.15);
    let mut surfaces = vec![
        Surface::Plane {
            normal: [0.0, 1.0, 0.0],
            offset: floor,
        },
        Surface::Plane {
            normal: yawed([0.0, 0.0, 1.0], yaw),
            offset: back,
        },
    ];
    match geometry {
        0 => {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            surfaces.push(Surface::Plane {
                normal: yawed([side, 0.0, 0.0], yaw),
                offset: rng.random_range(0.8..1.2),
            });
        }
        1 => {
            let radius = rng.random_range(0.45..0.6);
            surfaces.push(Surface::Sphere {
                centre: [
                    rng.random_range(-0.4..0.4),
                    floor - radius,
                    rng.random_range(2.0..back - radius - 0.2),
                ],
                radius,
            });
        }
        _ => {
            for x in [rng.random_range(-0.9..-0.4), rng.random_range(0.4..0.9)] {
                let radius = rng.random_range(0.22..0.3);
                surfaces.push(Surface::Sphere {
                    centre: [x, floor - radius, rng.random_range(1.8..back - radius - 0.2)],
                    radius,
                });
            }
        }
    }
    surfaces
}

fn render<R: Rng>(spec: &SynthSpec, k: &CameraIntrinsics, surfaces: &[Surface], rng: &mut R) -> Result<DepthImage> {
    let noise = Normal::new(0.0, spec.depth_noise_mm.max(0.0)).expect("finite deviation");
    let mut data = vec![0u16; spec.width * spec.height];
    for v in 0..spec.height {
        for u in 0..spec.width {
            let dir = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
            let t = surfaces.iter().filter_map(|s| s.hit(&dir)).fold(f64::INFINITY, f64::min);
            let drop = rng.random::<f64>() < spec.pixel_dropout;
            let jitter = noise.sample(rng);
            if t.is_finite() && t < 10.0 && !drop {
                data[v * spec.width + u] = (t * 1000.0 + jitter).round().clamp(1.0, u16::MAX as f64) as u16;
            }
        }
    }
    DepthImage::new(spec.width, spec.height, data)
}

/// Fixed `±1` pattern per texture class.
fn texture_pattern(class: usize, channels: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| if (c / (class + 1)).is_multiple_of(2) { 1.0 } else { -1.0 })
        .collect()
}

fn texture_map<R: Rng>(spec: &SynthSpec, class: usize, rng: &mut R) -> Result<FeatureMap> {
    let noise = Normal::new(0.0, spec.texture_noise.max(0.0)).expect("finite deviation");
    let (rows, cols) = (spec.height / spec.texture_stride, spec.width / spec.texture_stride);
    let pattern = texture_pattern(class, spec.texture_channels);
    let mut data = Vec::with_capacity(rows * cols * spec.texture_channels);
    for _ in 0..rows * cols {
        for p in &pattern {
            data.push(spec.texture_signal * p + noise.sample(rng));
        }
    }
    FeatureMap::new(
        Tensor::new(vec![rows, cols, spec.texture_channels], data)?,
        spec.texture_stride,
    )
}

/// Geometry class and texture class of a label.
fn factors(variant: SynthVariant, label: usize) -> (usize, usize) {
    match variant {
        SynthVariant::Shapes3 => (label, label),
        SynthVariant::Xor => (label / 2, label % 2),
    }
}

pub fn synth_capture(spec: &SynthSpec, label: usize, seed: u64, split: u64, index: u64) -> Result<Capture> {
    let mut rng = stream_rng(seed, Stream::Synth, split, index);
    let k = CameraIntrinsics::new(
        spec.focal,
        spec.focal,
        (spec.width as f64 - 1.0) / 2.0,
        (spec.height as f64 - 1.0) / 2.0,
    )?;
    let (geometry, texture) = factors(spec.variant, label);
    let surfaces = scene(geometry, &mut rng);
    let depth = render(spec, &k, &surfaces, &mut rng)?;
    let fm = texture_map(spec, texture, &mut rng)?;
    Capture::new(depth, k, Some(fm), label)
}

/// Balanced labelled captures; sample `i` of a split has label `i mod C`.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    let classes = spec.variant.classes();
    let split = |n: usize, id: u64| -> Result<Vec<Capture>> {
        (0..n).map(|i| synth_capture(spec, i % classes, seed, id, i as u64)).collect()
    };
    Ok(SynthDataset {
        classes,
        train: split(spec.train, 0)?,
        test: split(spec.test, 1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::simplified_hha;

    fn small() -> SynthSpec {
        SynthSpec {
            train: 6,
            test: 3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(synth_dataset(&small(), 3).unwrap(), synth_dataset(&small(), 3).unwrap());
        assert_ne!(synth_dataset(&small(), 3).unwrap(), synth_dataset(&small(), 4).unwrap());
    }

    #[test]
    fn point_counts_near_target() {
        let data = synth_dataset(&small(), 0).unwrap();
        for cap in data.train.iter().chain(&data.test) {
            let cloud = simplified_hha(&cap.depth, &cap.intrinsics, 8).unwrap();
            assert!((450..=560).contains(&cloud.len()), "{} points", cloud.len());
        }
    }

    #[test]
    fn xor_labels_combine_factors() {
        let spec = SynthSpec {
            variant: SynthVariant::Xor,
            ..small()
        };
        let data = synth_dataset(&spec, 1).unwrap();
        assert_eq!(data.classes, 4);
        assert_eq!(data.train.iter().map(|c| c.label).collect::<Vec<_>>(), vec![0, 1, 2, 3, 0, 1]);
        assert_ne!(texture_pattern(0, 8), texture_pattern(1, 8));
    }

    #[test]
    fn sphere_ray_hits_front_surface() {
        let s = Surface::Sphere {
            centre: [0.0, 0.0, 3.0],
            radius: 1.0,
        };
        assert!((s.hit(&[0.0, 0.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(s.hit(&[1.0, 0.0, 0.0]).is_none());
    }
}
