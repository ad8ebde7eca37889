//! Training-time perturbations of a point cloud. The vertical axis is the
//! camera `y` axis.

use std::f64::consts::TAU;

use rand::Rng;

use super::config::AugmentationConfig;
use crate::cloud::{dist2, Point3, PointCloud};
use crate::error::{Error, Result};

/// Rotates positions by `theta` about the vertical axis through the centroid.
pub fn rotate_vertical(cloud: &PointCloud, theta: f64) -> PointCloud {
    let c = cloud.centroid();
    let (s, co) = theta.sin_cos();
    let mut out = cloud.clone();
    for p in &mut out.positions {
        let (x, z) = (p[0] - c[0], p[2] - c[2]);
        p[0] = c[0] + co * x + s * z;
        p[2] = c[2] - s * x + co * z;
    }
    out
}

/// Negates the horizontal coordinate about the centroid.
pub fn mirror(cloud: &PointCloud) -> PointCloud {
    let cx = cloud.centroid()[0];
    let mut out = cloud.clone();
    for p in &mut out.positions {
        p[0] = 2.0 * cx - p[0];
    }
    out
}

/// Drops each point independently with probability `p`, keeping at least one.
pub fn drop_points<R: Rng + ?Sized>(cloud: &PointCloud, p: f64, rng: &mut R) -> PointCloud {
    let mut keep: Vec<usize> = (0..cloud.len()).filter(|_| rng.random::<f64>() >= p).collect();
    if keep.is_empty() && !cloud.is_empty() {
        keep.push(rng.random_range(0..cloud.len()));
    }
    cloud.select(&keep)
}

/// Keeps the `⌊N·f⌋` points nearest to `centre` (at least one): every point no
/// farther than the `⌊N·f⌋`-th nearest distance.
pub fn crop(cloud: &PointCloud, centre: &Point3, f: f64) -> PointCloud {
    let n = cloud.len();
    if n == 0 {
        return cloud.clone();
    }
    let target = ((n as f64 * f).floor() as usize).clamp(1, n);
    let d: Vec<f64> = cloud.positions.iter().map(|p| dist2(p, centre)).collect();
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let radius2 = sorted[target - 1];
    let keep: Vec<usize> = (0..n).filter(|&i| d[i] <= radius2).collect();
    cloud.select(&keep)
}

/// Uniformly random point of the axis-aligned bounding box.
pub fn random_box_point<R: Rng + ?Sized>(cloud: &PointCloud, rng: &mut R) -> Point3 {
    let mut c = [0.0; 3];
    for (a, v) in c.iter_mut().enumerate() {
        let lo = cloud.positions.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = cloud.positions.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        *v = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    }
    c
}

pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, cfg: &AugmentationConfig, rng: &mut R) -> Result<PointCloud> {
    if cloud.len() < 2 {
        return Err(Error::invalid("augmentation needs at least two points"));
    }
    if !cfg.enabled {
        return Ok(cloud.clone());
    }
    let mut out = cloud.clone();
    if cfg.rotation {
        out = rotate_vertical(&out, rng.random_range(0.0..TAU));
    }
    if rng.random::<f64>() < cfg.mirror_probability {
        out = mirror(&out);
    }
    if cfg.drop_probability > 0.0 {
        out = drop_points(&out, cfg.drop_probability, rng);
    }
    if cfg.crop {
        let centre = random_box_point(&out, rng);
        let [lo, hi] = cfg.crop_range;
        let f = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out = crop(&out, &centre, f);
    }
    Ok(out)
}
