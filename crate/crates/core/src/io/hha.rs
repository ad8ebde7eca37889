//! Simplified three-channel depth encoding: disparity, height above the
//! lowest point, and angle between the surface normal and the up direction.
//!
//! Gravity is assumed to lie along the camera's vertical axis (`+y` points
//! down in the camera frame). Normals come from cross products of the
//! horizontal and vertical neighbours in the decimated grid.

use std::f64::consts::PI;

use super::camera::{backproject_samples, CameraIntrinsics, DepthImage, GridSample};
use crate::cloud::{Point3, PointCloud};
use crate::error::Result;
use crate::nn::Tensor;

pub const HHA_CHANNELS: usize = 3;

const UP: Point3 = [0.0, -1.0, 0.0];

/// Back-projects the decimated depth grid and attaches the three encoded
/// channels, each rescaled from `[0, 255]` to `[0, 1]`.
pub fn simplified_hha(depth: &DepthImage, k: &CameraIntrinsics, stride: usize) -> Result<PointCloud> {
    let samples = backproject_samples(depth, k, stride)?;
    let rows = samples.iter().map(|s| s.row).max().unwrap_or(0) + 1;
    let cols = samples.iter().map(|s| s.col).max().unwrap_or(0) + 1;
    let mut grid = vec![None; rows * cols];
    for (i, s) in samples.iter().enumerate() {
        grid[s.row * cols + s.col] = Some(i);
    }
    let at = |r: isize, c: isize| -> Option<Point3> {
        if r < 0 || c < 0 || r as usize >= rows || c as usize >= cols {
            return None;
        }
        grid[r as usize * cols + c as usize].map(|i| samples[i].position)
    };

    let disparity: Vec<f64> = samples.iter().map(|s| 1.0 / s.position[2]).collect();
    let (dmin, dmax) = min_max(&disparity);
    let (ymin, ymax) = min_max(&samples.iter().map(|s| s.position[1]).collect::<Vec<_>>());

    let mut features = Vec::with_capacity(samples.len() * HHA_CHANNELS);
    for (s, d) in samples.iter().zip(&disparity) {
        let ch1 = scale_255(d - dmin, dmax - dmin);
        let ch2 = scale_255(ymax - s.position[1], ymax - ymin);
        let n = surface_normal(s, &at);
        let cos = dot(&n, &UP).clamp(-1.0, 1.0);
        let ch3 = cos.acos() / PI * 255.0;
        features.extend([ch1 / 255.0, ch2 / 255.0, ch3 / 255.0]);
    }
    let n = samples.len();
    PointCloud::new(
        samples.into_iter().map(|s| s.position).collect(),
        Tensor::new(vec![n, HHA_CHANNELS], features)?,
    )
}

fn scale_255(value: f64, range: f64) -> f64 {
    if range > 0.0 {
        (value / range * 255.0).clamp(0.0, 255.0)
    } else {
        0.0
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Unit normal oriented toward the camera.
fn surface_normal(s: &GridSample, at: &impl Fn(isize, isize) -> Option<Point3>) -> Point3 {
    let (r, c) = (s.row as isize, s.col as isize);
    let p = s.position;
    let tangent = |a: Option<Point3>, b: Option<Point3>| match (a, b) {
        (Some(a), Some(b)) => Some(sub(&a, &b)),
        (Some(a), None) => Some(sub(&a, &p)),
        (None, Some(b)) => Some(sub(&p, &b)),
        (None, None) => None,
    };
    let tu = tangent(at(r, c + 1), at(r, c - 1));
    let tv = tangent(at(r + 1, c), at(r - 1, c));
    let facing = normalize(&[-p[0], -p[1], -p[2]]).unwrap_or([0.0, 0.0, -1.0]);
    let n = match (tu, tv) {
        (Some(a), Some(b)) => normalize(&cross(&a, &b)).unwrap_or(facing),
        _ => facing,
    };
    if dot(&n, &p) > 0.0 {
        [-n[0], -n[1], -n[2]]
    } else {
        n
    }
}

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: &Point3) -> Option<Point3> {
    let n = dot(a, a).sqrt();
    (n > 0.0 && n.is_finite()).then(|| a.map(|v| v / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(200.0, 200.0, 80.0, 60.0).unwrap()
    }

    #[test]
    fn constant_wall_has_constant_disparity() {
        let depth = DepthImage::filled(160, 120, 2500).unwrap();
        let cloud = simplified_hha(&depth, &intrinsics(), 8).unwrap();
        let first = cloud.features.get2(0, 0);
        for i in 0..cloud.len() {
            assert_eq!(cloud.features.get2(i, 0), first);
        }
    }

    #[test]
    fn wall_facing_camera_is_perpendicular_to_gravity() {
        let depth = DepthImage::filled(160, 120, 2500).unwrap();
        let cloud = simplified_hha(&depth, &intrinsics(), 8).unwrap();
        for i in 0..cloud.len() {
            assert!((cloud.features.get2(i, 2) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn lowest_point_has_zero_height() {
        let data: Vec<u16> = (0..160 * 120).map(|i| 1000 + (i % 977) as u16).collect();
        let depth = DepthImage::new(160, 120, data).unwrap();
        let cloud = simplified_hha(&depth, &intrinsics(), 4).unwrap();
        let lowest = (0..cloud.len())
            .max_by(|&a, &b| cloud.positions[a][1].total_cmp(&cloud.positions[b][1]))
            .unwrap();
        assert_eq!(cloud.features.get2(lowest, 1), 0.0);
    }

    #[test]
    fn channels_lie_in_unit_interval() {
        let data: Vec<u16> = (0..160 * 120)
            .map(|i| if i % 13 == 0 { 0 } else { 800 + ((i * 7919) % 3000) as u16 })
            .collect();
        let depth = DepthImage::new(160, 120, data).unwrap();
        let cloud = simplified_hha(&depth, &intrinsics(), 2).unwrap();
        assert!(cloud.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn floor_plane_normal_points_up() {
        // Floor 1.2 m below the camera: z = h·fy/(v − cy) below the horizon.
        let k = CameraIntrinsics::new(200.0, 200.0, 80.0, 20.0).unwrap();
        let (w, h) = (160, 240);
        let height = 1.2;
        let mut data = vec![0u16; w * h];
        for v in 0..h {
            let dv = v as f64 - k.cy;
            if dv <= 0.0 {
                continue;
            }
            let z = height * k.fy / dv;
            if z < 8.0 {
                for u in 0..w {
                    data[v * w + u] = (z * 1000.0).round() as u16;
                }
            }
        }
        let depth = DepthImage::new(w, h, data).unwrap();
        let cloud = simplified_hha(&depth, &k, 8).unwrap();
        let tol = 5.0 / 255.0;
        let xs: Vec<f64> = cloud.positions.iter().map(|p| p[0]).collect();
        let (xmin, xmax) = min_max(&xs);
        let zs: Vec<f64> = cloud.positions.iter().map(|p| p[2]).collect();
        let (zmin, zmax) = min_max(&zs);
        let mut checked = 0;
        for (i, p) in cloud.positions.iter().enumerate() {
            let border = p[2] <= zmin + 1e-9 || p[2] >= zmax - 1e-9 || p[0] <= xmin + 1e-9 || p[0] >= xmax - 1e-9;
            if border {
                continue;
            }
            assert!(cloud.features.get2(i, 2) < tol, "node {i}: {}", cloud.features.get2(i, 2));
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn height_ignores_horizontal_coordinates() {
        // Moving the principal point changes x but never y.
        let data: Vec<u16> = (0..160 * 120).map(|i| 1500 + (i % 311) as u16).collect();
        let depth = DepthImage::new(160, 120, data).unwrap();
        let a = simplified_hha(&depth, &intrinsics(), 4).unwrap();
        let b = simplified_hha(&depth, &CameraIntrinsics::new(200.0, 200.0, 30.0, 60.0).unwrap(), 4).unwrap();
        for i in 0..a.len() {
            assert!((a.features.get2(i, 1) - b.features.get2(i, 1)).abs() < 1e-12);
        }
    }
}
