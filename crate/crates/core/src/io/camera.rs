//! Pinhole camera model and depth back-projection.

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Depth image in millimeters; zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("depth image must have positive dimensions"));
        }
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "{}x{} depth image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, millimeters: u16) -> Result<Self> {
        Self::new(width, height, vec![millimeters; width * height])
    }

    /// Raw depth at column `u`, row `v`.
    pub fn at(&self, u: usize, v: usize) -> u16 {
        self.data[v * self.width + u]
    }

    /// Depth in meters, `None` when invalid.
    pub fn meters(&self, u: usize, v: usize) -> Option<f64> {
        match self.at(u, v) {
            0 => None,
            mm => Some(mm as f64 / 1000.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid(format!("invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy}")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// `x = (u − cx)·z/fx`, `y = (v − cy)·z/fy`.
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Point3 {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }
}

/// Projects a camera-frame point to pixel coordinates `(u, v)`.
pub fn project_to_pixel(point: &Point3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    let [x, y, z] = *point;
    if z <= 0.0 {
        return Err(Error::BehindCamera(z));
    }
    Ok((x * k.fx / z + k.cx, y * k.fy / z + k.cy))
}

/// Grid sample of a decimated depth image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSample {
    /// Row and column in the decimated grid.
    pub row: usize,
    pub col: usize,
    pub position: Point3,
}

/// Every `stride`-th row and column with valid depth, back-projected in
/// row-major order.
pub fn backproject_samples(depth: &DepthImage, k: &CameraIntrinsics, stride: usize) -> Result<Vec<GridSample>> {
    if stride == 0 {
        return Err(Error::invalid("stride must be at least 1"));
    }
    let mut out = Vec::new();
    for (row, v) in (0..depth.height).step_by(stride).enumerate() {
        for (col, u) in (0..depth.width).step_by(stride).enumerate() {
            if let Some(z) = depth.meters(u, v) {
                out.push(GridSample {
                    row,
                    col,
                    position: k.unproject(u as f64, v as f64, z),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyCapture);
    }
    Ok(out)
}

pub fn backproject(depth: &DepthImage, k: &CameraIntrinsics, stride: usize) -> Result<PointCloud> {
    let samples = backproject_samples(depth, k, stride)?;
    Ok(PointCloud::from_positions(samples.into_iter().map(|s| s.position).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vga() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    #[test]
    fn principal_point_lies_on_optical_axis() {
        let k = vga();
        assert_eq!(k.unproject(320.0, 240.0, 2.0), [0.0, 0.0, 2.0]);
        assert_eq!(project_to_pixel(&[0.0, 0.0, 3.0], &k).unwrap(), (320.0, 240.0));
    }

    #[test]
    fn off_axis_pixel() {
        let k = vga();
        let mut depth = DepthImage::filled(900, 480, 0).unwrap();
        depth.data[240 * 900 + 820] = 1000;
        let cloud = backproject(&depth, &k, 1).unwrap();
        assert_eq!(cloud.positions, vec![[1.0, 0.0, 1.0]]);
        assert_eq!(project_to_pixel(&[1.0, 0.0, 1.0], &k).unwrap(), (820.0, 240.0));
    }

    #[test]
    fn behind_camera() {
        assert!(matches!(
            project_to_pixel(&[0.0, 0.0, 0.0], &vga()),
            Err(Error::BehindCamera(_))
        ));
        assert!(project_to_pixel(&[0.0, 0.0, -1.0], &vga()).is_err());
    }

    #[test]
    fn all_invalid_is_empty_capture() {
        let depth = DepthImage::filled(16, 16, 0).unwrap();
        assert!(matches!(backproject(&depth, &vga(), 1), Err(Error::EmptyCapture)));
    }

    #[test]
    fn intrinsics_require_positive_focal_length() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn count_equals_sampled_valid_pixels() {
        let w = 37;
        let h = 29;
        let data: Vec<u16> = (0..w * h).map(|i| if i % 5 == 0 { 0 } else { 500 + i as u16 }).collect();
        let depth = DepthImage::new(w, h, data).unwrap();
        for stride in [1, 3, 8] {
            let expected = (0..h)
                .step_by(stride)
                .flat_map(|v| (0..w).step_by(stride).map(move |u| (u, v)))
                .filter(|&(u, v)| depth.at(u, v) != 0)
                .count();
            assert_eq!(backproject(&depth, &vga(), stride).unwrap().len(), expected);
        }
    }

    proptest! {
        #[test]
        fn projection_round_trip(u in 0.0f64..640.0, v in 0.0f64..480.0, z in 0.1f64..10.0) {
            let k = vga();
            let p = k.unproject(u, v, z);
            let (u2, v2) = project_to_pixel(&p, &k).unwrap();
            prop_assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
            let q = k.unproject(u2, v2, p[2]);
            for a in 0..3 {
                prop_assert!((p[a] - q[a]).abs() < 1e-9);
            }
        }
    }
}
