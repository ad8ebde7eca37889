//! Lifting 2D feature maps into 3D and fusing them with geometric features by
//! spatial grouping.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::io::{write_ply_with, Capture, ExtraColumns};
use crate::nn::{Grads, LinearLayer, ParamStore, Tensor};
use crate::pooling::{Grouping, PoolingKind};

/// Order of the two halves in a fused feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionLayout {
    #[default]
    GeometricFirst,
    TextureFirst,
}

/// Back-projects every feature-map cell to 3D.
///
/// Cell `(i, j)` sits at pixel `((j + 0.5)s − 0.5, (i + 0.5)s − 0.5)`. Its depth
/// is that of the valid pixel in the `s × s` footprint closest to the centre;
/// cells without any valid depth are dropped.
pub fn lift_feature_map(capture: &Capture) -> Result<PointCloud> {
    let fm = capture
        .feature_map
        .as_ref()
        .ok_or_else(|| Error::invalid("capture has no feature map"))?;
    let s = fm.stride;
    let depth = &capture.depth;
    let mut positions = Vec::new();
    let mut features = Vec::new();
    for i in 0..fm.grid_height() {
        for j in 0..fm.grid_width() {
            let u = (j as f64 + 0.5) * s as f64 - 0.5;
            let v = (i as f64 + 0.5) * s as f64 - 0.5;
            let mut best: Option<(f64, f64)> = None;
            for row in i * s..((i + 1) * s).min(depth.height) {
                for col in j * s..((j + 1) * s).min(depth.width) {
                    if let Some(z) = depth.meters(col, row) {
                        let d2 = (col as f64 - u).powi(2) + (row as f64 - v).powi(2);
                        if best.is_none_or(|(bd, _)| d2 < bd) {
                            best = Some((d2, z));
                        }
                    }
                }
            }
            if let Some((_, z)) = best {
                positions.push(capture.intrinsics.unproject(u, v, z));
                features.extend_from_slice(fm.cell(i, j));
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::EmptyCapture);
    }
    let n = positions.len();
    let mut cloud = PointCloud::new(positions, Tensor::new(vec![n, fm.channels()], features)?)?;
    cloud.label = Some(capture.label);
    Ok(cloud)
}

/// Bias-free pointwise projection to the fused width.
#[derive(Debug, Clone)]
pub struct ProjectionFunction {
    pub linear: LinearLayer,
}

impl ProjectionFunction {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            linear: LinearLayer::new(store, name, in_dim, out_dim, false, rng)?,
        })
    }

    pub fn from_linear(linear: LinearLayer) -> Result<Self> {
        if linear.has_bias() {
            return Err(Error::invalid("projection functions carry no bias"));
        }
        Ok(Self { linear })
    }

    pub fn in_dim(&self) -> usize {
        self.linear.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.linear.out_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedCloud {
    pub positions: Vec<Point3>,
    /// `G × 2·d_fused`.
    pub features: Tensor,
    pub geometric_present: Vec<bool>,
    pub texture_present: Vec<bool>,
    pub layout: FusionLayout,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn to_point_cloud(&self) -> Result<PointCloud> {
        PointCloud::new(self.positions.clone(), self.features.clone())
    }

    pub fn write_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        let flags = |v: &[bool]| v.iter().map(|&b| b as u8).collect::<Vec<u8>>();
        let values = [flags(&self.geometric_present), flags(&self.texture_present)];
        let extra = ExtraColumns {
            names: &["geometric_present", "texture_present"],
            values: &values,
        };
        write_ply_with(&self.to_point_cloud()?, Some(extra), path)
    }
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    pub grouping: Grouping,
    geometric_count: usize,
    geometric_input: Tensor,
    texture_input: Tensor,
}

/// Projects both modalities to a shared width, groups the union of their
/// points and concatenates per-group modality means. A modality missing from
/// a group contributes a vector of ones.
#[derive(Debug, Clone)]
pub struct FusionStage {
    pub geometric: ProjectionFunction,
    pub texture: ProjectionFunction,
    pub radius: f64,
    pub layout: FusionLayout,
    pub grouping: PoolingKind,
}

impl FusionStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        geometric_dim: usize,
        texture_dim: usize,
        fused_dim: usize,
        radius: f64,
        layout: FusionLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let geometric = ProjectionFunction::new(store, &format!("{name}.geometric"), geometric_dim, fused_dim, rng)?;
        let texture = ProjectionFunction::new(store, &format!("{name}.texture"), texture_dim, fused_dim, rng)?;
        Self::from_projections(geometric, texture, radius, layout)
    }

    pub fn from_projections(
        geometric: ProjectionFunction,
        texture: ProjectionFunction,
        radius: f64,
        layout: FusionLayout,
    ) -> Result<Self> {
        if geometric.out_dim() != texture.out_dim() {
            return Err(Error::dim("projection output widths differ"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("fusion radius must be positive, got {radius}")));
        }
        Ok(Self {
            geometric,
            texture,
            radius,
            layout,
            grouping: PoolingKind::NearestVoxel,
        })
    }

    pub fn fused_dim(&self) -> usize {
        self.geometric.out_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fused_dim()
    }

    fn offsets(&self) -> (usize, usize) {
        let d = self.fused_dim();
        match self.layout {
            FusionLayout::GeometricFirst => (0, d),
            FusionLayout::TextureFirst => (d, 0),
        }
    }

    pub fn forward(&self, store: &ParamStore, geometric: &PointCloud, texture: &PointCloud) -> Result<(FusedCloud, FusionCache)> {
        geometric
            .features
            .expect_matrix(self.geometric.in_dim(), "geometric features")?;
        texture.features.expect_matrix(self.texture.in_dim(), "texture features")?;
        let ng = geometric.len();
        let union: Vec<Point3> = geometric.positions.iter().chain(&texture.positions).copied().collect();
        if union.is_empty() {
            return Err(Error::invalid("fusion of two empty clouds"));
        }
        let grouping = self.grouping.group(&union, self.radius)?;
        let pg = self.geometric.linear.forward(store, &geometric.features)?;
        let pt = self.texture.linear.forward(store, &texture.features)?;
        let d = self.fused_dim();
        let (go, to) = self.offsets();
        let groups = grouping.len();
        let mut features = Tensor::zeros(&[groups, 2 * d]);
        let mut geometric_present = vec![false; groups];
        let mut texture_present = vec![false; groups];
        for (g, members) in grouping.members.iter().enumerate() {
            let (geo, tex): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| m < ng);
            let row = features.row_mut(g);
            fill_mean(&mut row[go..go + d], &pg, geo.iter().copied());
            fill_mean(&mut row[to..to + d], &pt, tex.iter().map(|&m| m - ng));
            geometric_present[g] = !geo.is_empty();
            texture_present[g] = !tex.is_empty();
        }
        let fused = FusedCloud {
            positions: grouping.positions.clone(),
            features,
            geometric_present,
            texture_present,
            layout: self.layout,
        };
        let cache = FusionCache {
            grouping,
            geometric_count: ng,
            geometric_input: geometric.features.clone(),
            texture_input: texture.features.clone(),
        };
        Ok((fused, cache))
    }

    /// Returns gradients with respect to the geometric and texture input features.
    pub fn backward(
        &self,
        store: &ParamStore,
        grads: &mut Grads,
        cache: &FusionCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let d = self.fused_dim();
        grad_out.expect_matrix(2 * d, "fused feature gradient")?;
        if grad_out.rows() != cache.grouping.len() {
            return Err(Error::dim("fused gradient rows differ from group count"));
        }
        let ng = cache.geometric_count;
        let (go, to) = self.offsets();
        let mut gpg = Tensor::zeros(&[ng, d]);
        let mut gpt = Tensor::zeros(&[cache.texture_input.rows(), d]);
        for (g, members) in cache.grouping.members.iter().enumerate() {
            let (geo, tex): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&m| m < ng);
            let row = grad_out.row(g);
            spread_mean(&mut gpg, &row[go..go + d], geo.iter().copied());
            spread_mean(&mut gpt, &row[to..to + d], tex.iter().map(|&m| m - ng));
        }
        let grad_geo = self.geometric.linear.backward(store, grads, &cache.geometric_input, &gpg)?;
        let grad_tex = self.texture.linear.backward(store, grads, &cache.texture_input, &gpt)?;
        Ok((grad_geo, grad_tex))
    }
}

fn fill_mean(dst: &mut [f64], src: &Tensor, rows: impl ExactSizeIterator<Item = usize>) {
    let n = rows.len();
    if n == 0 {
        dst.fill(1.0);
        return;
    }
    for r in rows {
        for (a, b) in dst.iter_mut().zip(src.row(r)) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    dst.iter_mut().for_each(|v| *v *= inv);
}

fn spread_mean(dst: &mut Tensor, grad: &[f64], rows: impl ExactSizeIterator<Item = usize> + Clone) {
    let n = rows.len();
    if n == 0 {
        return;
    }
    let inv = 1.0 / n as f64;
    for r in rows {
        for (a, b) in dst.row_mut(r).iter_mut().zip(grad) {
            *a += b * inv;
        }
    }
}

/// Per-sample concatenation of globally pooled branch features.
pub fn late_fuse(geometric: &Tensor, texture: &Tensor, layout: FusionLayout) -> Result<Tensor> {
    if geometric.shape().len() != 2 || texture.shape().len() != 2 {
        return Err(Error::dim("late fusion expects two matrices"));
    }
    if geometric.rows() != texture.rows() {
        return Err(Error::dim(format!(
            "batch sizes {} and {} differ",
            geometric.rows(),
            texture.rows()
        )));
    }
    let (first, second) = match layout {
        FusionLayout::GeometricFirst => (geometric, texture),
        FusionLayout::TextureFirst => (texture, geometric),
    };
    let rows: Vec<Vec<f64>> = (0..geometric.rows())
        .map(|b| first.row(b).iter().chain(second.row(b)).copied().collect())
        .collect();
    let mut out = Tensor::zeros(&[geometric.rows(), first.cols() + second.cols()]);
    for (b, r) in rows.iter().enumerate() {
        out.row_mut(b).copy_from_slice(r);
    }
    Ok(out)
}

/// Splits a late-fusion gradient back into its geometric and texture parts.
pub fn late_fuse_backward(grad: &Tensor, geometric_dim: usize, layout: FusionLayout) -> (Tensor, Tensor) {
    let total = grad.cols();
    let texture_dim = total - geometric_dim;
    let split = match layout {
        FusionLayout::GeometricFirst => geometric_dim,
        FusionLayout::TextureFirst => texture_dim,
    };
    let left: Vec<f64> = (0..grad.rows()).flat_map(|b| grad.row(b)[..split].to_vec()).collect();
    let right: Vec<f64> = (0..grad.rows()).flat_map(|b| grad.row(b)[split..].to_vec()).collect();
    let left = Tensor::new(vec![grad.rows(), split], left).expect("left block");
    let right = Tensor::new(vec![grad.rows(), total - split], right).expect("right block");
    match layout {
        FusionLayout::GeometricFirst => (left, right),
        FusionLayout::TextureFirst => (right, left),
    }
}
