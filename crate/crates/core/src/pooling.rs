//! Voxel pooling and nearest-voxel pooling.
//!
//! Voxels are anchored at the origin: a point `p` falls in voxel `floor(p / r)`.
//! Groups are numbered in lexicographic voxel-key order. Nearest-voxel pooling
//! reassigns each point to its globally nearest voxel centroid (ties go to the
//! lower key) and drops centroids that end up with no members.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cloud::{mean_point, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::gconv::Aggregation;
use crate::graph::KdTree;
use crate::nn::Tensor;

pub type VoxelKey = [i64; 3];

pub fn voxel_key(p: &Point3, r: f64) -> VoxelKey {
    p.map(|v| (v / r).floor() as i64)
}

/// Partition of a point set into non-empty groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    /// Group id of every input point.
    pub assignment: Vec<usize>,
    /// Member indices per group, ascending.
    pub members: Vec<Vec<usize>>,
    /// Mean member position per group.
    pub positions: Vec<Point3>,
}

impl Grouping {
    fn from_assignment(points: &[Point3], assignment: Vec<usize>, groups: usize) -> Self {
        let mut members = vec![Vec::new(); groups];
        for (i, &g) in assignment.iter().enumerate() {
            members[g].push(i);
        }
        let positions = members.iter().map(|m| mean_point(m.iter().map(|&i| &points[i]))).collect();
        Self {
            assignment,
            members,
            positions,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Mean distance from each point to its group position.
    pub fn mean_member_distance(&self, points: &[Point3]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let total: f64 = points
            .iter()
            .zip(&self.assignment)
            .map(|(p, &g)| crate::cloud::dist2(p, &self.positions[g]).sqrt())
            .sum();
        total / points.len() as f64
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("pooling radius must be positive, got {r}")))
    }
}

/// Groups points by occupied voxel.
pub fn voxel_groups(points: &[Point3], r: f64) -> Result<Grouping> {
    check_radius(r)?;
    let mut keys: BTreeMap<VoxelKey, usize> = BTreeMap::new();
    for p in points {
        keys.entry(voxel_key(p, r)).or_insert(0);
    }
    for (id, slot) in keys.values_mut().enumerate() {
        *slot = id;
    }
    let assignment = points.iter().map(|p| keys[&voxel_key(p, r)]).collect();
    Ok(Grouping::from_assignment(points, assignment, keys.len()))
}

/// Nearest-voxel grouping without any feature handling.
pub fn group_points(points: &[Point3], r: f64) -> Result<Grouping> {
    let (voxels, nearest) = nearest_centroids(points, r)?;
    let mut renumber = vec![usize::MAX; voxels.len()];
    let mut next = 0;
    let mut used: Vec<usize> = nearest.clone();
    used.sort_unstable();
    used.dedup();
    for c in used {
        renumber[c] = next;
        next += 1;
    }
    let assignment = nearest.iter().map(|&c| renumber[c]).collect();
    Ok(Grouping::from_assignment(points, assignment, next))
}

/// Voxel grouping plus, per point, the index of its nearest voxel centroid.
fn nearest_centroids(points: &[Point3], r: f64) -> Result<(Grouping, Vec<usize>)> {
    let voxels = voxel_groups(points, r)?;
    if voxels.is_empty() {
        return Ok((voxels, Vec::new()));
    }
    let flat: Vec<f64> = voxels.positions.iter().flatten().copied().collect();
    let tree = KdTree::new(&flat, 3);
    let nearest = points.iter().map(|p| tree.nearest(p, 1, None)[0].index).collect();
    Ok((voxels, nearest))
}

/// Which grouping rule a pooling or fusion step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingKind {
    Voxel,
    #[default]
    NearestVoxel,
}

impl PoolingKind {
    pub fn group(self, points: &[Point3], r: f64) -> Result<Grouping> {
        match self {
            PoolingKind::Voxel => voxel_groups(points, r),
            PoolingKind::NearestVoxel => group_points(points, r),
        }
    }

    pub fn pool(self, cloud: &PointCloud, r: f64, aggregation: Aggregation) -> Result<PoolResult> {
        aggregate(cloud, self.group(&cloud.positions, r)?, aggregation)
    }
}

#[derive(Debug, Clone)]
pub struct PoolResult {
    pub cloud: PointCloud,
    pub grouping: Grouping,
    pub aggregation: Aggregation,
    /// For maximum aggregation, the winning member per `(group, channel)`.
    argmax: Option<Vec<usize>>,
}

impl PoolResult {
    pub fn num_groups(&self) -> usize {
        self.grouping.len()
    }

    /// Gradient with respect to the input features, given the gradient of the pooled features.
    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let f = self.cloud.feature_dim();
        grad_out.expect_matrix(f, "pooling upstream gradient")?;
        if grad_out.rows() != self.num_groups() {
            return Err(Error::dim("pooling upstream gradient rows differ from group count"));
        }
        let n = self.grouping.assignment.len();
        let mut grad = Tensor::zeros(&[n, f]);
        match &self.argmax {
            None => {
                for (g, members) in self.grouping.members.iter().enumerate() {
                    let inv = 1.0 / members.len() as f64;
                    for &i in members {
                        for (dst, v) in grad.row_mut(i).iter_mut().zip(grad_out.row(g)) {
                            *dst += v * inv;
                        }
                    }
                }
            }
            Some(winners) => {
                for g in 0..self.num_groups() {
                    for c in 0..f {
                        let i = winners[g * f + c];
                        grad.data_mut()[i * f + c] += grad_out.get2(g, c);
                    }
                }
            }
        }
        Ok(grad)
    }
}

fn aggregate(cloud: &PointCloud, grouping: Grouping, aggregation: Aggregation) -> Result<PoolResult> {
    let f = cloud.feature_dim();
    let g = grouping.len();
    let mut features = Tensor::zeros(&[g, f]);
    let mut argmax = None;
    match aggregation {
        Aggregation::Average => {
            for (gid, members) in grouping.members.iter().enumerate() {
                let row = features.row_mut(gid);
                for &i in members {
                    for (dst, v) in row.iter_mut().zip(cloud.features.row(i)) {
                        *dst += v;
                    }
                }
                let inv = 1.0 / members.len() as f64;
                row.iter_mut().for_each(|v| *v *= inv);
            }
        }
        Aggregation::Maximum => {
            let mut winners = vec![0; g * f];
            for (gid, members) in grouping.members.iter().enumerate() {
                for c in 0..f {
                    let mut best = members[0];
                    for &i in &members[1..] {
                        if cloud.features.get2(i, c) > cloud.features.get2(best, c) {
                            best = i;
                        }
                    }
                    winners[gid * f + c] = best;
                    features.data_mut()[gid * f + c] = cloud.features.get2(best, c);
                }
            }
            argmax = Some(winners);
        }
    }
    let mut pooled = PointCloud::new(grouping.positions.clone(), features)?;
    pooled.label = cloud.label;
    Ok(PoolResult {
        cloud: pooled,
        grouping,
        aggregation,
        argmax,
    })
}

/// Replaces the points of each occupied voxel with their mean.
pub fn voxel_pool(cloud: &PointCloud, r: f64, aggregation: Aggregation) -> Result<PoolResult> {
    let grouping = voxel_groups(&cloud.positions, r)?;
    aggregate(cloud, grouping, aggregation)
}

/// Groups points by their nearest voxel centroid, then pools each group.
pub fn nearest_voxel_pool(cloud: &PointCloud, r: f64, aggregation: Aggregation) -> Result<PoolResult> {
    let grouping = group_points(&cloud.positions, r)?;
    aggregate(cloud, grouping, aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64], feats: &[f64]) -> PointCloud {
        let pos = xs.iter().map(|&x| [x, 0.0, 0.0]).collect();
        PointCloud::new(pos, Tensor::new(vec![feats.len(), 1], feats.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn single_point_is_itself() {
        let c = line(&[0.3], &[7.0]);
        for pool in [voxel_pool, nearest_voxel_pool] {
            let out = pool(&c, 0.1, Aggregation::Average).unwrap();
            assert_eq!(out.cloud.positions, c.positions);
            assert_eq!(out.cloud.features.data(), &[7.0]);
        }
    }

    #[test]
    fn voxel_average_and_maximum() {
        let c = line(&[0.01, 0.04, 0.09], &[1.0, 3.0, 5.0]);
        let avg = voxel_pool(&c, 0.05, Aggregation::Average).unwrap();
        assert_eq!(avg.num_groups(), 2);
        assert!((avg.cloud.positions[0][0] - 0.025).abs() < 1e-15);
        assert_eq!(avg.cloud.positions[1][0], 0.09);
        assert_eq!(avg.cloud.features.data(), &[2.0, 5.0]);
        let max = voxel_pool(&c, 0.05, Aggregation::Maximum).unwrap();
        assert_eq!(max.cloud.features.data(), &[3.0, 5.0]);
    }

    #[test]
    fn nearest_voxel_moves_boundary_point() {
        let c = line(&[0.01, 0.049, 0.051], &[1.0, 2.0, 3.0]);
        let vp = voxel_pool(&c, 0.05, Aggregation::Average).unwrap();
        assert!((vp.cloud.positions[0][0] - 0.0295).abs() < 1e-15);
        assert_eq!(vp.cloud.positions[1][0], 0.051);
        let nvp = nearest_voxel_pool(&c, 0.05, Aggregation::Average).unwrap();
        assert_eq!(nvp.grouping.members, vec![vec![0], vec![1, 2]]);
        assert_eq!(nvp.cloud.positions[0][0], 0.01);
        assert!((nvp.cloud.positions[1][0] - 0.05).abs() < 1e-15);
        assert_eq!(nvp.cloud.features.data(), &[1.0, 2.5]);
        let groups = group_points(&c.positions, 0.05).unwrap();
        assert_eq!(groups, nvp.grouping);
    }

    #[test]
    fn separated_clusters_are_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pos = Vec::new();
        for cx in 0..3 {
            for _ in 0..5 {
                pos.push([
                    cx as f64 + 0.45 + 0.1 * rng.random::<f64>(),
                    0.5 + 0.1 * rng.random::<f64>(),
                    0.5,
                ]);
            }
        }
        let c = PointCloud::from_positions(pos);
        let vp = voxel_pool(&c, 1.0, Aggregation::Average).unwrap();
        let nvp = nearest_voxel_pool(&c, 1.0, Aggregation::Average).unwrap();
        assert_eq!(vp.grouping, nvp.grouping);
    }

    #[test]
    fn non_positive_radius_is_rejected() {
        let c = line(&[0.0], &[0.0]);
        assert!(voxel_pool(&c, 0.0, Aggregation::Average).is_err());
        assert!(nearest_voxel_pool(&c, -1.0, Aggregation::Average).is_err());
    }

    /// O(N·G) nearest-centroid reference.
    fn brute_force(points: &[Point3], r: f64) -> Vec<Vec<usize>> {
        let mut keys: Vec<VoxelKey> = points.iter().map(|p| voxel_key(p, r)).collect();
        keys.sort();
        keys.dedup();
        let centroids: Vec<Point3> = keys
            .iter()
            .map(|k| {
                let members: Vec<&Point3> = points.iter().filter(|p| voxel_key(p, r) == *k).collect();
                let mut s = [0.0; 3];
                for p in &members {
                    for a in 0..3 {
                        s[a] += p[a];
                    }
                }
                s.map(|v| v / members.len() as f64)
            })
            .collect();
        let mut groups = vec![Vec::new(); centroids.len()];
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, q) in centroids.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            groups[best].push(i);
        }
        groups.retain(|g| !g.is_empty());
        groups
    }

    #[test]
    fn matches_brute_force_oracle() {
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=500);
            let r = rng.random_range(0.05..0.4);
            let pts: Vec<Point3> = (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..1.0),
                    ]
                })
                .collect();
            let g = group_points(&pts, r).unwrap();
            assert_eq!(g.members, brute_force(&pts, r), "seed {seed}");
        }
    }

    #[test]
    fn maximum_backward_routes_to_first_winner() {
        let c = line(&[0.01, 0.02, 0.03], &[4.0, 4.0, 1.0]);
        let out = voxel_pool(&c, 0.05, Aggregation::Maximum).unwrap();
        let g = out.backward(&Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[2.0, 0.0, 0.0]);
        let avg = voxel_pool(&c, 0.05, Aggregation::Average).unwrap();
        let g = avg.backward(&Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 1.0, 1.0]);
    }

    fn cloud_strategy() -> impl Strategy<Value = (Vec<Point3>, f64)> {
        (
            prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..80),
            0.05f64..1.0,
        )
    }

    proptest! {
        #[test]
        fn nearest_assignment_is_optimal((pts, r) in cloud_strategy()) {
            let (voxels, nearest) = nearest_centroids(&pts, r).unwrap();
            let g = group_points(&pts, r).unwrap();
            for (i, p) in pts.iter().enumerate() {
                let best = voxels.positions.iter().map(|c| crate::cloud::dist2(p, c)).fold(f64::INFINITY, f64::min);
                prop_assert!(crate::cloud::dist2(p, &voxels.positions[nearest[i]]) <= best + 1e-12);
                // Points sharing a centroid share a group.
                for (j, &c) in nearest.iter().enumerate() {
                    prop_assert_eq!(c == nearest[i], g.assignment[j] == g.assignment[i]);
                }
            }
        }

        #[test]
        fn every_point_in_one_nonempty_group((pts, r) in cloud_strategy()) {
            let g = group_points(&pts, r).unwrap();
            prop_assert_eq!(g.assignment.len(), pts.len());
            let mut count = 0;
            for (gid, m) in g.members.iter().enumerate() {
                prop_assert!(!m.is_empty());
                for &i in m {
                    prop_assert_eq!(g.assignment[i], gid);
                }
                count += m.len();
            }
            prop_assert_eq!(count, pts.len());
        }

        #[test]
        fn superpoints_lie_within_member_bounds((pts, r) in cloud_strategy()) {
            let g = group_points(&pts, r).unwrap();
            for (gid, m) in g.members.iter().enumerate() {
                for a in 0..3 {
                    let lo = m.iter().map(|&i| pts[i][a]).fold(f64::INFINITY, f64::min);
                    let hi = m.iter().map(|&i| pts[i][a]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(g.positions[gid][a] >= lo - 1e-12 && g.positions[gid][a] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn voxel_group_count_equals_distinct_keys((pts, r) in cloud_strategy()) {
            let mut keys: Vec<VoxelKey> = pts.iter().map(|p| voxel_key(p, r)).collect();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(voxel_groups(&pts, r).unwrap().len(), keys.len());
        }

        #[test]
        fn permutation_equivariance((pts, r) in cloud_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
            let a = group_points(&pts, r).unwrap();
            let b = group_points(&shuffled, r).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (new, &old) in perm.iter().enumerate() {
                let (pa, pb) = (a.positions[a.assignment[old]], b.positions[b.assignment[new]]);
                for k in 0..3 {
                    prop_assert!((pa[k] - pb[k]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn grid_translation_equivariance(
            grid in prop::collection::vec(prop::array::uniform3(-2048i32..2048), 1..80),
            shift in prop::array::uniform3(-4i32..4),
        ) {
            // Dyadic coordinates and radius keep every shift exact.
            let r = 0.125;
            let pts: Vec<Point3> = grid.iter().map(|g| g.map(|v| v as f64 / 1024.0)).collect();
            let t = shift.map(|s| s as f64 * r);
            let moved: Vec<Point3> = pts.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect();
            let a = voxel_groups(&pts, r).unwrap();
            let b = voxel_groups(&moved, r).unwrap();
            prop_assert_eq!(&a.members, &b.members);
            for (pa, pb) in a.positions.iter().zip(&b.positions) {
                for k in 0..3 {
                    prop_assert!((pa[k] + t[k] - pb[k]).abs() <= 1e-12);
                }
            }
        }
    }
}
