//! Accumulation of per-pixel features into a sparse voxel map.

use std::collections::BTreeMap;

use crate::provider::{DenseFeatureFrame, EmbeddingSpace, EmbeddingVector};
use crate::spatial::{GridSpec, VoxelIndex};

use super::camera::back_project_pixel;
use super::{IngestError, StreamFrame};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    pub fused: u64,
    pub out_of_grid: u64,
    pub invalid_depth: u64,
}

impl std::ops::AddAssign for FuseStats {
    fn add_assign(&mut self, o: Self) {
        self.fused += o.fused;
        self.out_of_grid += o.out_of_grid;
        self.invalid_depth += o.invalid_depth;
    }
}

#[derive(Debug, Clone)]
struct Accum {
    sum: Vec<f64>,
    count: u32,
}

/// Running per-voxel feature sums. Summation makes the result independent of
/// frame order up to floating-point rounding.
#[derive(Debug, Clone)]
pub struct VoxelAccumulator {
    spec: GridSpec,
    dim: usize,
    voxels: BTreeMap<usize, Accum>,
}

impl VoxelAccumulator {
    pub fn new(spec: GridSpec, dim: usize) -> Self {
        Self {
            spec,
            dim,
            voxels: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn occupied(&self) -> usize {
        self.voxels.len()
    }

    pub fn add(&mut self, voxel: VoxelIndex, feature: &[f32]) {
        let dim = self.dim;
        let acc = self.voxels.entry(self.spec.linear(voxel)).or_insert_with(|| Accum {
            sum: vec![0.0; dim],
            count: 0,
        });
        for (s, &f) in acc.sum.iter_mut().zip(feature) {
            *s += f as f64;
        }
        acc.count += 1;
    }

    /// Mean feature per voxel, re-normalized. Voxels whose features cancel to
    /// a zero mean are dropped.
    pub fn finalize(self) -> VoxelFeatureMap {
        let mut linear = Vec::with_capacity(self.voxels.len());
        let mut counts = Vec::with_capacity(self.voxels.len());
        let mut features = Vec::with_capacity(self.voxels.len() * self.dim);
        for (offset, acc) in self.voxels {
            let norm = acc.sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                log::warn!("voxel {:?} averaged to a zero feature; dropped", self.spec.from_linear(offset));
                continue;
            }
            linear.push(offset);
            counts.push(acc.count);
            features.extend(acc.sum.iter().map(|v| (v / norm) as f32));
        }
        VoxelFeatureMap {
            spec: self.spec,
            dim: self.dim,
            linear,
            counts,
            features,
        }
    }
}

/// Back-projects every valid-depth pixel of `frame` and adds its feature to
/// the voxel it lands in. Points outside the grid are counted and skipped.
pub fn fuse_frame(
    acc: &mut VoxelAccumulator,
    frame: &StreamFrame,
    dense: &DenseFeatureFrame,
    pixel_step: u32,
) -> Result<FuseStats, IngestError> {
    let (w, h) = (frame.intrinsics.width, frame.intrinsics.height);
    if (dense.width(), dense.height()) != (w, h) || (frame.depth.width(), frame.depth.height()) != (w, h) {
        return Err(IngestError::FrameSizeMismatch { index: frame.index });
    }
    if dense.dim() != acc.dim {
        return Err(IngestError::FeatureDim {
            expected: acc.dim,
            got: dense.dim(),
        });
    }
    let step = pixel_step.max(1);
    let mut stats = FuseStats::default();
    for v in (0..h).step_by(step as usize) {
        for u in (0..w).step_by(step as usize) {
            let d = frame.depth.at(u, v);
            if d <= 0.0 {
                stats.invalid_depth += 1;
                continue;
            }
            let p = back_project_pixel(&frame.pose, &frame.intrinsics, d as f64, u as f64, v as f64)?;
            match acc.spec.world_to_voxel([p.x, p.y, p.z]) {
                Ok(voxel) => {
                    acc.add(voxel, dense.at(u, v));
                    stats.fused += 1;
                }
                Err(_) => stats.out_of_grid += 1,
            }
        }
    }
    Ok(stats)
}

/// Finalized sparse voxel feature map: occupied voxels sorted by linear
/// offset, each with a unit-norm feature and its observation count.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelFeatureMap {
    spec: GridSpec,
    dim: usize,
    linear: Vec<usize>,
    counts: Vec<u32>,
    features: Vec<f32>,
}

impl VoxelFeatureMap {
    pub fn empty(spec: GridSpec, dim: usize) -> Self {
        Self {
            spec,
            dim,
            linear: Vec::new(),
            counts: Vec::new(),
            features: Vec::new(),
        }
    }

    /// Assembles a map from raw parts, checking ordering, counts and norms.
    pub fn from_parts(
        spec: GridSpec,
        dim: usize,
        entries: Vec<(VoxelIndex, u32, Vec<f32>)>,
    ) -> Result<Self, IngestError> {
        let mut map = Self::empty(spec, dim);
        let mut entries: Vec<_> = entries
            .into_iter()
            .map(|(v, c, f)| spec.checked_linear(v).map(|l| (l, c, f)))
            .collect::<Result<_, _>>()
            .map_err(IngestError::Spatial)?;
        entries.sort_by_key(|e| e.0);
        for (offset, count, feature) in entries {
            if map.linear.last() == Some(&offset) {
                return Err(IngestError::DuplicateVoxel(spec.from_linear(offset)));
            }
            if count == 0 {
                return Err(IngestError::ZeroCount(spec.from_linear(offset)));
            }
            let unit = EmbeddingVector::from_unit(EmbeddingSpace::PixelText, feature)
                .map_err(IngestError::Provider)?;
            if unit.dim() != dim {
                return Err(IngestError::FeatureDim { expected: dim, got: unit.dim() });
            }
            map.linear.push(offset);
            map.counts.push(count);
            map.features.extend_from_slice(unit.values());
        }
        Ok(map)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.linear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.linear.is_empty()
    }

    pub fn voxel(&self, i: usize) -> VoxelIndex {
        self.spec.from_linear(self.linear[i])
    }

    pub fn count(&self, i: usize) -> u32 {
        self.counts[i]
    }

    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, u32, &[f32])> + '_ {
        (0..self.len()).map(move |i| (self.voxel(i), self.counts[i], self.feature(i)))
    }

    pub fn is_occupied(&self, v: VoxelIndex) -> bool {
        self.spec
            .checked_linear(v)
            .map(|l| self.linear.binary_search(&l).is_ok())
            .unwrap_or(false)
    }

    pub fn feature_at(&self, v: VoxelIndex) -> Option<&[f32]> {
        let l = self.spec.checked_linear(v).ok()?;
        self.linear.binary_search(&l).ok().map(|i| self.feature(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::camera::{DepthMap, Intrinsics};
    use crate::spatial::Pose;
    use nalgebra::{UnitQuaternion, Vector3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn grid() -> GridSpec {
        GridSpec::new([40, 40, 40], 0.1, [-2.0, -2.0, -0.5]).unwrap()
    }

    fn frame(index: usize, pose: Pose, w: u32, h: u32, depth: Vec<f32>) -> StreamFrame {
        let k = Intrinsics::new(4.0, 4.0, (w as f64 - 1.0) / 2.0 + 0.5, (h as f64 - 1.0) / 2.0 + 0.5, w, h).unwrap();
        StreamFrame {
            index,
            timestamp: index as f64,
            pose,
            image: image::RgbImage::new(w, h),
            depth: DepthMap::new(w, h, depth).unwrap(),
            intrinsics: k,
        }
    }

    fn unit(values: Vec<f32>) -> Vec<f32> {
        crate::provider::normalize_f32(&values).unwrap()
    }

    #[test]
    fn single_pixel_gives_one_voxel() {
        let f = frame(0, Pose::identity(), 1, 1, vec![1.0]);
        let feat = unit(vec![3.0, 4.0]);
        let dense = DenseFeatureFrame::new(1, 1, 1, 2, feat.clone()).unwrap();
        let mut acc = VoxelAccumulator::new(grid(), 2);
        let stats = fuse_frame(&mut acc, &f, &dense, 1).unwrap();
        assert_eq!(stats.fused, 1);
        let map = acc.finalize();
        assert_eq!(map.len(), 1);
        assert_eq!(map.feature(0), feat.as_slice());
        assert_eq!(map.count(0), 1);
    }

    #[test]
    fn identical_vectors_keep_direction() {
        let feat = unit(vec![0.0, 1.0, 1.0]);
        let dense = DenseFeatureFrame::new(1, 1, 1, 3, feat.clone()).unwrap();
        let mut acc = VoxelAccumulator::new(grid(), 3);
        for i in 0..2 {
            let f = frame(i, Pose::identity(), 1, 1, vec![1.0]);
            fuse_frame(&mut acc, &f, &dense, 1).unwrap();
        }
        let map = acc.finalize();
        assert_eq!(map.len(), 1);
        assert_eq!(map.count(0), 2);
        for (a, b) in map.feature(0).iter().zip(&feat) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn out_of_grid_points_are_counted() {
        let f = frame(0, Pose::identity(), 1, 1, vec![10.0]);
        let dense = DenseFeatureFrame::new(1, 1, 1, 1, vec![1.0]).unwrap();
        let mut acc = VoxelAccumulator::new(grid(), 1);
        let stats = fuse_frame(&mut acc, &f, &dense, 1).unwrap();
        assert_eq!(stats.out_of_grid, 1);
        assert_eq!(acc.occupied(), 0);
    }

    #[test]
    fn size_mismatch_rejected() {
        let f = frame(0, Pose::identity(), 2, 1, vec![1.0, 1.0]);
        let dense = DenseFeatureFrame::new(1, 1, 1, 1, vec![1.0]).unwrap();
        let mut acc = VoxelAccumulator::new(grid(), 1);
        assert!(fuse_frame(&mut acc, &f, &dense, 1).is_err());
    }

    fn random_frames(seed: u64) -> Vec<(StreamFrame, DenseFeatureFrame)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..4)
            .map(|i| {
                let pose = Pose::from_parts(
                    Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0),
                    UnitQuaternion::from_euler_angles(0.0, 0.0, rng.random_range(-0.5..0.5)),
                );
                let depth: Vec<f32> = (0..24)
                    .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.5..1.2) })
                    .collect();
                let data: Vec<f32> = (0..24)
                    .flat_map(|_| unit((0..4).map(|_| rng.random_range(-1.0..1.0)).collect()))
                    .collect();
                (frame(i, pose, 6, 4, depth), DenseFeatureFrame::new(6, 4, 1, 4, data).unwrap())
            })
            .collect()
    }

    #[test]
    fn matches_mean_then_normalize_oracle() {
        let frames = random_frames(7);
        let g = grid();
        let mut acc = VoxelAccumulator::new(g, 4);
        for (f, d) in &frames {
            fuse_frame(&mut acc, f, d, 1).unwrap();
        }
        let map = acc.finalize();

        // oracle: group raw pixel features by voxel, arithmetic mean, normalize
        let mut groups: HashMap<VoxelIndex, Vec<Vec<f64>>> = HashMap::new();
        for (f, d) in &frames {
            for v in 0..4u32 {
                for u in 0..6u32 {
                    let z = f.depth.at(u, v) as f64;
                    if z <= 0.0 {
                        continue;
                    }
                    let k = &f.intrinsics;
                    let cam = nalgebra::Point3::new((u as f64 - k.cx) / k.fx * z, (v as f64 - k.cy) / k.fy * z, z);
                    let w = f.pose.orientation * cam + f.pose.position;
                    if let Ok(vox) = g.world_to_voxel([w.x, w.y, w.z]) {
                        groups
                            .entry(vox)
                            .or_default()
                            .push(d.at(u, v).iter().map(|&x| x as f64).collect());
                    }
                }
            }
        }
        assert_eq!(groups.len(), map.len());
        for (vox, feats) in groups {
            let n = feats.len() as f64;
            let mean: Vec<f64> = (0..4).map(|i| feats.iter().map(|f| f[i]).sum::<f64>() / n).collect();
            let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
            let got = map.feature_at(vox).unwrap();
            for i in 0..4 {
                assert!((got[i] as f64 - mean[i] / norm).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn frame_order_does_not_matter(seed in 0u64..1000) {
            let frames = random_frames(seed);
            let mut fwd = VoxelAccumulator::new(grid(), 4);
            for (f, d) in &frames {
                fuse_frame(&mut fwd, f, d, 1).unwrap();
            }
            let mut rev = VoxelAccumulator::new(grid(), 4);
            for (f, d) in frames.iter().rev() {
                fuse_frame(&mut rev, f, d, 1).unwrap();
            }
            let (a, b) = (fwd.finalize(), rev.finalize());
            prop_assert_eq!(a.len(), b.len());
            for i in 0..a.len() {
                prop_assert_eq!(a.voxel(i), b.voxel(i));
                let cos: f64 = a.feature(i).iter().zip(b.feature(i)).map(|(x, y)| *x as f64 * *y as f64).sum();
                prop_assert!(1.0 - cos < 1e-5);
            }
        }
    }
}
