//! Geometry primitives shared by every other module: voxel grids, poses,
//! planar and full distances, and the dense heatmap container.
//!
//! Voxel indices are 1-based on every axis. Voxel `(1, 1, 1)` is centered on
//! the grid origin, so the center of voxel `(x, y, z)` sits at
//! `origin + (index - 1) * resolution`.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default voxel edge length in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("grid dimensions must be at least 1 on every axis, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("grid resolution must be positive and finite, got {0}")]
    BadResolution(f64),
    #[error("point ({0:.4}, {1:.4}, {2:.4}) lies outside the grid volume")]
    OutOfBounds(f64, f64, f64),
    #[error("voxel index ({0}, {1}, {2}) is outside the grid")]
    IndexOutOfBounds(usize, usize, usize),
    #[error("quaternion norm {0} is not 1")]
    NonUnitQuaternion(f64),
    #[error("heatmap has {got} values, grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("heatmap value {value} at linear index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("heatmap is zero everywhere")]
    DegenerateHeatmap,
}

/// Shape and placement of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dims: [usize; 3],
    resolution: f64,
    origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], resolution: f64, origin: [f64; 3]) -> Result<Self, SpatialError> {
        if dims.contains(&0) {
            return Err(SpatialError::EmptyDims(dims));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(SpatialError::BadResolution(resolution));
        }
        Ok(Self {
            dims,
            resolution,
            origin,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Number of voxels in one horizontal layer (one z slice).
    pub fn column_count(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Lower and upper world-frame corners of the grid volume.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let half = self.resolution / 2.0;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..3 {
            lo[a] = self.origin[a] - half;
            hi[a] = self.origin[a] + (self.dims[a] as f64 - 0.5) * self.resolution;
        }
        (lo, hi)
    }

    /// Voxel whose cell contains `point`.
    pub fn world_to_voxel(&self, point: [f64; 3]) -> Result<VoxelIndex, SpatialError> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let rel = (point[a] - self.origin[a]) / self.resolution + 0.5;
            if !rel.is_finite() || rel < 0.0 {
                return Err(SpatialError::OutOfBounds(point[0], point[1], point[2]));
            }
            let cell = rel.floor() as usize;
            if cell >= self.dims[a] {
                return Err(SpatialError::OutOfBounds(point[0], point[1], point[2]));
            }
            idx[a] = cell + 1;
        }
        Ok(VoxelIndex::new(idx[0], idx[1], idx[2]))
    }

    /// Like [`world_to_voxel`](Self::world_to_voxel) but snaps points outside
    /// the volume to the nearest boundary voxel. The flag reports clamping.
    pub fn world_to_voxel_clamped(&self, point: [f64; 3]) -> (VoxelIndex, bool) {
        let mut idx = [0usize; 3];
        let mut clamped = false;
        for a in 0..3 {
            let rel = (point[a] - self.origin[a]) / self.resolution + 0.5;
            let cell = if rel.is_nan() || rel < 0.0 {
                clamped = true;
                0
            } else if rel >= self.dims[a] as f64 {
                clamped = true;
                self.dims[a] - 1
            } else {
                rel.floor() as usize
            };
            idx[a] = cell + 1;
        }
        (VoxelIndex::new(idx[0], idx[1], idx[2]), clamped)
    }

    /// World coordinates of a voxel center.
    pub fn voxel_to_world(&self, v: VoxelIndex) -> [f64; 3] {
        let i = v.as_array();
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.origin[a] + (i[a] as f64 - 1.0) * self.resolution;
        }
        out
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        let i = v.as_array();
        (0..3).all(|a| i[a] >= 1 && i[a] <= self.dims[a])
    }

    /// Row-major linear offset: x slowest, z fastest. Iterating linear offsets
    /// in increasing order therefore walks indices in lexicographic order.
    pub fn linear(&self, v: VoxelIndex) -> usize {
        debug_assert!(self.contains(v));
        ((v.x - 1) * self.dims[1] + (v.y - 1)) * self.dims[2] + (v.z - 1)
    }

    pub fn checked_linear(&self, v: VoxelIndex) -> Result<usize, SpatialError> {
        if self.contains(v) {
            Ok(self.linear(v))
        } else {
            Err(SpatialError::IndexOutOfBounds(v.x, v.y, v.z))
        }
    }

    pub fn from_linear(&self, offset: usize) -> VoxelIndex {
        let z = offset % self.dims[2];
        let rest = offset / self.dims[2];
        let y = rest % self.dims[1];
        let x = rest / self.dims[1];
        VoxelIndex::new(x + 1, y + 1, z + 1)
    }
}

/// A 1-based voxel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    pub const fn new(x: usize, y: usize, z: usize) -> Self {
        Self { x, y, z }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.x, self.y, self.z]
    }
}

/// Anything with three Cartesian coordinates in a common frame.
pub trait Coords3 {
    fn coords(&self) -> [f64; 3];
}

impl Coords3 for [f64; 3] {
    fn coords(&self) -> [f64; 3] {
        *self
    }
}

impl Coords3 for Point3<f64> {
    fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Coords3 for Vector3<f64> {
    fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Coords3 for VoxelIndex {
    fn coords(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

/// Distance on the xy-plane; z is ignored.
pub fn dist_xy<P: Coords3 + ?Sized>(p: &P, q: &P) -> f64 {
    let (a, b) = (p.coords(), q.coords());
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Euclidean distance in 3D.
pub fn dist_3d<P: Coords3 + ?Sized>(p: &P, q: &P) -> f64 {
    let (a, b) = (p.coords(), q.coords());
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Rigid camera or robot pose: maps body-frame points into the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_parts(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    /// Builds a pose from a raw `(x, y, z, w)` quaternion, which must already be
    /// unit length to within 1e-9.
    pub fn from_raw(position: [f64; 3], quat_xyzw: [f64; 4]) -> Result<Self, SpatialError> {
        let [x, y, z, w] = quat_xyzw;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(SpatialError::NonUnitQuaternion(norm));
        }
        Ok(Self {
            position: Vector3::from(position),
            orientation: UnitQuaternion::new_unchecked(q),
        })
    }

    pub fn translation(position: [f64; 3]) -> Self {
        Self {
            position: Vector3::from(position),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn quat_xyzw(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn position_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.position.z]
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            orientation: iso.rotation,
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.orientation * p + self.position
    }

    pub fn inverse(&self) -> Self {
        Self::from_isometry(&self.to_isometry().inverse())
    }

    /// Linear interpolation of position and slerp of orientation.
    pub fn interpolate(&self, other: &Pose, t: f64) -> Pose {
        let position = self.position.lerp(&other.position, t);
        let orientation = self
            .orientation
            .try_slerp(&other.orientation, t, 1e-12)
            .unwrap_or(self.orientation);
        Pose {
            position,
            orientation,
        }
    }
}

/// Dense per-voxel target probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    spec: GridSpec,
    values: Vec<f64>,
    /// Set when the heatmap was built from an empty localization result, so
    /// callers can tell "nothing matched" apart from "matched far away".
    empty_input: bool,
}

impl Heatmap {
    /// Rejects arrays of the wrong length or with values outside `[0, 1]`.
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, SpatialError> {
        if values.len() != spec.voxel_count() {
            return Err(SpatialError::LengthMismatch {
                expected: spec.voxel_count(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(SpatialError::ValueOutOfRange { index, value });
        }
        Ok(Self {
            spec,
            values,
            empty_input: false,
        })
    }

    pub fn filled(spec: GridSpec, value: f64) -> Result<Self, SpatialError> {
        Self::new(spec, vec![value; spec.voxel_count()])
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.voxel_count()],
            empty_input: false,
        }
    }

    /// All-zero heatmap tagged as coming from an empty localization result.
    pub fn empty_result(spec: GridSpec) -> Self {
        Self {
            empty_input: true,
            ..Self::zeros(spec)
        }
    }

    /// Sets or clears the empty-input tag.
    pub fn with_empty_input(mut self, empty: bool) -> Self {
        self.empty_input = empty;
        self
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_empty_input(&self) -> bool {
        self.empty_input
    }

    pub fn get(&self, v: VoxelIndex) -> Option<f64> {
        self.spec.checked_linear(v).ok().map(|i| self.values[i])
    }

    /// Highest-valued voxel; ties resolve to the lexicographically lowest index.
    pub fn argmax(&self) -> Result<(VoxelIndex, f64), SpatialError> {
        heatmap_argmax(self)
    }

    /// Maximum over z of every (x, y) column, row-major in (x, y).
    pub fn top_down_max(&self) -> Vec<f64> {
        let [_, _, nz] = self.spec.dims;
        self.values
            .chunks_exact(nz)
            .map(|col| col.iter().copied().fold(0.0, f64::max))
            .collect()
    }
}

/// Location and value of the highest voxel. Fails when the heatmap is zero
/// everywhere, meaning no modality matched.
pub fn heatmap_argmax(h: &Heatmap) -> Result<(VoxelIndex, f64), SpatialError> {
    let mut best = 0usize;
    let mut best_value = f64::NEG_INFINITY;
    for (i, &v) in h.values.iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    if best_value <= 0.0 {
        return Err(SpatialError::DegenerateHeatmap);
    }
    Ok((h.spec.from_linear(best), best_value))
}
