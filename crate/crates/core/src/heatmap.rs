//! Heatmap construction from localization results and cross-modal fusion.
//!
//! Every constructor decays linearly with distance from the localized
//! evidence and clamps at zero:
//!
//! * from a camera pose: `max(1 - eps * dist_xy(p, p_v), 0)`
//! * from object points: `max(1 - eps * min_i dist(p, p_oi), 0)` in full 3D
//! * from scored positions: `max(max_i (s_i - eps * dist_xy(p, p_i)), 0)`
//!
//! Distances are measured in meters between voxel centers. World positions
//! (camera poses, area-frame and audio-segment anchors) are first snapped to
//! the center of the voxel that contains them, so that voxel reads exactly
//! its score. Fusion is the element-wise product of all inputs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localize::ScoredPosition;
use crate::spatial::{GridSpec, Heatmap, SpatialError, VoxelIndex};

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("decay rate must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("primary decay {primary} is below auxiliary decay {auxiliary}")]
    DecayOrder { primary: f64, auxiliary: f64 },
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("heatmap {index} has a different grid")]
    SpecMismatch { index: usize },
    #[error("nothing to fuse")]
    NoInputs,
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("export: {0}")]
    Export(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Decay rates in 1/m for the located entity (primary) and for context
/// used to disambiguate it (auxiliary).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConfig {
    pub epsilon_primary: f64,
    pub epsilon_auxiliary: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            epsilon_primary: 0.1,
            epsilon_auxiliary: 0.01,
        }
    }
}

impl DecayConfig {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        check_epsilon(self.epsilon_primary)?;
        check_epsilon(self.epsilon_auxiliary)?;
        if self.epsilon_primary < self.epsilon_auxiliary {
            return Err(HeatmapError::DecayOrder {
                primary: self.epsilon_primary,
                auxiliary: self.epsilon_auxiliary,
            });
        }
        Ok(())
    }
}

/// Distance used by a constructor. Pose and scored heatmaps default to
/// [`Planar`](DistanceMode::Planar), object heatmaps to
/// [`Full`](DistanceMode::Full).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMode {
    Planar,
    Full,
}

fn check_epsilon(eps: f64) -> Result<(), HeatmapError> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(HeatmapError::BadEpsilon(eps))
    }
}

fn snap(spec: &GridSpec, p: [f64; 3]) -> VoxelIndex {
    let (v, clamped) = spec.world_to_voxel_clamped(p);
    if clamped {
        log::warn!("position {p:?} lies outside the grid; clamped to voxel {v:?}");
    }
    v
}

fn decay(eps: f64, d: f64) -> f64 {
    (1.0 - eps * d).max(0.0)
}

/// Copies one value per (x, y) column down every z layer.
fn broadcast_columns(spec: &GridSpec, columns: &[f64]) -> Vec<f64> {
    let nz = spec.dims()[2];
    columns.iter().flat_map(|&c| std::iter::repeat_n(c, nz)).collect()
}

fn finish(spec: GridSpec, values: Vec<f64>) -> Result<Heatmap, HeatmapError> {
    Ok(Heatmap::new(spec, values)?)
}

pub fn heatmap_from_pose(spec: GridSpec, p_v: [f64; 3], eps: f64) -> Result<Heatmap, HeatmapError> {
    heatmap_from_pose_with(spec, p_v, eps, DistanceMode::Planar)
}

pub fn heatmap_from_pose_with(
    spec: GridSpec,
    p_v: [f64; 3],
    eps: f64,
    mode: DistanceMode,
) -> Result<Heatmap, HeatmapError> {
    heatmap_from_scored_with(
        spec,
        &[ScoredPosition {
            position: p_v,
            score: 1.0,
        }],
        eps,
        mode,
    )
}

pub fn heatmap_from_points(spec: GridSpec, hits: &[VoxelIndex], eps: f64) -> Result<Heatmap, HeatmapError> {
    heatmap_from_points_with(spec, hits, eps, DistanceMode::Full)
}

/// Decay from the nearest hit voxel. No hits gives an all-zero heatmap tagged
/// as empty input.
pub fn heatmap_from_points_with(
    spec: GridSpec,
    hits: &[VoxelIndex],
    eps: f64,
    mode: DistanceMode,
) -> Result<Heatmap, HeatmapError> {
    check_epsilon(eps)?;
    for h in hits {
        spec.checked_linear(*h)?;
    }
    if hits.is_empty() {
        return Ok(Heatmap::empty_result(spec));
    }
    let [nx, ny, nz] = spec.dims();
    let res = spec.resolution();
    let values = match mode {
        DistanceMode::Full => {
            let mut sq = vec![f64::INFINITY; spec.voxel_count()];
            for h in hits {
                sq[spec.linear(*h)] = 0.0;
            }
            squared_edt(&mut sq, &[nx, ny, nz]);
            sq.into_iter().map(|d| decay(eps, d.sqrt() * res)).collect()
        }
        DistanceMode::Planar => {
            let mut sq = vec![f64::INFINITY; spec.column_count()];
            for h in hits {
                sq[(h.x - 1) * ny + (h.y - 1)] = 0.0;
            }
            squared_edt(&mut sq, &[nx, ny]);
            let cols: Vec<f64> = sq.into_iter().map(|d| decay(eps, d.sqrt() * res)).collect();
            broadcast_columns(&spec, &cols)
        }
    };
    finish(spec, values)
}

pub fn heatmap_from_scored(spec: GridSpec, scored: &[ScoredPosition], eps: f64) -> Result<Heatmap, HeatmapError> {
    heatmap_from_scored_with(spec, scored, eps, DistanceMode::Planar)
}

/// Per-voxel maximum of `s_i - eps * dist` over all entries, clamped at zero.
/// No entries gives an all-zero heatmap tagged as empty input.
pub fn heatmap_from_scored_with(
    spec: GridSpec,
    scored: &[ScoredPosition],
    eps: f64,
    mode: DistanceMode,
) -> Result<Heatmap, HeatmapError> {
    check_epsilon(eps)?;
    if let Some(bad) = scored.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(HeatmapError::ScoreOutOfRange(bad.score));
    }
    if scored.is_empty() {
        return Ok(Heatmap::empty_result(spec));
    }
    let [nx, ny, nz] = spec.dims();
    let res = spec.resolution();
    let anchors: Vec<(VoxelIndex, f64)> = scored.iter().map(|s| (snap(&spec, s.position), s.score)).collect();
    let best = |x: usize, y: usize, z: Option<usize>| {
        anchors
            .iter()
            .map(|(a, s)| {
                let dx = x as f64 - a.x as f64;
                let dy = y as f64 - a.y as f64;
                let dz = z.map_or(0.0, |z| z as f64 - a.z as f64);
                s - eps * res * (dx * dx + dy * dy + dz * dz).sqrt()
            })
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0)
    };
    let values = match mode {
        DistanceMode::Planar => {
            let mut cols = Vec::with_capacity(spec.column_count());
            for x in 1..=nx {
                for y in 1..=ny {
                    cols.push(best(x, y, None));
                }
            }
            broadcast_columns(&spec, &cols)
        }
        DistanceMode::Full => {
            let mut vals = Vec::with_capacity(spec.voxel_count());
            for x in 1..=nx {
                for y in 1..=ny {
                    for z in 1..=nz {
                        vals.push(best(x, y, Some(z)));
                    }
                }
            }
            vals
        }
    };
    finish(spec, values)
}

/// Element-wise product. The result is tagged empty-input if any input is.
pub fn fuse(maps: &[&Heatmap]) -> Result<Heatmap, HeatmapError> {
    let (first, rest) = maps.split_first().ok_or(HeatmapError::NoInputs)?;
    for (i, m) in rest.iter().enumerate() {
        if m.spec() != first.spec() {
            return Err(HeatmapError::SpecMismatch { index: i + 1 });
        }
    }
    let mut values = first.values().to_vec();
    for m in rest {
        for (acc, v) in values.iter_mut().zip(m.values()) {
            *acc *= v;
        }
    }
    let empty = maps.iter().any(|m| m.is_empty_input());
    Ok(Heatmap::new(*first.spec(), values)?.with_empty_input(empty))
}

/// Exact squared Euclidean distance transform in index units, in place.
/// Zero marks a site, infinity everything else. Row-major layout with the
/// last axis fastest. Applies the one-dimensional lower-envelope transform
/// of Felzenszwalb and Huttenlocher along each axis in turn.
fn squared_edt(grid: &mut [f64], dims: &[usize]) {
    let total: usize = dims.iter().product();
    debug_assert_eq!(total, grid.len());
    let max_len = dims.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; max_len];
    let mut out = vec![0.0; max_len];
    let mut v = vec![0usize; max_len];
    let mut z = vec![0.0; max_len + 1];
    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        for start in 0..total {
            // visit each line once, from the element whose axis coordinate is 0
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for i in 0..n {
                line[i] = grid[start + i * stride];
            }
            if line[..n].iter().all(|x| x.is_infinite()) {
                continue;
            }
            edt_1d(&line[..n], &mut out[..n], &mut v, &mut z);
            for i in 0..n {
                grid[start + i * stride] = out[i];
            }
        }
    }
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    let mut k = 0usize;
    v[0] = sites[0];
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for &q in &sites[1..] {
        // z[0] is -inf, so the envelope never empties
        let s = loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s > z[k] {
                break s;
            }
            k -= 1;
        };
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0usize;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// JET colormap: dark blue at 0 through cyan, yellow, to dark red at 1.
pub fn jet(value: f64) -> [u8; 3] {
    let v = value.clamp(0.0, 1.0);
    let channel = |center: f64| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image pixel order for exports: column `c` is voxel x = c + 1, row `r` is
/// voxel y = ny - r, so +y points up in the image.
fn image_order(spec: &GridSpec, columns: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = spec.dims();
    let mut out = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        let y = ny - 1 - r;
        for x in 0..nx {
            out.push(columns[x * ny + y]);
        }
    }
    out
}

/// Writes `slice_z001.pgm` .. one binary 8-bit PGM per z layer and
/// `topdown_jet.png`, the JET-colored maximum over z. Returns written paths.
pub fn export_heatmap(h: &Heatmap, dir: &Path) -> Result<Vec<std::path::PathBuf>, HeatmapError> {
    let spec = *h.spec();
    let [nx, ny, nz] = spec.dims();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for z in 0..nz {
        let layer: Vec<f64> = (0..nx * ny).map(|c| h.values()[c * nz + z]).collect();
        let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
        bytes.extend(image_order(&spec, &layer).into_iter().map(to_byte));
        let path = dir.join(format!("slice_z{:03}.pgm", z + 1));
        fs::File::create(&path)?.write_all(&bytes)?;
        written.push(path);
    }
    let top = image_order(&spec, &h.top_down_max());
    let rgb: Vec<u8> = top.into_iter().flat_map(jet).collect();
    let img = image::RgbImage::from_raw(nx as u32, ny as u32, rgb).ok_or_else(|| HeatmapError::Export("image size".into()))?;
    let path = dir.join("topdown_jet.png");
    img.save(&path).map_err(|e| HeatmapError::Export(e.to_string()))?;
    written.push(path);
    Ok(written)
}
