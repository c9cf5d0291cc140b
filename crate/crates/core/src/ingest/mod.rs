//! Turns a recorded observation stream into the four map databases: the voxel
//! feature map, keyframes, area frames and audio segments.

pub mod audio;
pub mod camera;
pub mod fusion;
pub mod records;
pub mod stream_dir;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{MapMetadata, MultimodalMap};
use crate::provider::{EmbeddingProvider, EmbeddingSpace, ProviderError};
use crate::spatial::{GridSpec, Pose, SpatialError, VoxelIndex};

pub use audio::{AudioSegment, AudioTrack, SegmentationConfig};
pub use camera::{back_project_pixel, DepthMap, Intrinsics};
pub use fusion::{fuse_frame, FuseStats, VoxelAccumulator, VoxelFeatureMap};
pub use records::{build_area_db, build_keyframe_db, AreaFrame, KeyframeRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid camera intrinsics {0:?}")]
    BadIntrinsics(Intrinsics),
    #[error("depth map of {width}x{height} needs {} values, got {len}", (*width as usize) * (*height as usize))]
    DepthSize { width: u32, height: u32, len: usize },
    #[error("depth value {0} is negative or not finite")]
    NegativeDepth(f32),
    #[error("no valid depth at pixel ({u}, {v})")]
    InvalidDepth { u: f64, v: f64 },
    #[error("frame {index}: image, depth and features disagree in size")]
    FrameSizeMismatch { index: usize },
    #[error("feature dimension {got} does not match map dimension {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("voxel {0:?} listed twice")]
    DuplicateVoxel(VoxelIndex),
    #[error("voxel {0:?} has zero observations")]
    ZeroCount(VoxelIndex),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("stream has no frames")]
    EmptyStream,
    #[error("frame {index}: timestamp does not increase")]
    NonMonotonicTime { index: usize },
    #[error("audio track is empty")]
    EmptyAudio,
    #[error("stream format: {0}")]
    Format(String),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One posed RGB-D observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    pub index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub image: RgbImage,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
}

/// A complete recording: frames, optional audio and the object vocabulary
/// used for open-vocabulary labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub frames: Vec<StreamFrame>,
    pub audio: Option<AudioTrack>,
    pub labels: Vec<String>,
}

impl Stream {
    /// Checks the per-frame invariants and that timestamps strictly increase.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.frames.is_empty() {
            return Err(IngestError::EmptyStream);
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.intrinsics.validate()?;
            let (w, h) = (f.intrinsics.width, f.intrinsics.height);
            if f.image.dimensions() != (w, h) || (f.depth.width(), f.depth.height()) != (w, h) {
                return Err(IngestError::FrameSizeMismatch { index: f.index });
            }
            if i > 0 && f.timestamp.partial_cmp(&self.frames[i - 1].timestamp) != Some(std::cmp::Ordering::Greater) {
                return Err(IngestError::NonMonotonicTime { index: f.index });
            }
        }
        Ok(())
    }

    pub fn odometry(&self) -> Odometry {
        Odometry::new(self.frames.iter().map(|f| (f.timestamp, f.pose)).collect())
    }
}

/// Time-stamped poses; queries between samples interpolate, queries outside
/// the covered span clamp to the nearest end.
#[derive(Debug, Clone, PartialEq)]
pub struct Odometry {
    samples: Vec<(f64, Pose)>,
}

impl Odometry {
    pub fn new(mut samples: Vec<(f64, Pose)>) -> Self {
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { samples }
    }

    pub fn time_span(&self) -> Option<(f64, f64)> {
        Some((self.samples.first()?.0, self.samples.last()?.0))
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let s = &self.samples;
        match s.len() {
            0 => Pose::identity(),
            1 => s[0].1,
            _ => {
                let i = s.partition_point(|(ts, _)| *ts <= t);
                if i == 0 {
                    return s[0].1;
                }
                if i == s.len() {
                    return s[s.len() - 1].1;
                }
                let (t0, p0) = s[i - 1];
                let (t1, p1) = s[i];
                p0.interpolate(&p1, (t - t0) / (t1 - t0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub grid: GridSpec,
    /// Fuse every n-th pixel along each image axis.
    pub pixel_step: u32,
    pub keyframe_stride: usize,
    pub area_stride: usize,
    pub segmentation: SegmentationConfig,
}

impl IngestConfig {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            pixel_step: 1,
            keyframe_stride: 1,
            area_stride: 1,
            segmentation: SegmentationConfig::default(),
        }
    }
}

/// Counts reported after a build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub frames: usize,
    pub voxels: usize,
    pub keyframes: usize,
    pub area_frames: usize,
    pub audio_segments: usize,
    pub fused_points: u64,
    pub skipped_out_of_grid: u64,
    pub skipped_invalid_depth: u64,
}

/// Runs the whole mapping pipeline. Embedding requests for different frames
/// run in parallel; voxel accumulation is applied in frame order, so the
/// result does not depend on scheduling.
pub fn build_map(
    stream: &Stream,
    provider: &dyn EmbeddingProvider,
    cfg: &IngestConfig,
) -> Result<(MultimodalMap, BuildSummary), IngestError> {
    stream.validate()?;
    let manifest = provider.manifest();
    let dim = manifest
        .dim_of(EmbeddingSpace::PixelText)
        .ok_or_else(|| ProviderError::Manifest("pixel-text space not declared".into()))?;

    let dense: Vec<_> = stream
        .frames
        .par_iter()
        .map(|f| provider.embed_image_dense(&f.image))
        .collect::<Result<_, _>>()?;
    let mut acc = VoxelAccumulator::new(cfg.grid, dim);
    let mut stats = FuseStats::default();
    for (frame, d) in stream.frames.iter().zip(&dense) {
        stats += fuse_frame(&mut acc, frame, d, cfg.pixel_step)?;
    }
    let voxels = acc.finalize();

    let keyframes = build_keyframe_db(&stream.frames, provider, cfg.keyframe_stride)?;
    let areas = build_area_db(&stream.frames, provider, cfg.area_stride)?;
    let segments = match &stream.audio {
        Some(track) => audio::segment_audio(track, &stream.odometry(), provider, &cfg.segmentation)?,
        None => Vec::new(),
    };

    let summary = BuildSummary {
        frames: stream.frames.len(),
        voxels: voxels.len(),
        keyframes: keyframes.len(),
        area_frames: areas.len(),
        audio_segments: segments.len(),
        fused_points: stats.fused,
        skipped_out_of_grid: stats.out_of_grid,
        skipped_invalid_depth: stats.invalid_depth,
    };
    if stats.out_of_grid > 0 {
        log::info!("{} back-projected points fell outside the grid", stats.out_of_grid);
    }
    let metadata = MapMetadata {
        provider_id: manifest.provider_id.clone(),
        provider_version: manifest.version.clone(),
        labels: stream.labels.clone(),
        ingest: cfg.clone(),
        summary,
    };
    let map = MultimodalMap::new(metadata, voxels, keyframes, areas, segments)
        .map_err(|e| IngestError::Format(e.to_string()))?;
    Ok((map, summary))
}
