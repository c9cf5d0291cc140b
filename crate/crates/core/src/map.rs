//! The finalized multimodal map and its single-file binary format.
//!
//! All integers and floats are little-endian. Layout, in order:
//!
//! ```text
//! magic            4 bytes  "MMAP"
//! version          u32      MAP_FORMAT_VERSION
//! metadata         u32 length + UTF-8 JSON (MapMetadata)
//! grid             dims 3 x u32, resolution f64, origin 3 x f64
//! voxel table      dim u32, count u64, then per voxel:
//!                    x y z u32 (1-based), observations u32, dim x f32
//! keyframe table   count u32, then per keyframe:
//!                    frame_index u32, timestamp f64, pose
//!                    intrinsics: fx fy cx cy f64, width height u32
//!                    retrieval vector
//!                    keypoints: width height u32, dim u32, n u32,
//!                               n x (u v score f32), n*dim x f32
//!                    depth: width height u32, width*height x f32 meters
//! area table       count u32, then per frame:
//!                    frame_index u32, timestamp f64, pose, vector
//! audio table      count u32, then per segment:
//!                    start end f64 seconds, pose, vector
//! ```
//!
//! A `pose` is position 3 x f64 then quaternion x y z w as 4 x f64. A
//! `vector` is dim u32 then dim x f32. The embedding space of each vector is
//! implied by its table.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    AreaFrame, AudioSegment, BuildSummary, DepthMap, IngestConfig, IngestError, Intrinsics, KeyframeRecord,
    VoxelFeatureMap,
};
use crate::provider::{EmbeddingSpace, EmbeddingVector, Keypoint, KeypointSet, ProviderError};
use crate::spatial::{GridSpec, Pose, SpatialError, VoxelIndex};

pub const MAP_MAGIC: &[u8; 4] = b"MMAP";
pub const MAP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("not a map file")]
    BadMagic,
    #[error("unsupported map format version {0}")]
    Version(u32),
    #[error("corrupt map file: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub provider_id: String,
    pub provider_version: String,
    /// Object vocabulary for open-vocabulary labelling, without background labels.
    pub labels: Vec<String>,
    pub ingest: IngestConfig,
    pub summary: BuildSummary,
}

/// Voxel feature map plus keyframe, area-frame and audio-segment databases.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalMap {
    pub metadata: MapMetadata,
    pub voxels: VoxelFeatureMap,
    pub keyframes: Vec<KeyframeRecord>,
    pub areas: Vec<AreaFrame>,
    pub audio: Vec<AudioSegment>,
}

impl MultimodalMap {
    pub fn new(
        metadata: MapMetadata,
        voxels: VoxelFeatureMap,
        keyframes: Vec<KeyframeRecord>,
        areas: Vec<AreaFrame>,
        audio: Vec<AudioSegment>,
    ) -> Result<Self, MapError> {
        if metadata.ingest.grid != *voxels.spec() {
            return Err(MapError::Corrupt("metadata grid differs from voxel grid".into()));
        }
        Ok(Self {
            metadata,
            voxels,
            keyframes,
            areas,
            audio,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.voxels.spec()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_u32::<LE>(MAP_FORMAT_VERSION)?;
        let meta = serde_json::to_vec(&self.metadata).map_err(io::Error::other)?;
        w.write_u32::<LE>(meta.len() as u32)?;
        w.write_all(&meta)?;

        let g = self.grid();
        for d in g.dims() {
            w.write_u32::<LE>(d as u32)?;
        }
        w.write_f64::<LE>(g.resolution())?;
        for o in g.origin() {
            w.write_f64::<LE>(o)?;
        }

        w.write_u32::<LE>(self.voxels.dim() as u32)?;
        w.write_u64::<LE>(self.voxels.len() as u64)?;
        for (v, count, feature) in self.voxels.iter() {
            for c in v.as_array() {
                w.write_u32::<LE>(c as u32)?;
            }
            w.write_u32::<LE>(count)?;
            write_f32s(w, feature)?;
        }

        w.write_u32::<LE>(self.keyframes.len() as u32)?;
        for k in &self.keyframes {
            w.write_u32::<LE>(k.frame_index as u32)?;
            w.write_f64::<LE>(k.timestamp)?;
            write_pose(w, &k.pose)?;
            let i = &k.intrinsics;
            for x in [i.fx, i.fy, i.cx, i.cy] {
                w.write_f64::<LE>(x)?;
            }
            w.write_u32::<LE>(i.width)?;
            w.write_u32::<LE>(i.height)?;
            write_vector(w, &k.retrieval)?;
            let kp = &k.keypoints;
            w.write_u32::<LE>(kp.width())?;
            w.write_u32::<LE>(kp.height())?;
            w.write_u32::<LE>(kp.dim() as u32)?;
            w.write_u32::<LE>(kp.len() as u32)?;
            for p in kp.keypoints() {
                w.write_f32::<LE>(p.u)?;
                w.write_f32::<LE>(p.v)?;
                w.write_f32::<LE>(p.score)?;
            }
            write_f32s(w, kp.descriptors())?;
            w.write_u32::<LE>(k.depth.width())?;
            w.write_u32::<LE>(k.depth.height())?;
            write_f32s(w, k.depth.data())?;
        }

        w.write_u32::<LE>(self.areas.len() as u32)?;
        for a in &self.areas {
            w.write_u32::<LE>(a.frame_index as u32)?;
            w.write_f64::<LE>(a.timestamp)?;
            write_pose(w, &a.pose)?;
            write_vector(w, &a.embedding)?;
        }

        w.write_u32::<LE>(self.audio.len() as u32)?;
        for s in &self.audio {
            w.write_f64::<LE>(s.start_s)?;
            w.write_f64::<LE>(s.end_s)?;
            write_pose(w, &s.pose)?;
            write_vector(w, &s.embedding)?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut r = bytes;
        let map = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(MapError::Corrupt(format!("{} trailing bytes", r.len())));
        }
        Ok(map)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, MapError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAP_MAGIC {
            return Err(MapError::BadMagic);
        }
        let version = r.read_u32::<LE>()?;
        if version != MAP_FORMAT_VERSION {
            return Err(MapError::Version(version));
        }
        let meta_len = r.read_u32::<LE>()? as usize;
        let meta_bytes = read_exact_vec(r, meta_len)?;
        let metadata: MapMetadata =
            serde_json::from_slice(&meta_bytes).map_err(|e| MapError::Corrupt(format!("metadata: {e}")))?;

        let dims = [r.read_u32::<LE>()? as usize, r.read_u32::<LE>()? as usize, r.read_u32::<LE>()? as usize];
        let resolution = r.read_f64::<LE>()?;
        let origin = [r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?];
        let grid = GridSpec::new(dims, resolution, origin)?;

        let dim = r.read_u32::<LE>()? as usize;
        let count = r.read_u64::<LE>()?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let v = VoxelIndex::new(
                r.read_u32::<LE>()? as usize,
                r.read_u32::<LE>()? as usize,
                r.read_u32::<LE>()? as usize,
            );
            let c = r.read_u32::<LE>()?;
            entries.push((v, c, read_f32s(r, dim)?));
        }
        let voxels = VoxelFeatureMap::from_parts(grid, dim, entries)?;

        let n = r.read_u32::<LE>()?;
        let mut keyframes = Vec::new();
        for _ in 0..n {
            let frame_index = r.read_u32::<LE>()? as usize;
            let timestamp = r.read_f64::<LE>()?;
            let pose = read_pose(r)?;
            let (fx, fy, cx, cy) = (r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?);
            let intrinsics = Intrinsics::new(fx, fy, cx, cy, r.read_u32::<LE>()?, r.read_u32::<LE>()?)?;
            let retrieval = read_vector(r, EmbeddingSpace::Retrieval)?;
            let (kw, kh) = (r.read_u32::<LE>()?, r.read_u32::<LE>()?);
            let kdim = r.read_u32::<LE>()? as usize;
            let kn = r.read_u32::<LE>()? as usize;
            let mut kps = Vec::new();
            for _ in 0..kn {
                kps.push(Keypoint {
                    u: r.read_f32::<LE>()?,
                    v: r.read_f32::<LE>()?,
                    score: r.read_f32::<LE>()?,
                });
            }
            let descriptors = read_f32s(r, kn.checked_mul(kdim).ok_or_else(|| corrupt("keypoint table"))?)?;
            let keypoints = KeypointSet::new(kw, kh, kdim, kps, descriptors)?;
            let (dw, dh) = (r.read_u32::<LE>()?, r.read_u32::<LE>()?);
            let depth = DepthMap::new(dw, dh, read_f32s(r, dw as usize * dh as usize)?)?;
            keyframes.push(KeyframeRecord {
                frame_index,
                timestamp,
                pose,
                retrieval,
                keypoints,
                depth,
                intrinsics,
            });
        }

        let n = r.read_u32::<LE>()?;
        let mut areas = Vec::new();
        for _ in 0..n {
            areas.push(AreaFrame {
                frame_index: r.read_u32::<LE>()? as usize,
                timestamp: r.read_f64::<LE>()?,
                pose: read_pose(r)?,
                embedding: read_vector(r, EmbeddingSpace::FrameText)?,
            });
        }

        let n = r.read_u32::<LE>()?;
        let mut audio = Vec::new();
        for _ in 0..n {
            audio.push(AudioSegment {
                start_s: r.read_f64::<LE>()?,
                end_s: r.read_f64::<LE>()?,
                pose: read_pose(r)?,
                embedding: read_vector(r, EmbeddingSpace::AudioText)?,
            });
        }
        Self::new(metadata, voxels, keyframes, areas, audio)
    }

    pub fn save(&self, path: &Path) -> Result<(), MapError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MapError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn corrupt(what: &str) -> MapError {
    MapError::Corrupt(what.to_string())
}

/// Guards allocations against lengths that cannot fit in the input.
const MAX_TABLE_BYTES: usize = 1 << 31;

fn read_exact_vec<R: Read>(r: &mut R, len: usize) -> Result<Vec<u8>, MapError> {
    if len > MAX_TABLE_BYTES {
        return Err(corrupt("length field too large"));
    }
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(MapError::Io(io::ErrorKind::UnexpectedEof.into()));
    }
    Ok(buf)
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    for v in values {
        w.write_f32::<LE>(*v)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>, MapError> {
    let bytes = read_exact_vec(r, n.checked_mul(4).ok_or_else(|| corrupt("float array"))?)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_pose<W: Write>(w: &mut W, p: &Pose) -> io::Result<()> {
    for x in p.position_array().into_iter().chain(p.quat_xyzw()) {
        w.write_f64::<LE>(x)?;
    }
    Ok(())
}

fn read_pose<R: Read>(r: &mut R) -> Result<Pose, MapError> {
    let mut v = [0.0; 7];
    for x in &mut v {
        *x = r.read_f64::<LE>()?;
    }
    Ok(Pose::from_raw([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])?)
}

fn write_vector<W: Write>(w: &mut W, v: &EmbeddingVector) -> io::Result<()> {
    w.write_u32::<LE>(v.dim() as u32)?;
    write_f32s(w, v.values())
}

fn read_vector<R: Read>(r: &mut R, space: EmbeddingSpace) -> Result<EmbeddingVector, MapError> {
    let dim = r.read_u32::<LE>()? as usize;
    Ok(EmbeddingVector::from_unit(space, read_f32s(r, dim)?)?)
}
