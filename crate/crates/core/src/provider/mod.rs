//! Model-agnostic access to embedding models.
//!
//! Every pre-trained model sits behind [`EmbeddingProvider`]. Two
//! implementations ship with the crate: [`FixtureStore`], a pure lookup table
//! keyed by content hash (used offline and in tests), and [`RemoteProvider`],
//! a client for the length-prefixed binary wire protocol described in
//! `docs/wire-protocol.md`.
//!
//! Vectors carry the [`EmbeddingSpace`] they live in. Text is always embedded
//! *into* a specific space (the text tower paired with pixel features differs
//! from the one paired with audio), and similarity across spaces is rejected.

mod fixture;
pub mod wire;

use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use fixture::FixtureStore;
pub use wire::{LoopbackServer, RemoteProvider};

/// Drift above which a received vector triggers a warning before being
/// re-normalized.
pub const NORM_DRIFT_WARN: f64 = 1e-3;
/// Accepted deviation from unit norm for stored vectors.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider does not support {0}")]
    ModalityUnsupported(Modality),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported sample rate {0} Hz")]
    UnsupportedSampleRate(u32),
    #[error("no fixture for {modality} content {key}")]
    MissingFixture { modality: Modality, key: String },
    #[error("cannot compare vectors from different spaces ({0} vs {1})")]
    CrossSpace(EmbeddingSpace, EmbeddingSpace),
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("empty input")]
    EmptyInput,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What kind of input a request carries / what a provider can embed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Text,
    ImageGlobal,
    PixelDense,
    Audio,
    ImageRetrieval,
    Keypoints,
}

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Text,
        Modality::ImageGlobal,
        Modality::PixelDense,
        Modality::Audio,
        Modality::ImageRetrieval,
        Modality::Keypoints,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::ImageGlobal => "image-global",
            Modality::PixelDense => "pixel-dense",
            Modality::Audio => "audio",
            Modality::ImageRetrieval => "image-retrieval",
            Modality::Keypoints => "keypoints",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The vector space an embedding lives in. Only vectors from the same space
/// may be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSpace {
    /// Per-pixel open-vocabulary segmentation features and their text tower.
    PixelText,
    /// Whole-frame visual-language features and their text tower.
    FrameText,
    /// Audio-language features and their text tower.
    AudioText,
    /// Global place-recognition descriptors.
    Retrieval,
    /// Local keypoint descriptors.
    LocalFeature,
}

impl EmbeddingSpace {
    pub const ALL: [EmbeddingSpace; 5] = [
        EmbeddingSpace::PixelText,
        EmbeddingSpace::FrameText,
        EmbeddingSpace::AudioText,
        EmbeddingSpace::Retrieval,
        EmbeddingSpace::LocalFeature,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingSpace::PixelText => "pixel-text",
            EmbeddingSpace::FrameText => "frame-text",
            EmbeddingSpace::AudioText => "audio-text",
            EmbeddingSpace::Retrieval => "retrieval",
            EmbeddingSpace::LocalFeature => "local-feature",
        }
    }

    pub fn tag(&self) -> u8 {
        match self {
            EmbeddingSpace::PixelText => 1,
            EmbeddingSpace::FrameText => 2,
            EmbeddingSpace::AudioText => 3,
            EmbeddingSpace::Retrieval => 4,
            EmbeddingSpace::LocalFeature => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.tag() == tag)
    }

    /// Space produced by a non-text modality.
    pub fn of_modality(m: Modality) -> Option<Self> {
        match m {
            Modality::Text => None,
            Modality::ImageGlobal => Some(EmbeddingSpace::FrameText),
            Modality::PixelDense => Some(EmbeddingSpace::PixelText),
            Modality::Audio => Some(EmbeddingSpace::AudioText),
            Modality::ImageRetrieval => Some(EmbeddingSpace::Retrieval),
            Modality::Keypoints => Some(EmbeddingSpace::LocalFeature),
        }
    }

    /// Whether text can be embedded into this space.
    pub fn accepts_text(&self) -> bool {
        matches!(
            self,
            EmbeddingSpace::PixelText | EmbeddingSpace::FrameText | EmbeddingSpace::AudioText
        )
    }
}

impl fmt::Display for EmbeddingSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A unit-norm embedding tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    space: EmbeddingSpace,
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length.
    pub fn normalized(space: EmbeddingSpace, values: Vec<f32>) -> Result<Self, ProviderError> {
        let values = normalize_f32(&values)?;
        Ok(Self { space, values })
    }

    /// Accepts `values` as-is if already unit length within [`UNIT_NORM_TOL`].
    pub fn from_unit(space: EmbeddingSpace, values: Vec<f32>) -> Result<Self, ProviderError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(ProviderError::InvalidVector(format!("norm {norm} is not 1")));
        }
        Ok(Self { space, values })
    }

    /// Re-normalizes a vector received from an external provider, warning when
    /// it drifted noticeably from unit length.
    pub fn from_wire(space: EmbeddingSpace, values: Vec<f32>) -> Result<Self, ProviderError> {
        let values = renormalize(values, || format!("{space} vector"))?;
        Ok(Self { space, values })
    }

    pub fn space(&self) -> EmbeddingSpace {
        self.space
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub(crate) fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Leaves vectors already within [`UNIT_NORM_TOL`] of unit length untouched
/// so well-behaved providers round-trip bit-exactly.
fn renormalize(values: Vec<f32>, what: impl Fn() -> String) -> Result<Vec<f32>, ProviderError> {
    if values.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let norm = l2_norm(&values);
    if !norm.is_finite() {
        return Err(ProviderError::InvalidVector(format!("{} is not finite", what())));
    }
    if (norm - 1.0).abs() <= UNIT_NORM_TOL {
        return Ok(values);
    }
    if (norm - 1.0).abs() > NORM_DRIFT_WARN {
        log::warn!("{} arrived with norm {norm:.6}; re-normalizing", what());
    }
    normalize_f32(&values)
}

/// Scales to unit length, rejecting empty, non-finite and zero vectors.
pub fn normalize_f32(values: &[f32]) -> Result<Vec<f32>, ProviderError> {
    if values.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ProviderError::InvalidVector("non-finite component".into()));
    }
    let norm = l2_norm(values);
    if norm == 0.0 {
        return Err(ProviderError::InvalidVector("zero vector".into()));
    }
    Ok(values.iter().map(|&v| (v as f64 / norm) as f32).collect())
}

/// Cosine similarity of two vectors from the same space, computed in f64.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ProviderError> {
    if a.space != b.space {
        return Err(ProviderError::CrossSpace(a.space, b.space));
    }
    cosine_slices(&a.values, &b.values)
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, ProviderError> {
    if a.len() != b.len() {
        return Err(ProviderError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(ProviderError::InvalidVector("zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-pixel features sampled every `stride` pixels. Lookups upsample by
/// nearest neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureFrame {
    width: u32,
    height: u32,
    stride: u32,
    dim: usize,
    data: Vec<f32>,
}

impl DenseFeatureFrame {
    /// Validates the layout and that every cell vector is unit length.
    pub fn new(width: u32, height: u32, stride: u32, dim: usize, data: Vec<f32>) -> Result<Self, ProviderError> {
        let frame = Self::unchecked(width, height, stride, dim, data)?;
        for (i, cell) in frame.data.chunks_exact(dim).enumerate() {
            let n = l2_norm(cell);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(ProviderError::InvalidVector(format!("dense cell {i} has norm {n}")));
            }
        }
        Ok(frame)
    }

    /// Validates the layout and re-normalizes every cell.
    pub fn from_wire(width: u32, height: u32, stride: u32, dim: usize, data: Vec<f32>) -> Result<Self, ProviderError> {
        let mut frame = Self::unchecked(width, height, stride, dim, data)?;
        for (i, cell) in frame.data.chunks_exact_mut(dim).enumerate() {
            let unit = renormalize(cell.to_vec(), || format!("dense cell {i}"))?;
            cell.copy_from_slice(&unit);
        }
        Ok(frame)
    }

    fn unchecked(width: u32, height: u32, stride: u32, dim: usize, data: Vec<f32>) -> Result<Self, ProviderError> {
        if width == 0 || height == 0 || stride == 0 || dim == 0 {
            return Err(ProviderError::InvalidVector("dense frame has a zero dimension".into()));
        }
        let cells = (width.div_ceil(stride) * height.div_ceil(stride)) as usize;
        if data.len() != cells * dim {
            return Err(ProviderError::DimensionMismatch {
                expected: cells * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            stride,
            dim,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_size(&self) -> (u32, u32) {
        (self.width.div_ceil(self.stride), self.height.div_ceil(self.stride))
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature at pixel `(u, v)`.
    pub fn at(&self, u: u32, v: u32) -> &[f32] {
        let (gw, _) = self.grid_size();
        let cell = ((v / self.stride) * gw + u / self.stride) as usize;
        &self.data[cell * self.dim..(cell + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: f32,
    pub v: f32,
    pub score: f32,
}

/// Detected keypoints with one unit-norm local descriptor each.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    width: u32,
    height: u32,
    dim: usize,
    keypoints: Vec<Keypoint>,
    descriptors: Vec<f32>,
}

impl KeypointSet {
    pub fn new(
        width: u32,
        height: u32,
        dim: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<f32>,
    ) -> Result<Self, ProviderError> {
        let set = Self::unchecked(width, height, dim, keypoints, descriptors)?;
        for (i, d) in set.descriptors.chunks_exact(dim.max(1)).enumerate() {
            let n = l2_norm(d);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(ProviderError::InvalidVector(format!("descriptor {i} has norm {n}")));
            }
        }
        Ok(set)
    }

    pub fn from_wire(
        width: u32,
        height: u32,
        dim: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<f32>,
    ) -> Result<Self, ProviderError> {
        let mut set = Self::unchecked(width, height, dim, keypoints, descriptors)?;
        for (i, d) in set.descriptors.chunks_exact_mut(dim).enumerate() {
            let unit = renormalize(d.to_vec(), || format!("descriptor {i}"))?;
            d.copy_from_slice(&unit);
        }
        Ok(set)
    }

    fn unchecked(
        width: u32,
        height: u32,
        dim: usize,
        keypoints: Vec<Keypoint>,
        descriptors: Vec<f32>,
    ) -> Result<Self, ProviderError> {
        if dim == 0 {
            return Err(ProviderError::InvalidVector("descriptor dimension is zero".into()));
        }
        if descriptors.len() != keypoints.len() * dim {
            return Err(ProviderError::DimensionMismatch {
                expected: keypoints.len() * dim,
                got: descriptors.len(),
            });
        }
        for k in &keypoints {
            let inside = k.u >= 0.0 && k.v >= 0.0 && k.u <= (width as f32 - 1.0) && k.v <= (height as f32 - 1.0);
            if !inside {
                return Err(ProviderError::InvalidVector(format!(
                    "keypoint ({}, {}) outside {width}x{height} image",
                    k.u, k.v
                )));
            }
        }
        Ok(Self {
            width,
            height,
            dim,
            keypoints,
            descriptors,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn descriptors(&self) -> &[f32] {
        &self.descriptors
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceDecl {
    pub space: EmbeddingSpace,
    pub dim: usize,
}

/// What a provider can do and with which dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderManifest {
    pub provider_id: String,
    pub version: String,
    pub modalities: Vec<Modality>,
    pub spaces: Vec<SpaceDecl>,
    /// Spaces the text tower can embed into.
    pub text_spaces: Vec<EmbeddingSpace>,
    pub sample_rates: Vec<u32>,
    pub dense_stride: u32,
}

impl ProviderManifest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.modalities.is_empty() {
            return Err(ProviderError::Manifest("no modalities declared".into()));
        }
        if let Some(s) = self.spaces.iter().find(|s| s.dim == 0) {
            return Err(ProviderError::Manifest(format!("space {} has dimension 0", s.space)));
        }
        for m in &self.modalities {
            if let Some(space) = EmbeddingSpace::of_modality(*m) {
                if self.dim_of(space).is_none() {
                    return Err(ProviderError::Manifest(format!("modality {m} needs a {space} dimension")));
                }
            }
        }
        for s in &self.text_spaces {
            if !s.accepts_text() || self.dim_of(*s).is_none() {
                return Err(ProviderError::Manifest(format!("text cannot be paired with {s}")));
            }
        }
        if self.modalities.contains(&Modality::Text) && self.text_spaces.is_empty() {
            return Err(ProviderError::Manifest("text modality without paired spaces".into()));
        }
        if self.modalities.contains(&Modality::Audio) && self.sample_rates.is_empty() {
            return Err(ProviderError::Manifest("audio modality without sample rates".into()));
        }
        if self.modalities.contains(&Modality::PixelDense) && self.dense_stride == 0 {
            return Err(ProviderError::Manifest("dense stride must be positive".into()));
        }
        Ok(())
    }

    pub fn dim_of(&self, space: EmbeddingSpace) -> Option<usize> {
        self.spaces.iter().find(|s| s.space == space).map(|s| s.dim)
    }

    pub fn supports(&self, m: Modality) -> bool {
        self.modalities.contains(&m)
    }

    pub fn require(&self, m: Modality) -> Result<(), ProviderError> {
        if self.supports(m) {
            Ok(())
        } else {
            Err(ProviderError::ModalityUnsupported(m))
        }
    }

    /// Checks a text request targets a paired space.
    pub fn require_text_space(&self, space: EmbeddingSpace) -> Result<usize, ProviderError> {
        self.require(Modality::Text)?;
        if !self.text_spaces.contains(&space) {
            return Err(ProviderError::ModalityUnsupported(Modality::Text));
        }
        self.dim_of(space).ok_or(ProviderError::ModalityUnsupported(Modality::Text))
    }

    pub fn check_dim(&self, v: &EmbeddingVector) -> Result<(), ProviderError> {
        match self.dim_of(v.space()) {
            Some(d) if d == v.dim() => Ok(()),
            Some(d) => Err(ProviderError::DimensionMismatch { expected: d, got: v.dim() }),
            None => Err(ProviderError::Manifest(format!("space {} not declared", v.space()))),
        }
    }
}

/// Source of every learned feature used to build and query maps.
pub trait EmbeddingProvider: Send + Sync {
    fn manifest(&self) -> &ProviderManifest;

    /// Embeds `query` with the text tower paired with `space`.
    fn embed_text(&self, query: &str, space: EmbeddingSpace) -> Result<EmbeddingVector, ProviderError>;

    fn embed_audio(&self, samples: &[i16], sample_rate: u32) -> Result<EmbeddingVector, ProviderError>;

    fn embed_image_global(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError>;

    fn embed_image_dense(&self, image: &RgbImage) -> Result<DenseFeatureFrame, ProviderError>;

    fn extract_keypoints(&self, image: &RgbImage) -> Result<KeypointSet, ProviderError>;

    fn embed_image_retrieval(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError>;
}

/// Content keys used by the fixture store and by loopback servers.
pub mod content_key {
    use super::*;

    fn finish(h: Sha256) -> String {
        hex::encode(h.finalize())
    }

    pub fn text(query: &str, space: EmbeddingSpace) -> String {
        let mut h = Sha256::new();
        h.update(b"text\0");
        h.update(space.name().as_bytes());
        h.update(b"\0");
        h.update(query.as_bytes());
        finish(h)
    }

    pub fn image(image: &RgbImage) -> String {
        let mut h = Sha256::new();
        h.update(b"image\0");
        h.update(image.width().to_le_bytes());
        h.update(image.height().to_le_bytes());
        h.update(image.as_raw());
        finish(h)
    }

    pub fn audio(samples: &[i16], sample_rate: u32) -> String {
        let mut h = Sha256::new();
        h.update(b"audio\0");
        h.update(sample_rate.to_le_bytes());
        for s in samples {
            h.update(s.to_le_bytes());
        }
        finish(h)
    }
}
