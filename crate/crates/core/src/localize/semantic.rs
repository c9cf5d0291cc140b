//! Open-vocabulary object, area and sound localization by cosine similarity.

use crate::ingest::{AreaFrame, AudioSegment, VoxelFeatureMap};
use crate::provider::{EmbeddingProvider, EmbeddingSpace, EmbeddingVector};
use crate::spatial::VoxelIndex;

use super::{LocalizeError, ScoredPosition};

/// Occupied voxels assigned to the queried category.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectHits {
    pub category: String,
    pub voxels: Vec<VoxelIndex>,
}

/// User labels in order, then background labels not already present, then
/// `category` if it is in neither list.
pub fn label_set(category: &str, labels: &[String], background: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels.iter().chain(background) {
        if !out.contains(l) {
            out.push(l.clone());
        }
    }
    if !out.iter().any(|l| l == category) {
        out.push(category.to_string());
    }
    out
}

/// Index of the most similar label for every occupied voxel, in voxel-table
/// order. Ties go to the lower label index.
pub fn assign_labels(voxels: &VoxelFeatureMap, label_vectors: &[EmbeddingVector]) -> Vec<usize> {
    voxels
        .iter()
        .map(|(_, _, feature)| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (j, lv) in label_vectors.iter().enumerate() {
                let s: f64 = feature.iter().zip(lv.values()).map(|(a, b)| *a as f64 * *b as f64).sum();
                if s > best.1 {
                    best = (j, s);
                }
            }
            best.0
        })
        .collect()
}

fn embed(
    provider: &dyn EmbeddingProvider,
    text: &str,
    space: EmbeddingSpace,
    modality: &'static str,
) -> Result<EmbeddingVector, LocalizeError> {
    provider
        .embed_text(text, space)
        .map_err(|source| LocalizeError::ModalityUnavailable { modality, source })
}

/// Voxels whose best label over `label_set(category, labels, background)` is
/// `category`. An absent category yields no hits.
pub fn localize_object(
    voxels: &VoxelFeatureMap,
    provider: &dyn EmbeddingProvider,
    category: &str,
    labels: &[String],
    background: &[String],
) -> Result<ObjectHits, LocalizeError> {
    let set = label_set(category, labels, background);
    let target = set.iter().position(|l| l == category).expect("label_set contains the category");
    let vectors = set
        .iter()
        .map(|l| embed(provider, l, EmbeddingSpace::PixelText, "object"))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(v) = vectors.iter().find(|v| v.dim() != voxels.dim()) {
        return Err(LocalizeError::ModalityUnavailable {
            modality: "object",
            source: crate::provider::ProviderError::DimensionMismatch {
                expected: voxels.dim(),
                got: v.dim(),
            },
        });
    }
    let assigned = assign_labels(voxels, &vectors);
    let hits = assigned
        .iter()
        .enumerate()
        .filter(|(_, a)| **a == target)
        .map(|(i, _)| voxels.voxel(i))
        .collect();
    Ok(ObjectHits {
        category: category.to_string(),
        voxels: hits,
    })
}

/// Rescales to `[0, 1]` with the minimum at 0 and the maximum at 1. When all
/// values are equal (including a single value) every score is 1.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![1.0; raw.len()];
    }
    raw.iter().map(|r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

fn score_records<'a>(
    query: &EmbeddingVector,
    records: impl Iterator<Item = ([f64; 3], &'a EmbeddingVector)>,
    modality: &'static str,
) -> Result<Vec<ScoredPosition>, LocalizeError> {
    let mut positions = Vec::new();
    let mut raw = Vec::new();
    for (p, v) in records {
        let s = crate::provider::cosine_similarity(query, v)
            .map_err(|source| LocalizeError::ModalityUnavailable { modality, source })?;
        positions.push(p);
        raw.push(s);
    }
    Ok(positions
        .into_iter()
        .zip(min_max_normalize(&raw))
        .map(|(position, score)| ScoredPosition { position, score })
        .collect())
}

/// Area frames scored against a textual concept.
pub fn localize_area(
    areas: &[AreaFrame],
    provider: &dyn EmbeddingProvider,
    concept: &str,
) -> Result<Vec<ScoredPosition>, LocalizeError> {
    if areas.is_empty() {
        return Err(LocalizeError::EmptyDatabase("area"));
    }
    let q = embed(provider, concept, EmbeddingSpace::FrameText, "area")?;
    score_records(&q, areas.iter().map(|a| (a.pose.position_array(), &a.embedding)), "area")
}

/// Audio segments scored against a sound description.
pub fn localize_sound(
    segments: &[AudioSegment],
    provider: &dyn EmbeddingProvider,
    description: &str,
) -> Result<Vec<ScoredPosition>, LocalizeError> {
    if segments.is_empty() {
        return Err(LocalizeError::EmptyDatabase("audio"));
    }
    let q = embed(provider, description, EmbeddingSpace::AudioText, "sound")?;
    score_records(&q, segments.iter().map(|s| (s.pose.position_array(), &s.embedding)), "sound")
}
