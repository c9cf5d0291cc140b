//! Localizers: turn a text, sound or image query into raw evidence for the
//! heatmap engine (object voxels, scored positions or a camera pose).

pub mod matching;
pub mod pnp;
pub mod semantic;
pub mod visual;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::ProviderError;

pub use matching::match_keypoints;
pub use pnp::{solve_pnp_ransac, PnpConfig, PnpSolution};
pub use semantic::{localize_area, localize_object, localize_sound, min_max_normalize, ObjectHits};
pub use visual::{localize_image, VisualFix};

/// Labels always added to the open vocabulary so that walls and floor do not
/// get assigned to the nearest object label.
pub const BACKGROUND_LABELS: [&str; 4] = ["other", "floor", "wall", "ceiling"];

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("{modality} queries are unavailable: {source}")]
    ModalityUnavailable {
        modality: &'static str,
        #[source]
        source: ProviderError,
    },
    #[error("the {0} database is empty")]
    EmptyDatabase(&'static str),
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("localization failed: {0}")]
    LocalizationFailed(String),
}

/// A world position with a normalized score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPosition {
    pub position: [f64; 3],
    pub score: f64,
}

/// Tunables for every localizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizeConfig {
    pub background_labels: Vec<String>,
    pub retrieval_top_k: usize,
    pub ratio_test: f64,
    /// Inliers a keyframe match needs before its pose is accepted.
    pub min_inliers: usize,
    pub pnp: PnpConfig,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            background_labels: BACKGROUND_LABELS.iter().map(|s| s.to_string()).collect(),
            retrieval_top_k: 5,
            ratio_test: 0.8,
            min_inliers: 12,
            pnp: PnpConfig::default(),
        }
    }
}
