//! Visual localization of a query image against the keyframe database:
//! global retrieval, keypoint matching, then PnP against keyframe geometry.

use image::RgbImage;
use nalgebra::{Point2, Point3};

use crate::ingest::{back_project_pixel, Intrinsics, KeyframeRecord};
use crate::provider::{cosine_similarity, EmbeddingProvider};
use crate::spatial::Pose;

use super::pnp::{solve_pnp_ransac, MIN_CORRESPONDENCES};
use super::{match_keypoints, LocalizeConfig, LocalizeError};

/// Accepted camera pose for a query image.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFix {
    /// Camera-to-world pose of the query camera.
    pub pose: Pose,
    pub inliers: usize,
    pub rms_px: f64,
    /// Index into the keyframe slice of the keyframe that produced the fix.
    pub keyframe: usize,
}

/// World points and query pixels for every match whose reference keypoint
/// has valid depth.
fn correspondences(
    query_kps: &crate::provider::KeypointSet,
    kf: &KeyframeRecord,
    pairs: &[(usize, usize)],
) -> (Vec<Point3<f64>>, Vec<Point2<f64>>) {
    let mut world = Vec::with_capacity(pairs.len());
    let mut pixels = Vec::with_capacity(pairs.len());
    for &(qi, ri) in pairs {
        let r = kf.keypoints.keypoints()[ri];
        let (u, v) = (r.u as f64, r.v as f64);
        let Some(d) = kf.depth.sample_nearest(u, v) else {
            continue;
        };
        let Ok(p) = back_project_pixel(&kf.pose, &kf.intrinsics, d as f64, u, v) else {
            continue;
        };
        let q = query_kps.keypoints()[qi];
        world.push(p);
        pixels.push(Point2::new(q.u as f64, q.v as f64));
    }
    (world, pixels)
}

/// Pose of the camera that took `image`. The query camera uses
/// `query_intrinsics` when given and otherwise the intrinsics of each
/// candidate keyframe. Among the top retrieval candidates, the one with the
/// most PnP inliers wins (ties: lower RMS, then higher retrieval rank).
pub fn localize_image(
    keyframes: &[KeyframeRecord],
    provider: &dyn EmbeddingProvider,
    image: &RgbImage,
    query_intrinsics: Option<&Intrinsics>,
    cfg: &LocalizeConfig,
) -> Result<VisualFix, LocalizeError> {
    if keyframes.is_empty() {
        return Err(LocalizeError::EmptyDatabase("keyframe"));
    }
    let unavailable = |source| LocalizeError::ModalityUnavailable { modality: "image", source };
    let global = provider.embed_image_retrieval(image).map_err(unavailable)?;
    let query_kps = provider.extract_keypoints(image).map_err(unavailable)?;

    let mut ranked = Vec::with_capacity(keyframes.len());
    for (i, kf) in keyframes.iter().enumerate() {
        ranked.push((i, cosine_similarity(&global, &kf.retrieval).map_err(unavailable)?));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.retrieval_top_k.max(1));

    let needed = cfg.min_inliers.max(MIN_CORRESPONDENCES);
    let mut best: Option<VisualFix> = None;
    let mut most_matches = 0;
    for &(i, _) in &ranked {
        let kf = &keyframes[i];
        let pairs = match_keypoints(&query_kps, &kf.keypoints, cfg.ratio_test);
        let (world, pixels) = correspondences(&query_kps, kf, &pairs);
        most_matches = most_matches.max(world.len());
        if world.len() < needed {
            continue;
        }
        let k = query_intrinsics.unwrap_or(&kf.intrinsics);
        let sol = match solve_pnp_ransac(&world, &pixels, k, &cfg.pnp) {
            Ok(s) => s,
            Err(e) => {
                log::debug!("keyframe {i}: {e}");
                continue;
            }
        };
        if sol.inlier_count < cfg.min_inliers {
            continue;
        }
        let better = best
            .as_ref()
            .is_none_or(|b| sol.inlier_count > b.inliers || (sol.inlier_count == b.inliers && sol.rms_px < b.rms_px));
        if better {
            best = Some(VisualFix {
                pose: sol.pose,
                inliers: sol.inlier_count,
                rms_px: sol.rms_px,
                keyframe: i,
            });
        }
    }
    best.ok_or_else(|| {
        LocalizeError::LocalizationFailed(format!(
            "no keyframe among the top {} reached {} inliers (best had {most_matches} usable matches)",
            ranked.len(),
            cfg.min_inliers
        ))
    })
}
