//! Keyframe and area-frame databases.

use rayon::prelude::*;

use crate::provider::{EmbeddingProvider, EmbeddingVector, KeypointSet};
use crate::spatial::Pose;

use super::camera::{DepthMap, Intrinsics};
use super::{IngestError, StreamFrame};

/// A posed reference image for visual localization.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeRecord {
    pub frame_index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub retrieval: EmbeddingVector,
    pub keypoints: KeypointSet,
    pub depth: DepthMap,
    pub intrinsics: Intrinsics,
}

/// Whole-frame visual-language embedding anchored at the camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaFrame {
    pub frame_index: usize,
    pub timestamp: f64,
    pub pose: Pose,
    pub embedding: EmbeddingVector,
}

fn selected(frames: &[StreamFrame], stride: usize) -> impl IndexedParallelIterator<Item = &StreamFrame> {
    frames.par_iter().step_by(stride.max(1))
}

/// One record for every `stride`-th frame, starting with the first.
pub fn build_keyframe_db(
    frames: &[StreamFrame],
    provider: &dyn EmbeddingProvider,
    stride: usize,
) -> Result<Vec<KeyframeRecord>, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    selected(frames, stride)
        .map(|f| {
            Ok(KeyframeRecord {
                frame_index: f.index,
                timestamp: f.timestamp,
                pose: f.pose,
                retrieval: provider.embed_image_retrieval(&f.image)?,
                keypoints: provider.extract_keypoints(&f.image)?,
                depth: f.depth.clone(),
                intrinsics: f.intrinsics,
            })
        })
        .collect()
}

pub fn build_area_db(
    frames: &[StreamFrame],
    provider: &dyn EmbeddingProvider,
    stride: usize,
) -> Result<Vec<AreaFrame>, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::EmptyStream);
    }
    selected(frames, stride)
        .map(|f| {
            Ok(AreaFrame {
                frame_index: f.index,
                timestamp: f.timestamp,
                pose: f.pose,
                embedding: provider.embed_image_global(&f.image)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::FixtureStore;
    use crate::provider::{EmbeddingSpace, Modality, ProviderManifest, SpaceDecl};
    use image::RgbImage;

    fn setup(n: usize) -> (Vec<StreamFrame>, FixtureStore) {
        let manifest = ProviderManifest {
            provider_id: "t".into(),
            version: "1".into(),
            modalities: vec![Modality::ImageGlobal],
            spaces: vec![SpaceDecl {
                space: EmbeddingSpace::FrameText,
                dim: 2,
            }],
            text_spaces: vec![],
            sample_rates: vec![],
            dense_stride: 1,
        };
        let mut store = FixtureStore::new(manifest).unwrap();
        let k = Intrinsics::new(2.0, 2.0, 1.0, 1.0, 2, 2).unwrap();
        let frames = (0..n)
            .map(|i| {
                let image = RgbImage::from_pixel(2, 2, image::Rgb([i as u8, 0, 0]));
                let a = i as f32;
                let v = EmbeddingVector::normalized(EmbeddingSpace::FrameText, vec![1.0, a]).unwrap();
                store.insert_image_global(&image, v).unwrap();
                StreamFrame {
                    index: i,
                    timestamp: i as f64 * 0.5,
                    pose: Pose::translation([i as f64, 0.0, 0.0]),
                    image,
                    depth: DepthMap::new(2, 2, vec![1.0; 4]).unwrap(),
                    intrinsics: k,
                }
            })
            .collect();
        (frames, store)
    }

    #[test]
    fn stride_one_keeps_every_frame() {
        let (frames, store) = setup(7);
        assert_eq!(build_area_db(&frames, &store, 1).unwrap().len(), 7);
    }

    #[test]
    fn stride_five_of_twelve() {
        let (frames, store) = setup(12);
        let db = build_area_db(&frames, &store, 5).unwrap();
        let picked: Vec<_> = db.iter().map(|r| r.frame_index).collect();
        assert_eq!(picked, vec![0, 5, 10]);
        for r in &db {
            assert_eq!(r.pose, frames[r.frame_index].pose);
            assert_eq!(r.timestamp, frames[r.frame_index].timestamp);
        }
    }

    #[test]
    fn missing_fixture_aborts() {
        let (mut frames, store) = setup(3);
        frames[1].image = RgbImage::new(2, 2);
        frames[1].image.put_pixel(0, 0, image::Rgb([9, 9, 9]));
        assert!(matches!(build_area_db(&frames, &store, 1), Err(IngestError::Provider(_))));
    }
}
