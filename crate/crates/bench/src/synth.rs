//! Turns a [`Scene`] into an observation stream plus a fixture provider whose
//! embeddings are planted label vectors with controlled noise.
//!
//! Every label gets `sqrt(1 - c) * e_i + sqrt(c) * e_last` in its text space,
//! so distinct labels have cosine `c`. Observed embeddings (pixels, frames,
//! sound clips, descriptors) are the clean vector plus Gaussian noise of
//! standard deviation `sigma / sqrt(dim)` per component, renormalized.

use std::collections::HashMap;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use modalmap::ingest::audio::detect_segments;
use modalmap::ingest::{AudioTrack, Intrinsics, SegmentationConfig, Stream, StreamFrame};
use modalmap::provider::{
    normalize_f32, DenseFeatureFrame, EmbeddingSpace, EmbeddingVector, FixtureStore, Keypoint, KeypointSet, Modality,
    ProviderManifest, SpaceDecl,
};
use modalmap::localize::BACKGROUND_LABELS;

use crate::render::{landmarks, render, visible_landmarks, Landmark, View};
use crate::scene::{camera_pose, Scene};
use crate::BenchError;

pub const PROVIDER_ID: &str = "synthetic";
const TONE_AMPLITUDE: f64 = 0.3 * i16::MAX as f64;
/// Image tags at and above this value mark query photos.
const QUERY_TAG_BASE: u32 = 0x80_0000;

/// Everything needed to build and query a map of one scene.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub stream: Stream,
    pub store: FixtureStore,
    /// Query photos by file name.
    pub queries: HashMap<String, RgbImage>,
    pub intrinsics: Intrinsics,
}

/// Clean label vectors for one text space.
#[derive(Debug, Clone)]
struct Vocabulary {
    labels: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

impl Vocabulary {
    fn new(labels: Vec<String>, dim: usize, cosine: f64) -> Self {
        let (a, b) = ((1.0 - cosine).sqrt() as f32, cosine.sqrt() as f32);
        let vectors = (0..labels.len())
            .map(|i| {
                let mut v = vec![0.0f32; dim];
                v[i] = a;
                v[dim - 1] += b;
                normalize_f32(&v).expect("planted vector is nonzero")
            })
            .collect();
        Self { labels, vectors }
    }

    fn get(&self, label: &str) -> &[f32] {
        let i = self.labels.iter().position(|l| l == label).expect("label is in the vocabulary");
        &self.vectors[i]
    }
}

struct Noise {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl Noise {
    fn apply(&mut self, clean: &[f32]) -> Vec<f32> {
        if self.sigma == 0.0 {
            return clean.to_vec();
        }
        let s = self.sigma / (clean.len() as f64).sqrt();
        let noisy: Vec<f32> = clean
            .iter()
            .map(|&c| (c as f64 + s * self.rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        // a zero vector after noise has probability zero; fall back to clean
        normalize_f32(&noisy).unwrap_or_else(|_| clean.to_vec())
    }
}

pub fn manifest(scene: &Scene) -> ProviderManifest {
    let d = &scene.config.dims;
    ProviderManifest {
        provider_id: PROVIDER_ID.into(),
        version: "1".into(),
        modalities: Modality::ALL.to_vec(),
        spaces: vec![
            SpaceDecl {
                space: EmbeddingSpace::PixelText,
                dim: d.pixel_text,
            },
            SpaceDecl {
                space: EmbeddingSpace::FrameText,
                dim: d.frame_text,
            },
            SpaceDecl {
                space: EmbeddingSpace::AudioText,
                dim: d.audio_text,
            },
            SpaceDecl {
                space: EmbeddingSpace::Retrieval,
                dim: d.retrieval,
            },
            SpaceDecl {
                space: EmbeddingSpace::LocalFeature,
                dim: d.local_feature,
            },
        ],
        text_spaces: vec![EmbeddingSpace::PixelText, EmbeddingSpace::FrameText, EmbeddingSpace::AudioText],
        sample_rates: vec![scene.config.sample_rate],
        dense_stride: 1,
    }
}

fn vector(space: EmbeddingSpace, values: Vec<f32>) -> Result<EmbeddingVector, BenchError> {
    Ok(EmbeddingVector::normalized(space, values)?)
}

struct Observer<'a> {
    scene: &'a Scene,
    landmarks: Vec<Landmark>,
    pixel: Vocabulary,
    region: Vocabulary,
    noise: Noise,
}

impl Observer<'_> {
    fn dense(&mut self, view: &View) -> Result<DenseFeatureFrame, BenchError> {
        let k = &view.intrinsics;
        let dim = self.scene.config.dims.pixel_text;
        let mut data = Vec::with_capacity(view.surfaces.len() * dim);
        for s in &view.surfaces {
            let clean = self.pixel.get(s.label(self.scene));
            data.extend(self.noise.apply(clean));
        }
        Ok(DenseFeatureFrame::new(k.width, k.height, 1, dim, data)?)
    }

    fn global(&mut self, view: &View) -> Result<EmbeddingVector, BenchError> {
        let p = view.pose.position;
        let r = self.scene.region_of([p.x, p.y]);
        let clean = self.region.get(&self.scene.regions[r].label).to_vec();
        vector(EmbeddingSpace::FrameText, self.noise.apply(&clean))
    }

    fn features(&mut self, view: &View) -> Result<(EmbeddingVector, KeypointSet), BenchError> {
        let k = &view.intrinsics;
        let visible = visible_landmarks(view, &self.landmarks);
        let dr = self.scene.config.dims.retrieval;
        let mut sum = vec![0.0f32; dr];
        let mut kps = Vec::with_capacity(visible.len());
        let mut descs = Vec::with_capacity(visible.len() * self.scene.config.dims.local_feature);
        for &(i, u, v) in &visible {
            let l = &self.landmarks[i];
            for (s, x) in sum.iter_mut().zip(&l.signature) {
                *s += x;
            }
            kps.push(Keypoint {
                u: u as f32,
                v: v as f32,
                score: 1.0,
            });
            descs.extend(self.noise.apply(&l.descriptor));
        }
        if visible.is_empty() {
            sum[0] = 1.0;
        }
        let clean = normalize_f32(&sum)?;
        let retrieval = vector(EmbeddingSpace::Retrieval, self.noise.apply(&clean))?;
        let set = KeypointSet::new(k.width, k.height, self.scene.config.dims.local_feature, kps, descs)?;
        Ok((retrieval, set))
    }
}

/// Samples of the audio track: silence with one pure tone per sound event.
pub fn audio_track(scene: &Scene) -> AudioTrack {
    let rate = scene.config.sample_rate;
    let end = scene.trajectory.last().map_or(0.0, |s| s.timestamp);
    let n = (end * rate as f64).round() as usize;
    let mut samples = vec![0i16; n];
    for e in &scene.sounds {
        let a = ((e.start_s * rate as f64).round() as usize).min(n);
        let b = ((e.end_s * rate as f64).round() as usize).min(n);
        for (j, s) in samples[a..b].iter_mut().enumerate() {
            let t = j as f64 / rate as f64;
            *s = (TONE_AMPLITUDE * (2.0 * std::f64::consts::PI * e.frequency_hz * t + e.phase).sin()).round() as i16;
        }
    }
    AudioTrack {
        sample_rate: rate,
        samples,
    }
}

/// Renders the stream and records every embedding the mapping pipeline and
/// the goal programs will ask for. `noise_seed` drives only the observation
/// noise, so one scene can be observed at several noise levels.
pub fn synthesize(scene: &Scene, noise_seed: u64, segmentation: &SegmentationConfig) -> Result<Synthesis, BenchError> {
    let cfg = &scene.config;
    let k = cfg.camera.intrinsics();
    let mut store = FixtureStore::new(manifest(scene))?;

    let pixel_labels: Vec<String> = scene
        .object_labels()
        .into_iter()
        .chain(BACKGROUND_LABELS.iter().map(|s| s.to_string()))
        .collect();
    let pixel = Vocabulary::new(pixel_labels, cfg.dims.pixel_text, cfg.label_cosine);
    let region = Vocabulary::new(cfg.region_labels.clone(), cfg.dims.frame_text, cfg.label_cosine);
    let sound = Vocabulary::new(cfg.sound_labels.clone(), cfg.dims.audio_text, cfg.label_cosine);
    for (l, v) in pixel.labels.iter().zip(&pixel.vectors) {
        store.insert_text(l, vector(EmbeddingSpace::PixelText, v.clone())?)?;
    }
    for (l, v) in region.labels.iter().zip(&region.vectors) {
        store.insert_text(l, vector(EmbeddingSpace::FrameText, v.clone())?)?;
    }
    for (l, v) in sound.labels.iter().zip(&sound.vectors) {
        store.insert_text(l, vector(EmbeddingSpace::AudioText, v.clone())?)?;
    }

    let mut obs = Observer {
        scene,
        landmarks: landmarks(scene, scene.seed ^ 0x5eed_1a4d),
        pixel,
        region,
        noise: Noise {
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            sigma: cfg.sigma,
        },
    };

    let mut frames = Vec::with_capacity(scene.trajectory.len());
    for (i, sample) in scene.trajectory.iter().enumerate() {
        let view = render(scene, &scene.camera_pose(sample), &k);
        let image = view.image(i as u32);
        store.insert_image_dense(&image, obs.dense(&view)?)?;
        store.insert_image_global(&image, obs.global(&view)?)?;
        let (retrieval, keypoints) = obs.features(&view)?;
        store.insert_image_retrieval(&image, retrieval)?;
        store.insert_keypoints(&image, keypoints)?;
        frames.push(StreamFrame {
            index: i,
            timestamp: sample.timestamp,
            pose: view.pose,
            depth: view.depth_map(),
            image,
            intrinsics: k,
        });
    }

    let mut queries = HashMap::new();
    for (q, view) in scene.queries.iter().enumerate() {
        let pose = camera_pose(view.position, view.heading_deg, cfg.camera.pitch_deg);
        let rendered = render(scene, &pose, &k);
        let image = rendered.image(QUERY_TAG_BASE + q as u32);
        let (retrieval, keypoints) = obs.features(&rendered)?;
        store.insert_image_retrieval(&image, retrieval)?;
        store.insert_keypoints(&image, keypoints)?;
        queries.insert(view.name.clone(), image);
    }

    let track = audio_track(scene);
    let intervals = detect_segments(&track.samples, track.sample_rate, segmentation);
    if intervals.len() != scene.sounds.len() {
        return Err(BenchError::Synthesis(format!(
            "{} sound events produced {} detected segments",
            scene.sounds.len(),
            intervals.len()
        )));
    }
    let mut events: Vec<_> = scene.sounds.iter().collect();
    events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    for (iv, e) in intervals.iter().zip(events) {
        if iv.end_s < e.start_s || iv.start_s > e.end_s {
            return Err(BenchError::Synthesis(format!("segment {iv:?} misses the {} event", e.label)));
        }
        let range = iv.sample_range(track.sample_rate, segmentation, track.samples.len());
        let clean = sound.get(&e.label).to_vec();
        let v = vector(EmbeddingSpace::AudioText, obs.noise.apply(&clean))?;
        store.insert_audio(&track.samples[range], track.sample_rate, v)?;
    }

    let stream = Stream {
        frames,
        audio: Some(track),
        labels: scene.object_labels(),
    };
    Ok(Synthesis {
        stream,
        store,
        queries,
        intrinsics: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneConfig;
    use modalmap::provider::{cosine_similarity, EmbeddingProvider};

    #[test]
    fn planted_vectors_have_the_requested_cosine() {
        let v = Vocabulary::new(vec!["a".into(), "b".into(), "c".into()], 8, 0.1);
        for i in 0..3 {
            let n: f64 = v.vectors[i].iter().map(|&x| (x as f64).powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-6);
            for j in 0..i {
                let c: f64 = v.vectors[i].iter().zip(&v.vectors[j]).map(|(&a, &b)| a as f64 * b as f64).sum();
                assert!((c - 0.1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn noise_is_scaled_by_dimension() {
        let mut noise = Noise {
            rng: ChaCha8Rng::seed_from_u64(1),
            sigma: 0.3,
        };
        let mut clean = vec![0.0f32; 64];
        clean[0] = 1.0;
        let n = 2000;
        let mean_cos: f64 = (0..n).map(|_| noise.apply(&clean)[0] as f64).sum::<f64>() / n as f64;
        // E[cos] ~ 1 / sqrt(1 + sigma^2) for large dimensions
        assert!((mean_cos - 1.0 / (1.0f64 + 0.09).sqrt()).abs() < 0.01, "{mean_cos}");
    }

    #[test]
    fn sound_events_are_detected_one_to_one() {
        let scene = Scene::generate(&SceneConfig::default(), 2).unwrap();
        let track = audio_track(&scene);
        let seg = SegmentationConfig::default();
        let iv = detect_segments(&track.samples, track.sample_rate, &seg);
        assert_eq!(iv.len(), scene.sounds.len());
        let mut events: Vec<_> = scene.sounds.iter().collect();
        events.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for (i, e) in iv.iter().zip(events) {
            assert!((i.start_s - e.start_s).abs() <= seg.window_s);
            assert!((i.end_s - e.end_s).abs() <= seg.window_s);
        }
    }

    #[test]
    fn noiseless_fixtures_reproduce_planted_vectors() {
        let scene = Scene::generate(&SceneConfig::default(), 4).unwrap();
        let syn = synthesize(&scene, 0, &SegmentationConfig::default()).unwrap();
        let f = &syn.stream.frames[3];
        let dense = syn.store.embed_image_dense(&f.image).unwrap();
        let floor = syn.store.embed_text("floor", EmbeddingSpace::PixelText).unwrap();
        let hits = (0..f.image.height())
            .flat_map(|v| (0..f.image.width()).map(move |u| (u, v)))
            .filter(|&(u, v)| dense.at(u, v) == floor.values())
            .count();
        assert!(hits > 0);
        assert_eq!(syn.queries.len(), scene.queries.len());
        let g = syn.store.embed_image_global(&f.image).unwrap();
        let kitchen = syn.store.embed_text(&scene.regions[0].label, EmbeddingSpace::FrameText).unwrap();
        assert!((cosine_similarity(&g, &kitchen).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_seed_changes_only_embeddings() {
        let cfg = SceneConfig {
            sigma: 0.2,
            ..SceneConfig::default()
        };
        let scene = Scene::generate(&cfg, 4).unwrap();
        let seg = SegmentationConfig::default();
        let a = synthesize(&scene, 1, &seg).unwrap();
        let b = synthesize(&scene, 2, &seg).unwrap();
        assert_eq!(a.stream, b.stream);
        let img = &a.stream.frames[0].image;
        assert_ne!(
            a.store.embed_image_global(img).unwrap(),
            b.store.embed_image_global(img).unwrap()
        );
    }
}
