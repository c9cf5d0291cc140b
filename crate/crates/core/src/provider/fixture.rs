//! Offline provider backed by recorded outputs.
//!
//! On disk a fixture store is a directory:
//!
//! ```text
//! manifest.json            ProviderManifest as JSON
//! <modality>/<key>.bin     one wire-protocol payload per recorded input
//! ```
//!
//! `<key>` is the hex SHA-256 content key from [`super::content_key`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;

use super::wire::Payload;
use super::{
    content_key, DenseFeatureFrame, EmbeddingProvider, EmbeddingSpace, EmbeddingVector, KeypointSet, Modality,
    ProviderError, ProviderManifest,
};

#[derive(Debug, Clone)]
pub struct FixtureStore {
    manifest: ProviderManifest,
    entries: BTreeMap<(Modality, String), Payload>,
}

impl FixtureStore {
    pub fn new(manifest: ProviderManifest) -> Result<Self, ProviderError> {
        manifest.validate()?;
        Ok(Self {
            manifest,
            entries: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_vector(&self, v: &EmbeddingVector, expected: EmbeddingSpace) -> Result<(), ProviderError> {
        if v.space() != expected {
            return Err(ProviderError::CrossSpace(expected, v.space()));
        }
        self.manifest.check_dim(v)
    }

    pub fn insert_text(&mut self, query: &str, vector: EmbeddingVector) -> Result<(), ProviderError> {
        self.manifest.require_text_space(vector.space())?;
        self.manifest.check_dim(&vector)?;
        let key = content_key::text(query, vector.space());
        self.entries.insert((Modality::Text, key), Payload::Vector(vector));
        Ok(())
    }

    pub fn insert_audio(&mut self, samples: &[i16], sample_rate: u32, vector: EmbeddingVector) -> Result<(), ProviderError> {
        self.check_vector(&vector, EmbeddingSpace::AudioText)?;
        let key = content_key::audio(samples, sample_rate);
        self.entries.insert((Modality::Audio, key), Payload::Vector(vector));
        Ok(())
    }

    pub fn insert_image_global(&mut self, image: &RgbImage, vector: EmbeddingVector) -> Result<(), ProviderError> {
        self.check_vector(&vector, EmbeddingSpace::FrameText)?;
        self.entries
            .insert((Modality::ImageGlobal, content_key::image(image)), Payload::Vector(vector));
        Ok(())
    }

    pub fn insert_image_retrieval(&mut self, image: &RgbImage, vector: EmbeddingVector) -> Result<(), ProviderError> {
        self.check_vector(&vector, EmbeddingSpace::Retrieval)?;
        self.entries
            .insert((Modality::ImageRetrieval, content_key::image(image)), Payload::Vector(vector));
        Ok(())
    }

    pub fn insert_image_dense(&mut self, image: &RgbImage, frame: DenseFeatureFrame) -> Result<(), ProviderError> {
        let expected = self.manifest.dim_of(EmbeddingSpace::PixelText).unwrap_or(0);
        if frame.dim() != expected {
            return Err(ProviderError::DimensionMismatch { expected, got: frame.dim() });
        }
        if (frame.width(), frame.height()) != image.dimensions() {
            return Err(ProviderError::InvalidVector("dense frame size differs from image".into()));
        }
        self.entries
            .insert((Modality::PixelDense, content_key::image(image)), Payload::Dense(frame));
        Ok(())
    }

    pub fn insert_keypoints(&mut self, image: &RgbImage, set: KeypointSet) -> Result<(), ProviderError> {
        let expected = self.manifest.dim_of(EmbeddingSpace::LocalFeature).unwrap_or(0);
        if set.dim() != expected {
            return Err(ProviderError::DimensionMismatch { expected, got: set.dim() });
        }
        self.entries
            .insert((Modality::Keypoints, content_key::image(image)), Payload::Keypoints(set));
        Ok(())
    }

    fn lookup(&self, modality: Modality, key: String) -> Result<&Payload, ProviderError> {
        self.manifest.require(modality)?;
        self.entries
            .get(&(modality, key.clone()))
            .ok_or(ProviderError::MissingFixture { modality, key })
    }

    fn lookup_vector(&self, modality: Modality, key: String) -> Result<EmbeddingVector, ProviderError> {
        match self.lookup(modality, key)? {
            Payload::Vector(v) => Ok(v.clone()),
            _ => Err(ProviderError::Protocol(format!("{modality} fixture is not a vector"))),
        }
    }

    /// Writes the store; file contents depend only on the entries.
    pub fn save(&self, dir: &Path) -> Result<(), ProviderError> {
        fs::create_dir_all(dir)?;
        let manifest = serde_json::to_vec_pretty(&self.manifest).map_err(|e| ProviderError::Manifest(e.to_string()))?;
        fs::write(dir.join("manifest.json"), manifest)?;
        for ((modality, key), payload) in &self.entries {
            let sub = dir.join(modality.name());
            fs::create_dir_all(&sub)?;
            fs::write(sub.join(format!("{key}.bin")), payload.encode())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ProviderError> {
        let manifest_bytes = fs::read(dir.join("manifest.json"))
            .map_err(|e| ProviderError::Unavailable(format!("{}: {e}", dir.join("manifest.json").display())))?;
        let manifest: ProviderManifest =
            serde_json::from_slice(&manifest_bytes).map_err(|e| ProviderError::Manifest(e.to_string()))?;
        let mut store = Self::new(manifest)?;
        for modality in Modality::ALL {
            let sub = dir.join(modality.name());
            if !sub.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&sub)? {
                let path = entry?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("bin") {
                    continue;
                }
                let Some(key) = path.file_stem().and_then(|s| s.to_str()) else { continue };
                let payload = Payload::decode(&fs::read(&path)?)?;
                store.entries.insert((modality, key.to_string()), payload);
            }
        }
        Ok(store)
    }
}

impl EmbeddingProvider for FixtureStore {
    fn manifest(&self) -> &ProviderManifest {
        &self.manifest
    }

    fn embed_text(&self, query: &str, space: EmbeddingSpace) -> Result<EmbeddingVector, ProviderError> {
        if query.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        self.manifest.require_text_space(space)?;
        let v = self.lookup_vector(Modality::Text, content_key::text(query, space))?;
        if v.space() != space {
            return Err(ProviderError::CrossSpace(space, v.space()));
        }
        Ok(v)
    }

    fn embed_audio(&self, samples: &[i16], sample_rate: u32) -> Result<EmbeddingVector, ProviderError> {
        self.manifest.require(Modality::Audio)?;
        if samples.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        if !self.manifest.sample_rates.contains(&sample_rate) {
            return Err(ProviderError::UnsupportedSampleRate(sample_rate));
        }
        self.lookup_vector(Modality::Audio, content_key::audio(samples, sample_rate))
    }

    fn embed_image_global(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError> {
        self.lookup_vector(Modality::ImageGlobal, content_key::image(image))
    }

    fn embed_image_dense(&self, image: &RgbImage) -> Result<DenseFeatureFrame, ProviderError> {
        match self.lookup(Modality::PixelDense, content_key::image(image))? {
            Payload::Dense(d) => Ok(d.clone()),
            _ => Err(ProviderError::Protocol("dense fixture has the wrong kind".into())),
        }
    }

    fn extract_keypoints(&self, image: &RgbImage) -> Result<KeypointSet, ProviderError> {
        match self.lookup(Modality::Keypoints, content_key::image(image))? {
            Payload::Keypoints(k) => Ok(k.clone()),
            _ => Err(ProviderError::Protocol("keypoint fixture has the wrong kind".into())),
        }
    }

    fn embed_image_retrieval(&self, image: &RgbImage) -> Result<EmbeddingVector, ProviderError> {
        self.lookup_vector(Modality::ImageRetrieval, content_key::image(image))
    }
}
