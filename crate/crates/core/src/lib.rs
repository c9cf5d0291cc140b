//! Multimodal spatial maps.

pub mod dsl;
pub mod heatmap;
pub mod ingest;
pub mod localize;
pub mod map;
pub mod planner;
pub mod provider;
pub mod spatial;
