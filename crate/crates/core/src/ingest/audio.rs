//! Silence-based segmentation of the audio track.
//!
//! Volume is the RMS of overlapping analysis windows, in dBFS. A segment opens
//! at the first window louder than the threshold and closes once the volume
//! has stayed at or below the threshold for the configured silence duration.
//! Segment boundaries are placed at the centers of the first and last loud
//! windows.

use serde::{Deserialize, Serialize};

use crate::provider::{EmbeddingProvider, EmbeddingVector};
use crate::spatial::Pose;

use super::{IngestError, Odometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_s: f64,
    pub hop_s: f64,
    pub threshold_dbfs: f64,
    /// Silence needed to close an open segment.
    pub silence_close_s: f64,
    pub min_segment_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            window_s: 0.05,
            hop_s: 0.025,
            threshold_dbfs: -40.0,
            silence_close_s: 0.5,
            min_segment_s: 0.3,
        }
    }
}

/// Mono PCM16 audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTrack {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl AudioTrack {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// A detected sound interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start_s + self.end_s)
    }

    /// Sample range covered by the interval, widened by half a window on each
    /// side so the embedded clip contains the full loud windows.
    pub fn sample_range(&self, rate: u32, cfg: &SegmentationConfig, len: usize) -> std::ops::Range<usize> {
        let pad = cfg.window_s / 2.0;
        let a = (((self.start_s - pad) * rate as f64).round().max(0.0) as usize).min(len);
        let b = (((self.end_s + pad) * rate as f64).round().max(0.0) as usize).min(len);
        a..b.max(a)
    }
}

/// Sound segment anchored at the odometry of its midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub pose: Pose,
    pub embedding: EmbeddingVector,
}

/// RMS level of every analysis window in dBFS, with its center time.
pub fn window_levels(samples: &[i16], rate: u32, cfg: &SegmentationConfig) -> Vec<(f64, f64)> {
    let win = ((cfg.window_s * rate as f64).round() as usize).max(1);
    let hop = ((cfg.hop_s * rate as f64).round() as usize).max(1);
    if samples.len() < win {
        if samples.is_empty() {
            return Vec::new();
        }
        return vec![(samples.len() as f64 / 2.0 / rate as f64, rms_dbfs(samples))];
    }
    (0..=(samples.len() - win) / hop)
        .map(|i| {
            let start = i * hop;
            let center = (start as f64 + win as f64 / 2.0) / rate as f64;
            (center, rms_dbfs(&samples[start..start + win]))
        })
        .collect()
}

fn rms_dbfs(window: &[i16]) -> f64 {
    let mean_sq = window
        .iter()
        .map(|&s| {
            let x = s as f64 / 32768.0;
            x * x
        })
        .sum::<f64>()
        / window.len() as f64;
    if mean_sq == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * mean_sq.log10()
    }
}

/// Loud intervals of the track, shorter ones than the minimum dropped.
pub fn detect_segments(samples: &[i16], rate: u32, cfg: &SegmentationConfig) -> Vec<Interval> {
    let mut out = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for (center, level) in window_levels(samples, rate, cfg) {
        let loud = level > cfg.threshold_dbfs;
        open = match (open, loud) {
            (None, true) => Some((center, center)),
            (None, false) => None,
            (Some((start, _)), true) => Some((start, center)),
            (Some((start, last)), false) if center - last >= cfg.silence_close_s => {
                out.push(Interval { start_s: start, end_s: last });
                None
            }
            (still_open, false) => still_open,
        };
    }
    if let Some((start, last)) = open {
        out.push(Interval { start_s: start, end_s: last });
    }
    out.retain(|i| i.duration() >= cfg.min_segment_s);
    out
}

/// Segments the track, embeds each segment, and anchors it at the odometry of
/// its midpoint. A silent track yields no segments.
pub fn segment_audio(
    track: &AudioTrack,
    odometry: &Odometry,
    provider: &dyn EmbeddingProvider,
    cfg: &SegmentationConfig,
) -> Result<Vec<AudioSegment>, IngestError> {
    if track.samples.is_empty() {
        return Err(IngestError::EmptyAudio);
    }
    let intervals = detect_segments(&track.samples, track.sample_rate, cfg);
    if let Some((t0, t1)) = odometry.time_span() {
        if t0 > 0.0 + cfg.hop_s || t1 + cfg.hop_s < track.duration() {
            log::warn!(
                "odometry covers {t0:.2}-{t1:.2} s but audio runs {:.2} s; poses are clamped",
                track.duration()
            );
        }
    }
    intervals
        .into_iter()
        .map(|iv| {
            let range = iv.sample_range(track.sample_rate, cfg, track.samples.len());
            let embedding = provider.embed_audio(&track.samples[range], track.sample_rate)?;
            Ok(AudioSegment {
                start_s: iv.start_s,
                end_s: iv.end_s,
                pose: odometry.pose_at(iv.midpoint()),
                embedding,
            })
        })
        .collect()
}
