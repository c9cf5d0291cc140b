//! On-disk stream directories.
//!
//! ```text
//! manifest.json        StreamManifest
//! poses.txt            one line per frame: t tx ty tz qx qy qz qw
//! rgb/NNNNNN.png       8-bit RGB
//! depth/NNNNNN.png     16-bit grayscale, depth in meters times depth_scale
//! audio.wav            optional mono 16-bit PCM
//! ```
//!
//! Frames appear in `manifest.json` in stream order; line `i` of `poses.txt`
//! belongs to frame `i`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::spatial::Pose;

use super::audio::AudioTrack;
use super::camera::{DepthMap, Intrinsics};
use super::{IngestError, Stream, StreamFrame};

pub const STREAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: f64,
    pub rgb: String,
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub version: u32,
    pub intrinsics: Intrinsics,
    /// Stored depth units per meter.
    pub depth_scale: f64,
    pub poses: String,
    pub frames: Vec<FrameEntry>,
    #[serde(default)]
    pub audio: Option<String>,
    #[serde(default)]
    pub labels: Vec<String>,
}

fn format_err(msg: impl Into<String>) -> IngestError {
    IngestError::Format(msg.into())
}

/// Writes `stream` under `dir`. Depth is quantized to whole millimeters and
/// every frame must share the first frame's intrinsics.
pub fn write_stream(stream: &Stream, dir: &Path) -> Result<(), IngestError> {
    stream.validate()?;
    let k = stream.frames[0].intrinsics;
    fs::create_dir_all(dir.join("rgb"))?;
    fs::create_dir_all(dir.join("depth"))?;
    let depth_scale = 1000.0;
    let mut poses = String::new();
    let mut entries = Vec::with_capacity(stream.frames.len());
    for f in &stream.frames {
        if f.intrinsics != k {
            return Err(format_err(format!("frame {} has different intrinsics", f.index)));
        }
        let rgb = format!("rgb/{:06}.png", f.index);
        let depth = format!("depth/{:06}.png", f.index);
        f.image.save(dir.join(&rgb))?;
        let mm: Vec<u16> = f
            .depth
            .data()
            .iter()
            .map(|d| (*d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(f.depth.width(), f.depth.height(), mm)
            .ok_or_else(|| format_err("depth buffer size"))?;
        img.save(dir.join(&depth))?;
        let p = f.pose.position_array();
        let q = f.pose.quat_xyzw();
        writeln!(
            poses,
            "{} {} {} {} {} {} {} {}",
            f.timestamp, p[0], p[1], p[2], q[0], q[1], q[2], q[3]
        )
        .expect("write to String");
        entries.push(FrameEntry {
            index: f.index,
            timestamp: f.timestamp,
            rgb,
            depth,
        });
    }
    fs::write(dir.join("poses.txt"), poses)?;
    let audio = match &stream.audio {
        Some(track) => {
            let spec = hound::WavSpec {
                channels: 1,
                sample_rate: track.sample_rate,
                bits_per_sample: 16,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(dir.join("audio.wav"), spec)?;
            for s in &track.samples {
                w.write_sample(*s)?;
            }
            w.finalize()?;
            Some("audio.wav".to_string())
        }
        None => None,
    };
    let manifest = StreamManifest {
        version: STREAM_FORMAT_VERSION,
        intrinsics: k,
        depth_scale,
        poses: "poses.txt".into(),
        frames: entries,
        audio,
        labels: stream.labels.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| format_err(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

fn parse_pose_line(line: &str, lineno: usize) -> Result<(f64, Pose), IngestError> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|e| format_err(format!("poses line {lineno}: {e}")))?;
    if vals.len() != 8 {
        return Err(format_err(format!("poses line {lineno}: expected 8 numbers, got {}", vals.len())));
    }
    let pose = Pose::from_raw([vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6], vals[7]])?;
    Ok((vals[0], pose))
}

pub fn read_stream(dir: &Path) -> Result<Stream, IngestError> {
    let raw = fs::read(dir.join("manifest.json"))?;
    let manifest: StreamManifest = serde_json::from_slice(&raw).map_err(|e| format_err(format!("manifest.json: {e}")))?;
    if manifest.version != STREAM_FORMAT_VERSION {
        return Err(format_err(format!("unsupported stream version {}", manifest.version)));
    }
    if !(manifest.depth_scale.is_finite() && manifest.depth_scale > 0.0) {
        return Err(format_err("depth_scale must be positive"));
    }
    let k = manifest.intrinsics;
    k.validate()?;
    let poses: Vec<(f64, Pose)> = fs::read_to_string(dir.join(&manifest.poses))?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| parse_pose_line(l, i + 1))
        .collect::<Result<_, _>>()?;
    if poses.len() != manifest.frames.len() {
        return Err(format_err(format!(
            "{} frames but {} poses",
            manifest.frames.len(),
            poses.len()
        )));
    }
    let mut frames = Vec::with_capacity(poses.len());
    for (entry, (t, pose)) in manifest.frames.iter().zip(poses) {
        if (t - entry.timestamp).abs() > 1e-6 {
            return Err(format_err(format!("frame {}: pose time {t} differs from frame time", entry.index)));
        }
        let image = image::open(dir.join(&entry.rgb))?.to_rgb8();
        let depth_img = image::open(dir.join(&entry.depth))?.to_luma16();
        let (w, h) = depth_img.dimensions();
        let depth = DepthMap::new(
            w,
            h,
            depth_img
                .into_raw()
                .into_iter()
                .map(|d| (d as f64 / manifest.depth_scale) as f32)
                .collect(),
        )?;
        frames.push(StreamFrame {
            index: entry.index,
            timestamp: entry.timestamp,
            pose,
            image,
            depth,
            intrinsics: k,
        });
    }
    let audio = match &manifest.audio {
        Some(name) => {
            let mut r = hound::WavReader::open(dir.join(name))?;
            let spec = r.spec();
            if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
                return Err(format_err("audio must be mono 16-bit PCM"));
            }
            let samples = r.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
            Some(AudioTrack {
                sample_rate: spec.sample_rate,
                samples,
            })
        }
        None => None,
    };
    let stream = Stream {
        frames,
        audio,
        labels: manifest.labels,
    };
    stream.validate()?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;
    use nalgebra::{UnitQuaternion, Vector3};

    fn sample_stream() -> Stream {
        let k = Intrinsics::new(3.0, 3.0, 2.0, 1.5, 4, 3).unwrap();
        let frames = (0..3)
            .map(|i| StreamFrame {
                index: i,
                timestamp: 0.1 + i as f64 * 0.5,
                pose: Pose::from_parts(
                    Vector3::new(i as f64 * 0.3, 0.1, 1.2),
                    UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3 * i as f64),
                ),
                image: RgbImage::from_fn(4, 3, |u, v| image::Rgb([u as u8, v as u8, i as u8])),
                depth: DepthMap::new(4, 3, (0..12).map(|j| j as f32 * 0.25).collect()).unwrap(),
                intrinsics: k,
            })
            .collect();
        Stream {
            frames,
            audio: Some(AudioTrack {
                sample_rate: 16000,
                samples: (0..1600).map(|i| (i * 7 % 300) as i16 - 150).collect(),
            }),
            labels: vec!["chair".into(), "lamp".into()],
        }
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample_stream();
        write_stream(&s, dir.path()).unwrap();
        let back = read_stream(dir.path()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn pose_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_stream(&sample_stream(), dir.path()).unwrap();
        let poses = fs::read_to_string(dir.path().join("poses.txt")).unwrap();
        let first_two: String = poses.lines().take(2).map(|l| format!("{l}\n")).collect();
        fs::write(dir.path().join("poses.txt"), first_two).unwrap();
        assert!(matches!(read_stream(dir.path()), Err(IngestError::Format(_))));
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_stream(&sample_stream(), a.path()).unwrap();
        write_stream(&sample_stream(), b.path()).unwrap();
        for f in ["manifest.json", "poses.txt", "audio.wav", "rgb/000001.png", "depth/000002.png"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
