//! Procedural indoor scenes with known object, sound and region placement.
//!
//! A rectangular room is split into a square grid of named regions. The
//! camera visits every region center, turns a full circle there, and drives
//! straight to the next region center. Duplicated "ring" objects stand around
//! region centers; each sound event happens on a drive leg next to a uniquely
//! labelled "neighbor" object.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use modalmap::ingest::Intrinsics;
use modalmap::spatial::{GridSpec, Pose};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub focal_px: f64,
    /// Height of the optical center above the floor.
    pub mount_height: f64,
    /// Negative values look down.
    pub pitch_deg: f64,
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub pixel_text: usize,
    pub frame_text: usize,
    pub audio_text: usize,
    pub retrieval: usize,
    pub local_feature: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Room extent in meters; the grid covers it with voxel centers on both walls.
    pub room: [f64; 3],
    pub resolution: f64,
    pub regions_per_side: usize,
    pub region_labels: Vec<String>,
    pub ring_labels: Vec<String>,
    /// Regions that get a copy of each ring label.
    pub ring_copies: usize,
    pub sound_labels: Vec<String>,
    pub sound_copies: usize,
    /// One per sound event, so there must be at least
    /// `sound_labels.len() * sound_copies` of them.
    pub neighbor_labels: Vec<String>,
    pub camera: CameraConfig,
    /// Distance driven between frames on a leg.
    pub step_m: f64,
    pub frame_dt: f64,
    pub spin_frames: usize,
    pub sound_duration_s: f64,
    pub sample_rate: u32,
    /// Distances along a leg where sound events may happen.
    pub sound_slots_m: Vec<f64>,
    pub dims: EmbeddingDims,
    /// Cosine similarity shared by every pair of label vectors.
    pub label_cosine: f64,
    /// Observation noise: each embedding component gets N(0, sigma^2 / dim)
    /// before renormalization.
    pub sigma: f64,
    pub landmark_spacing: f64,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room: [10.0, 10.0, 2.5],
            resolution: 0.1,
            regions_per_side: 2,
            region_labels: strings(&["kitchen", "bedroom", "office", "bathroom"]),
            ring_labels: strings(&["chair", "table", "sofa", "plant"]),
            ring_copies: 2,
            sound_labels: strings(&["dog barking", "phone ringing", "water running", "door knocking"]),
            sound_copies: 2,
            neighbor_labels: strings(&[
                "lamp",
                "vase",
                "bookshelf",
                "television",
                "cabinet",
                "trash bin",
                "radiator",
                "piano",
            ]),
            camera: CameraConfig {
                width: 64,
                height: 48,
                focal_px: 40.0,
                mount_height: 1.2,
                pitch_deg: -30.0,
            },
            step_m: 0.25,
            frame_dt: 0.5,
            spin_frames: 12,
            sound_duration_s: 1.0,
            sample_rate: 16000,
            sound_slots_m: vec![1.3, 2.5, 3.7],
            dims: EmbeddingDims {
                pixel_text: 24,
                frame_text: 8,
                audio_text: 16,
                retrieval: 64,
                local_feature: 32,
            },
            label_cosine: 0.1,
            sigma: 0.0,
            landmark_spacing: 0.4,
        }
    }
}

impl SceneConfig {
    pub fn grid(&self) -> Result<GridSpec, BenchError> {
        let n = |extent: f64| (extent / self.resolution).round() as usize + 1;
        Ok(GridSpec::new([n(self.room[0]), n(self.room[1]), n(self.room[2])], self.resolution, [0.0; 3])?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Config(m.to_string()));
        let regions = self.regions_per_side * self.regions_per_side;
        if self.regions_per_side < 2 || self.region_labels.len() != regions {
            return bad("region_labels must hold regions_per_side^2 >= 4 labels");
        }
        if self.ring_copies == 0 || self.ring_copies > regions {
            return bad("ring_copies must be between 1 and the number of regions");
        }
        if self.neighbor_labels.len() < self.sound_labels.len() * self.sound_copies {
            return bad("need one neighbor label per sound event");
        }
        if !(self.step_m > 0.0 && self.frame_dt > 0.0 && self.spin_frames > 0) {
            return bad("trajectory step, frame period and spin frame count must be positive");
        }
        if !(0.0..1.0).contains(&self.label_cosine) || !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("label_cosine must lie in [0, 1) and sigma must be finite and non-negative");
        }
        let pixel_labels = self.ring_labels.len() + self.neighbor_labels.len() + modalmap::localize::BACKGROUND_LABELS.len();
        if pixel_labels >= self.dims.pixel_text
            || self.region_labels.len() >= self.dims.frame_text
            || self.sound_labels.len() >= self.dims.audio_text
        {
            return bad("each text space needs more dimensions than it has labels");
        }
        let mut all: Vec<&String> = self
            .ring_labels
            .iter()
            .chain(&self.neighbor_labels)
            .chain(&self.sound_labels)
            .chain(&self.region_labels)
            .collect();
        all.sort();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return bad("labels must be distinct");
        }
        self.grid()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub label: String,
    pub center: [f64; 2],
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRole {
    Ring,
    Neighbor,
}

/// Axis-aligned box standing on the floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    pub role: ObjectRole,
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    pub region: usize,
}

impl SceneObject {
    /// Horizontal distance from a point to the box footprint.
    pub fn footprint_distance(&self, p: [f64; 2]) -> f64 {
        let dx = ((p[0] - self.center[0]).abs() - self.half_extent[0]).max(0.0);
        let dy = ((p[1] - self.center[1]).abs() - self.half_extent[1]).max(0.0);
        dx.hypot(dy)
    }

    fn footprint_gap(&self, o: &SceneObject) -> f64 {
        let gx = (self.center[0] - o.center[0]).abs() - self.half_extent[0] - o.half_extent[0];
        let gy = (self.center[1] - o.center[1]).abs() - self.half_extent[1] - o.half_extent[1];
        if gx > 0.0 && gy > 0.0 {
            gx.hypot(gy)
        } else {
            gx.max(gy)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    /// Camera position at the middle of the event.
    pub position: [f64; 3],
    /// Index into `Scene::objects` of the object standing next to the event.
    pub neighbor: usize,
    pub frequency_hz: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSample {
    pub timestamp: f64,
    pub position: [f64; 3],
    pub heading_deg: f64,
}

/// A query photo taken near a region center, facing one ring object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub name: String,
    pub position: [f64; 3],
    pub heading_deg: f64,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub config: SceneConfig,
    pub regions: Vec<Region>,
    /// Region indices in visiting order.
    pub route: Vec<usize>,
    pub objects: Vec<SceneObject>,
    pub sounds: Vec<SoundEvent>,
    pub trajectory: Vec<CameraSample>,
    pub queries: Vec<QueryView>,
}

/// Camera orientation for a heading (counter-clockwise from +x) and pitch:
/// camera x points right, y down, z forward.
pub fn camera_orientation(heading_deg: f64, pitch_deg: f64) -> UnitQuaternion<f64> {
    let (psi, theta) = (heading_deg.to_radians(), pitch_deg.to_radians());
    let f = Vector3::new(theta.cos() * psi.cos(), theta.cos() * psi.sin(), theta.sin());
    let r = Vector3::new(psi.sin(), -psi.cos(), 0.0);
    let d = f.cross(&r);
    let m = Matrix3::from_columns(&[r, d, f]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

pub fn camera_pose(position: [f64; 3], heading_deg: f64, pitch_deg: f64) -> Pose {
    Pose::from_parts(Vector3::from(position), camera_orientation(heading_deg, pitch_deg))
}

fn heading_to(a: [f64; 2], b: [f64; 2]) -> f64 {
    (b[1] - a[1]).atan2(b[0] - a[0]).to_degrees()
}

fn segment_point_distance(a: [f64; 2], b: [f64; 2], obj: &SceneObject) -> f64 {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = (len / 0.02).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            obj.footprint_distance([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Clearance kept between object footprints and drive legs or region centers.
const PATH_CLEARANCE: f64 = 0.35;
const OBJECT_GAP: f64 = 0.4;
const WALL_CLEARANCE: f64 = 0.5;
const LAYOUT_ATTEMPTS: usize = 500;

impl Scene {
    pub fn generate(config: &SceneConfig, seed: u64) -> Result<Scene, BenchError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regions = regions(config);
        let route = serpentine(config.regions_per_side);
        let legs = legs(&route, config.regions_per_side);
        let trajectory = trajectory(config, &regions, &route, &legs);
        for attempt in 0..LAYOUT_ATTEMPTS {
            if let Some((objects, sounds)) = place(config, &regions, &legs, &trajectory, &mut rng) {
                let queries = queries(config, &regions, &objects, &mut rng);
                log::debug!("scene {seed}: layout found after {} attempts", attempt + 1);
                return Ok(Scene {
                    seed,
                    config: config.clone(),
                    regions,
                    route,
                    objects,
                    sounds,
                    trajectory,
                    queries,
                });
            }
        }
        Err(BenchError::Layout(format!("no layout found for seed {seed} after {LAYOUT_ATTEMPTS} attempts")))
    }

    pub fn region_of(&self, p: [f64; 2]) -> usize {
        region_index(&self.config, p)
    }

    pub fn duration(&self) -> f64 {
        self.trajectory.last().map_or(0.0, |s| s.timestamp) + self.config.frame_dt
    }

    pub fn camera_pose(&self, sample: &CameraSample) -> Pose {
        camera_pose(sample.position, sample.heading_deg, self.config.camera.pitch_deg)
    }

    /// Object vocabulary used for open-vocabulary labelling.
    pub fn object_labels(&self) -> Vec<String> {
        self.config.ring_labels.iter().chain(&self.config.neighbor_labels).cloned().collect()
    }
}

fn region_index(config: &SceneConfig, p: [f64; 2]) -> usize {
    let n = config.regions_per_side;
    let cell = |v: f64, extent: f64| ((v / extent * n as f64).floor().max(0.0) as usize).min(n - 1);
    cell(p[1], config.room[1]) * n + cell(p[0], config.room[0])
}

/// Row-major regions, row 0 at the smallest y.
fn regions(config: &SceneConfig) -> Vec<Region> {
    let n = config.regions_per_side;
    let (sx, sy) = (config.room[0] / n as f64, config.room[1] / n as f64);
    (0..n * n)
        .map(|i| {
            let (col, row) = (i % n, i / n);
            let min = [col as f64 * sx, row as f64 * sy];
            Region {
                label: config.region_labels[i].clone(),
                center: [min[0] + sx / 2.0, min[1] + sy / 2.0],
                min,
                max: [min[0] + sx, min[1] + sy],
            }
        })
        .collect()
}

fn serpentine(n: usize) -> Vec<usize> {
    (0..n)
        .flat_map(|row| {
            let cols: Vec<usize> = if row % 2 == 0 { (0..n).collect() } else { (0..n).rev().collect() };
            cols.into_iter().map(move |c| row * n + c)
        })
        .collect()
}

/// Consecutive route pairs, plus a closing leg when the last region touches
/// the first.
fn legs(route: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut legs: Vec<(usize, usize)> = route.windows(2).map(|w| (w[0], w[1])).collect();
    let (a, b) = (route[route.len() - 1], route[0]);
    let adjacent = (a % n).abs_diff(b % n) + (a / n).abs_diff(b / n) == 1;
    if adjacent {
        legs.push((a, b));
    }
    legs
}

fn trajectory(config: &SceneConfig, regions: &[Region], route: &[usize], legs: &[(usize, usize)]) -> Vec<CameraSample> {
    let h = config.camera.mount_height;
    let spin_step = 360.0 / config.spin_frames as f64;
    let mut out = Vec::new();
    let push = |out: &mut Vec<CameraSample>, xy: [f64; 2], heading: f64| {
        let timestamp = out.len() as f64 * config.frame_dt;
        out.push(CameraSample {
            timestamp,
            position: [xy[0], xy[1], h],
            heading_deg: heading,
        });
    };
    let mut heading = 0.0;
    for (i, &r) in route.iter().enumerate() {
        for k in 0..config.spin_frames {
            push(&mut out, regions[r].center, heading + k as f64 * spin_step);
        }
        let Some(&(a, b)) = legs.get(i) else { break };
        let (pa, pb) = (regions[a].center, regions[b].center);
        heading = heading_to(pa, pb);
        let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
        let steps = (len / config.step_m).round() as usize;
        let last = if i + 1 == route.len() { steps } else { steps - 1 };
        for k in 1..=last {
            let t = k as f64 / steps as f64;
            push(&mut out, [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])], heading);
        }
    }
    out
}

/// Time at which the camera is `s` meters along leg `leg`.
fn leg_time(config: &SceneConfig, trajectory: &[CameraSample], regions: &[Region], leg: (usize, usize), s: f64) -> f64 {
    let start = regions[leg.0].center;
    let dir = heading_to(start, regions[leg.1].center);
    // the leg starts at the last spin frame at its start center
    let departure = trajectory
        .iter()
        .enumerate()
        .filter(|(_, c)| c.position[0] == start[0] && c.position[1] == start[1])
        .map(|(i, _)| i)
        .find(|&i| {
            trajectory.get(i + 1).is_some_and(|n| {
                let p = [n.position[0], n.position[1]];
                p != start && (heading_to(start, p) - dir).abs() < 1e-6
            })
        })
        .expect("every leg departs from a spin frame");
    trajectory[departure].timestamp + s / config.step_m * config.frame_dt
}

fn place(
    config: &SceneConfig,
    regions: &[Region],
    legs: &[(usize, usize)],
    trajectory: &[CameraSample],
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<SceneObject>, Vec<SoundEvent>)> {
    let mut objects: Vec<SceneObject> = Vec::new();
    let leg_ends: Vec<([f64; 2], [f64; 2])> = legs.iter().map(|&(a, b)| (regions[a].center, regions[b].center)).collect();
    let fits = |o: &SceneObject, objects: &[SceneObject], own_leg: Option<usize>| {
        let (lo, hi) = (
            [o.center[0] - o.half_extent[0], o.center[1] - o.half_extent[1]],
            [o.center[0] + o.half_extent[0], o.center[1] + o.half_extent[1]],
        );
        if lo[0] < WALL_CLEARANCE
            || lo[1] < WALL_CLEARANCE
            || hi[0] > config.room[0] - WALL_CLEARANCE
            || hi[1] > config.room[1] - WALL_CLEARANCE
        {
            return false;
        }
        if objects.iter().any(|p| o.footprint_gap(p) < OBJECT_GAP) {
            return false;
        }
        if regions.iter().any(|r| o.footprint_distance(r.center) < 2.0 * PATH_CLEARANCE) {
            return false;
        }
        leg_ends
            .iter()
            .enumerate()
            .all(|(i, &(a, b))| Some(i) == own_leg || segment_point_distance(a, b, o) >= PATH_CLEARANCE)
    };

    // sound events first: they are the most constrained
    let mut slots: Vec<(usize, f64)> = (0..legs.len())
        .flat_map(|l| config.sound_slots_m.iter().map(move |&s| (l, s)))
        .collect();
    slots.shuffle(rng);
    let mut neighbor_labels = config.neighbor_labels.clone();
    neighbor_labels.shuffle(rng);
    let mut events: Vec<(String, usize, f64)> = Vec::new();
    for label in &config.sound_labels {
        let mut used_legs = Vec::new();
        for _ in 0..config.sound_copies {
            let pos = slots.iter().position(|(l, _)| !used_legs.contains(l))?;
            let (l, s) = slots.remove(pos);
            used_legs.push(l);
            events.push((label.clone(), l, s));
        }
    }
    let mut sounds = Vec::new();
    for (e, (label, l, s)) in events.iter().enumerate() {
        let (a, b) = leg_ends[*l];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        let p = [a[0] + s * dir[0], a[1] + s * dir[1]];
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let half = rng.random_range(0.15..0.2);
        let height = rng.random_range(0.5..0.9);
        let offset = 0.45 + half;
        let c = [p[0] - side * dir[1] * offset, p[1] + side * dir[0] * offset];
        let obj = SceneObject {
            label: neighbor_labels[e].clone(),
            role: ObjectRole::Neighbor,
            center: [c[0], c[1], height / 2.0],
            half_extent: [half, half, height / 2.0],
            region: region_index(config, c),
        };
        if !fits(&obj, &objects, Some(*l)) {
            return None;
        }
        let mid = leg_time(config, trajectory, regions, legs[*l], *s);
        let label_idx = config.sound_labels.iter().position(|x| x == label).unwrap();
        sounds.push(SoundEvent {
            label: label.clone(),
            start_s: mid - config.sound_duration_s / 2.0,
            end_s: mid + config.sound_duration_s / 2.0,
            position: [p[0], p[1], config.camera.mount_height],
            neighbor: objects.len(),
            frequency_hz: 300.0 + 150.0 * label_idx as f64 + rng.random_range(0.0..40.0),
            phase: rng.random_range(0.0..2.0 * PI),
        });
        objects.push(obj);
    }
    // a neighbor must be clearly closer to its own event than to any copy
    for e in &sounds {
        let n = &objects[e.neighbor];
        for o in sounds.iter().filter(|o| o.label == e.label && o.position != e.position) {
            if n.footprint_distance([o.position[0], o.position[1]]) < 2.0 {
                return None;
            }
        }
    }

    let n_regions = regions.len();
    for label in &config.ring_labels {
        let mut which: Vec<usize> = (0..n_regions).collect();
        which.shuffle(rng);
        for &r in &which[..config.ring_copies] {
            let center = regions[r].center;
            let blocked: Vec<f64> = leg_ends
                .iter()
                .filter_map(|&(a, b)| {
                    if a == center {
                        Some(heading_to(a, b))
                    } else if b == center {
                        Some(heading_to(b, a))
                    } else {
                        None
                    }
                })
                .collect();
            let mut placed = false;
            for _ in 0..50 {
                let angle: f64 = rng.random_range(-180.0..180.0);
                if blocked.iter().any(|&b| {
                    let d = (angle - b).rem_euclid(360.0);
                    d.min(360.0 - d) < 50.0
                }) {
                    continue;
                }
                let radius = rng.random_range(0.75..1.05);
                let half = rng.random_range(0.15..0.2);
                let height = rng.random_range(0.4..1.0);
                let (sn, cs) = angle.to_radians().sin_cos();
                let obj = SceneObject {
                    label: label.clone(),
                    role: ObjectRole::Ring,
                    center: [center[0] + radius * cs, center[1] + radius * sn, height / 2.0],
                    half_extent: [half, half, height / 2.0],
                    region: r,
                };
                if fits(&obj, &objects, None) {
                    objects.push(obj);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return None;
            }
        }
    }
    Some((objects, sounds))
}

fn queries(config: &SceneConfig, regions: &[Region], objects: &[SceneObject], rng: &mut ChaCha8Rng) -> Vec<QueryView> {
    objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.role == ObjectRole::Ring)
        .enumerate()
        .map(|(q, (i, o))| {
            let c = regions[o.region].center;
            let (r, a): (f64, f64) = (rng.random_range(0.0..0.25), rng.random_range(0.0..2.0 * PI));
            let p = [c[0] + r * a.cos(), c[1] + r * a.sin()];
            let heading = heading_to(p, [o.center[0], o.center[1]]) + rng.random_range(-10.0..10.0);
            QueryView {
                name: format!("query_{q:03}.png"),
                position: [p[0], p[1], config.camera.mount_height],
                heading_deg: heading,
                target: i,
            }
        })
        .collect()
}
