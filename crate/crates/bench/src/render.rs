//! Ray-cast depth and surface labels for synthetic scenes, plus the textured
//! landmarks that stand in for local image features.

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use modalmap::ingest::{DepthMap, Intrinsics};
use modalmap::spatial::Pose;

use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Surface {
    Object(usize),
    Floor,
    Wall,
    Ceiling,
}

impl Surface {
    pub fn label<'a>(&self, scene: &'a Scene) -> &'a str {
        match self {
            Surface::Object(i) => &scene.objects[*i].label,
            Surface::Floor => "floor",
            Surface::Wall => "wall",
            Surface::Ceiling => "ceiling",
        }
    }
}

/// Per-pixel z-depth and hit surface, row-major.
#[derive(Debug, Clone)]
pub struct View {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub depth: Vec<f64>,
    pub surfaces: Vec<Surface>,
}

fn room_exit(o: &Vector3<f64>, d: &Vector3<f64>, room: [f64; 3]) -> (f64, Surface) {
    let mut best = (f64::INFINITY, Surface::Wall);
    for a in 0..3 {
        let t = if d[a] > 0.0 {
            (room[a] - o[a]) / d[a]
        } else if d[a] < 0.0 {
            -o[a] / d[a]
        } else {
            continue;
        };
        if t < best.0 {
            let s = match (a, d[a] > 0.0) {
                (2, false) => Surface::Floor,
                (2, true) => Surface::Ceiling,
                _ => Surface::Wall,
            };
            best = (t, s);
        }
    }
    best
}

fn box_entry(o: &Vector3<f64>, d: &Vector3<f64>, center: [f64; 3], half: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let (lo, hi) = (center[a] - half[a], center[a] + half[a]);
        if d[a] == 0.0 {
            if o[a] < lo || o[a] > hi {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((lo - o[a]) / d[a], (hi - o[a]) / d[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > 1e-9).then_some(t0)
}

/// Casts one ray per pixel center. Rays are scaled to unit camera depth, so
/// the hit parameter is the z-depth.
pub fn render(scene: &Scene, pose: &Pose, k: &Intrinsics) -> View {
    let o = pose.position;
    let n = (k.width * k.height) as usize;
    let mut depth = Vec::with_capacity(n);
    let mut surfaces = Vec::with_capacity(n);
    for v in 0..k.height {
        for u in 0..k.width {
            let d = pose.orientation * k.unproject(u as f64, v as f64);
            let mut hit = room_exit(&o, &d, scene.config.room);
            for (i, obj) in scene.objects.iter().enumerate() {
                if let Some(t) = box_entry(&o, &d, obj.center, obj.half_extent) {
                    if t < hit.0 {
                        hit = (t, Surface::Object(i));
                    }
                }
            }
            depth.push(hit.0);
            surfaces.push(hit.1);
        }
    }
    View {
        pose: *pose,
        intrinsics: *k,
        depth,
        surfaces,
    }
}

/// Rounds to whole millimeters, the resolution of stored depth images, so a
/// written and re-read stream matches the in-memory one exactly.
pub fn quantize_depth(d: f64) -> f32 {
    let mm = (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16;
    (mm as f64 / 1000.0) as f32
}

impl View {
    pub fn depth_map(&self) -> DepthMap {
        DepthMap::new(
            self.intrinsics.width,
            self.intrinsics.height,
            self.depth.iter().map(|&d| quantize_depth(d)).collect(),
        )
        .expect("rendered depth has the image size")
    }

    /// Flat-shaded color image. `tag` is written into the first pixel so every
    /// rendered image has distinct content.
    pub fn image(&self, tag: u32) -> RgbImage {
        let w = self.intrinsics.width;
        let mut img = RgbImage::from_fn(w, self.intrinsics.height, |u, v| {
            let i = (v * w + u) as usize;
            let base: [u8; 3] = match self.surfaces[i] {
                Surface::Object(o) => [(60 + 37 * o % 160) as u8, (200 - 23 * o % 150) as u8, (90 + 53 * o % 140) as u8],
                Surface::Floor => [150, 120, 90],
                Surface::Wall => [210, 205, 190],
                Surface::Ceiling => [240, 240, 240],
            };
            let shade = (1.0 / (1.0 + 0.15 * self.depth[i])).clamp(0.2, 1.0);
            Rgb(base.map(|c| (c as f64 * shade) as u8))
        });
        let b = tag.to_be_bytes();
        img.put_pixel(0, 0, Rgb([b[1], b[2], b[3]]));
        img
    }

    pub fn surface_at(&self, u: u32, v: u32) -> Surface {
        self.surfaces[(v * self.intrinsics.width + u) as usize]
    }
}

/// A textured point with a local descriptor and a place signature.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub position: [f64; 3],
    pub descriptor: Vec<f32>,
    /// Unnormalized contribution to the global place descriptor.
    pub signature: Vec<f32>,
}

fn grid_points(len_a: f64, len_b: f64, spacing: f64, margin: f64) -> Vec<(f64, f64)> {
    let na = ((len_a - 2.0 * margin) / spacing).floor().max(0.0) as usize + 1;
    let nb = ((len_b - 2.0 * margin) / spacing).floor().max(0.0) as usize + 1;
    let (oa, ob) = ((len_a - (na - 1) as f64 * spacing) / 2.0, (len_b - (nb - 1) as f64 * spacing) / 2.0);
    (0..na)
        .flat_map(|i| (0..nb).map(move |j| (oa + i as f64 * spacing, ob + j as f64 * spacing)))
        .collect()
}

/// Landmarks on the floor, the walls up to 2 m and every object face except
/// the bottom, jittered off a regular lattice.
pub fn landmarks(scene: &Scene, seed: u64) -> Vec<Landmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = &scene.config;
    let s = cfg.landmark_spacing;
    let [rx, ry, _] = cfg.room;
    let mut points: Vec<[f64; 3]> = Vec::new();
    for (a, b) in grid_points(rx, ry, s, s / 2.0) {
        points.push([a, b, 0.0]);
    }
    let wall_top = 2.0_f64.min(cfg.room[2]);
    for (a, h) in grid_points(rx, wall_top, s, s / 2.0) {
        points.push([a, 0.0, h]);
        points.push([a, ry, h]);
    }
    for (b, h) in grid_points(ry, wall_top, s, s / 2.0) {
        points.push([0.0, b, h]);
        points.push([rx, b, h]);
    }
    let fs = s / 2.5;
    for o in &scene.objects {
        let [cx, cy, cz] = o.center;
        let [hx, hy, hz] = o.half_extent;
        for (a, h) in grid_points(2.0 * hx, 2.0 * hz, fs, fs / 2.0) {
            points.push([cx - hx + a, cy - hy, cz - hz + h]);
            points.push([cx - hx + a, cy + hy, cz - hz + h]);
        }
        for (b, h) in grid_points(2.0 * hy, 2.0 * hz, fs, fs / 2.0) {
            points.push([cx - hx, cy - hy + b, cz - hz + h]);
            points.push([cx + hx, cy - hy + b, cz - hz + h]);
        }
        for (a, b) in grid_points(2.0 * hx, 2.0 * hy, fs, fs / 2.0) {
            points.push([cx - hx + a, cy - hy + b, cz + hz]);
        }
    }
    let dl = cfg.dims.local_feature;
    let dr = cfg.dims.retrieval;
    points
        .into_iter()
        .map(|mut p| {
            // jitter within the surface plane only
            let j = s / 4.0;
            let on_vertical_x = p[0] == 0.0 || p[0] == rx;
            let on_vertical_y = p[1] == 0.0 || p[1] == ry;
            if p[2] == 0.0 {
                p[0] += rng.random_range(-j..j);
                p[1] += rng.random_range(-j..j);
            } else if !on_vertical_x && !on_vertical_y {
                // object faces keep their exact position
            } else if on_vertical_x {
                p[1] += rng.random_range(-j..j);
            } else {
                p[0] += rng.random_range(-j..j);
            }
            let desc: Vec<f32> = (0..dl).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            let signature: Vec<f32> = (0..dr).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
            Landmark {
                position: p,
                descriptor: modalmap::provider::normalize_f32(&desc).expect("gaussian vector is nonzero"),
                signature,
            }
        })
        .collect()
}

/// Landmarks visible in a view with their subpixel projections. A landmark
/// is visible when it projects inside the image, in front of the camera, and
/// the ray through its rounded pixel hits nearly the same depth. The depth
/// check also drops points on surfaces seen at grazing angles, where a pixel
/// covers a long stretch of surface.
pub fn visible_landmarks(view: &View, landmarks: &[Landmark]) -> Vec<(usize, f64, f64)> {
    let inv = view.pose.inverse();
    let k = &view.intrinsics;
    landmarks
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let pc = inv.transform_point(&Point3::from(l.position));
            if pc.z < 0.1 {
                return None;
            }
            let (u, v) = k.project(&pc)?;
            if !k.contains_pixel(u, v) {
                return None;
            }
            let (ui, vi) = (u.round() as u32, v.round() as u32);
            let d = view.depth[(vi * k.width + ui) as usize];
            ((d - pc.z).abs() <= 0.01 + 0.01 * pc.z).then_some((i, u, v))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{camera_pose, SceneConfig};
    use modalmap::ingest::back_project_pixel;

    fn scene() -> Scene {
        Scene::generate(&SceneConfig::default(), 5).unwrap()
    }

    #[test]
    fn center_pixel_depth_matches_geometry() {
        let mut s = scene();
        s.objects.clear();
        let k = s.config.camera.intrinsics();
        // looking straight down from 1.2 m at the middle of the floor
        let pose = camera_pose([5.0, 5.0, 1.2], 0.0, -90.0);
        let view = render(&s, &pose, &k);
        for d in &view.depth {
            // off-center rays have larger slant but equal z-depth on a plane
            assert!((d - 1.2).abs() < 1e-9);
        }
        assert!(view.surfaces.iter().all(|&x| x == Surface::Floor));
    }

    #[test]
    fn back_projected_pixels_lie_on_their_surface() {
        let s = scene();
        let k = s.config.camera.intrinsics();
        let sample = s.trajectory[5];
        let view = render(&s, &s.camera_pose(&sample), &k);
        for v in 0..k.height {
            for u in 0..k.width {
                let i = (v * k.width + u) as usize;
                let p = back_project_pixel(&view.pose, &k, view.depth[i], u as f64, v as f64).unwrap();
                match view.surfaces[i] {
                    Surface::Floor => assert!(p.z.abs() < 1e-9),
                    Surface::Ceiling => assert!((p.z - 2.5).abs() < 1e-9),
                    Surface::Wall => assert!(
                        [p.x, p.y, 10.0 - p.x, 10.0 - p.y].iter().any(|c| c.abs() < 1e-9),
                        "{p:?}"
                    ),
                    Surface::Object(o) => {
                        let ob = &s.objects[o];
                        for a in 0..3 {
                            assert!((p[a] - ob.center[a]).abs() <= ob.half_extent[a] + 1e-9);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn depth_quantization_is_stable_through_storage() {
        for d in [0.0005, 1.2345, 3.9999, 14.142] {
            let q = quantize_depth(d);
            assert_eq!(quantize_depth(q as f64), q);
            assert!((q as f64 - d).abs() <= 0.0005 + 1e-6);
        }
    }

    #[test]
    fn images_differ_by_tag() {
        let s = scene();
        let k = s.config.camera.intrinsics();
        let view = render(&s, &s.camera_pose(&s.trajectory[0]), &k);
        assert_ne!(view.image(1), view.image(2));
        assert_eq!(view.image(7), view.image(7));
    }

    #[test]
    fn landmarks_seen_from_the_trajectory() {
        let s = scene();
        let k = s.config.camera.intrinsics();
        let lm = landmarks(&s, 1);
        for sample in s.trajectory.iter().step_by(7) {
            let view = render(&s, &s.camera_pose(sample), &k);
            let vis = visible_landmarks(&view, &lm);
            assert!(vis.len() >= 20, "only {} landmarks visible", vis.len());
            for &(i, u, v) in &vis {
                let p = back_project_pixel(&view.pose, &k, view.depth[(v.round() as u32 * k.width + u.round() as u32) as usize], u, v).unwrap();
                let q = lm[i].position;
                let err = ((p.x - q[0]).powi(2) + (p.y - q[1]).powi(2) + (p.z - q[2]).powi(2)).sqrt();
                assert!(err < 0.15, "landmark {i} back-projects {err} m away");
            }
        }
    }
}
