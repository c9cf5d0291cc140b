//! Acceptance suite. Every criterion prints one `PASS` or `FAIL` line with
//! its measurements; the process exits nonzero if any criterion fails.
//! Runs without the libtest harness so the lines always reach the output.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::f64::consts::PI;
use std::time::{Duration, Instant};

use image::RgbImage;
use nalgebra::{Point2, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modalmap::dsl::{self, EvalContext};
use modalmap::heatmap::{
    fuse, heatmap_from_points, heatmap_from_points_with, heatmap_from_pose, heatmap_from_pose_with,
    heatmap_from_scored, heatmap_from_scored_with, DecayConfig, DistanceMode,
};
use modalmap::ingest::audio::detect_segments;
use modalmap::ingest::{AudioSegment, BuildSummary, IngestConfig, Intrinsics, SegmentationConfig, VoxelFeatureMap};
use modalmap::localize::{localize_image, min_max_normalize, solve_pnp_ransac, LocalizeConfig, PnpConfig, ScoredPosition};
use modalmap::map::{MapMetadata, MultimodalMap};
use modalmap::planner::{judge_success, plan_path, Cell, OccupancyGrid, PlanError};
use modalmap::provider::{EmbeddingSpace, EmbeddingVector, FixtureStore, Modality, ProviderManifest, SpaceDecl};
use modalmap::spatial::{GridSpec, Heatmap, Pose, VoxelIndex};
use modalmap_bench::suite::{BuiltScene, NavConfig};
use modalmap_bench::{run_bench, BenchConfig, Method, Scene, SceneConfig, TaskFamily};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn within_budget(start: Instant, budget: Duration, detail: String) -> Verdict {
    let took = start.elapsed();
    ensure!(took < budget, "{detail}; took {took:.1?}, budget {budget:?}");
    Ok(format!("{detail}; {took:.1?}"))
}

// ---------------------------------------------------------------- heatmaps

fn random_spec(rng: &mut ChaCha8Rng) -> GridSpec {
    let dims = [rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=8)];
    let res = rng.random_range(0.02..0.5);
    let origin = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)];
    GridSpec::new(dims, res, origin).unwrap()
}

/// World center of 1-based voxel `i` along each axis.
fn center_of(spec: &GridSpec, i: [usize; 3]) -> [f64; 3] {
    let (o, r) = (spec.origin(), spec.resolution());
    [0, 1, 2].map(|a| o[a] + (i[a] as f64 - 1.0) * r)
}

/// 1-based voxel whose center is nearest to `p`, clamped into the grid.
fn snap_oracle(spec: &GridSpec, p: [f64; 3]) -> [usize; 3] {
    let (o, r, n) = (spec.origin(), spec.resolution(), spec.dims());
    [0, 1, 2].map(|a| (((p[a] - o[a]) / r).round().max(0.0) as usize).min(n[a] - 1) + 1)
}

fn distance(a: [f64; 3], b: [f64; 3], planar: bool) -> f64 {
    let dz = if planar { 0.0 } else { a[2] - b[2] };
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + dz * dz).sqrt()
}

fn random_point(rng: &mut ChaCha8Rng, spec: &GridSpec) -> [f64; 3] {
    let (lo, hi) = spec.bounds();
    // reach a little past the grid so clamping is exercised
    [0, 1, 2].map(|a| {
        let pad = 0.1 * (hi[a] - lo[a]) + spec.resolution();
        rng.random_range(lo[a] - pad..hi[a] + pad)
    })
}

/// Largest deviation between the engine and a per-voxel oracle.
fn max_deviation(h: &Heatmap, oracle: impl Fn([f64; 3]) -> f64) -> f64 {
    let spec = *h.spec();
    let [nx, ny, nz] = spec.dims();
    let mut worst = 0.0f64;
    for x in 1..=nx {
        for y in 1..=ny {
            for z in 1..=nz {
                let got = h.get(VoxelIndex::new(x, y, z)).unwrap();
                let want = oracle(center_of(&spec, [x, y, z]));
                worst = worst.max((got - want).abs());
            }
        }
    }
    worst
}

fn heatmap_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x4ea7);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name, dev: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(dev);
    };
    for _ in 0..50 {
        let spec = random_spec(&mut rng);
        let eps = rng.random_range(0.005..2.0);

        let p = random_point(&mut rng, &spec);
        let a = center_of(&spec, snap_oracle(&spec, p));
        for (name, planar) in [("pose/planar", true), ("pose/full", false)] {
            let h = if planar {
                heatmap_from_pose(spec, p, eps)
            } else {
                heatmap_from_pose_with(spec, p, eps, DistanceMode::Full)
            }
            .unwrap();
            record(name, max_deviation(&h, |c| (1.0 - eps * distance(c, a, planar)).max(0.0)));
        }

        let n = rng.random_range(0..8);
        let [nx, ny, nz] = spec.dims();
        let hits: Vec<VoxelIndex> = (0..n)
            .map(|_| VoxelIndex::new(rng.random_range(1..=nx), rng.random_range(1..=ny), rng.random_range(1..=nz)))
            .collect();
        let hit_centers: Vec<[f64; 3]> = hits.iter().map(|v| center_of(&spec, v.as_array())).collect();
        for (name, planar) in [("points/full", false), ("points/planar", true)] {
            let h = if planar {
                heatmap_from_points_with(spec, &hits, eps, DistanceMode::Planar)
            } else {
                heatmap_from_points(spec, &hits, eps)
            }
            .unwrap();
            if hits.is_empty() && !h.is_empty_input() {
                record(name, f64::INFINITY);
            }
            record(
                name,
                max_deviation(&h, |c| {
                    let d = hit_centers.iter().map(|q| distance(c, *q, planar)).fold(f64::INFINITY, f64::min);
                    if d.is_finite() {
                        (1.0 - eps * d).max(0.0)
                    } else {
                        0.0
                    }
                }),
            );
        }

        let raw: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm = min_max_normalize(&raw);
        let norm_dev = raw
            .iter()
            .zip(&norm)
            .map(|(r, s)| if hi > lo { (s - (r - lo) / (hi - lo)).abs() } else { (s - 1.0).abs() })
            .fold(0.0, f64::max);
        record("normalize", norm_dev);
        let scored: Vec<ScoredPosition> = norm
            .iter()
            .map(|&score| ScoredPosition {
                position: random_point(&mut rng, &spec),
                score,
            })
            .collect();
        let anchors: Vec<([f64; 3], f64)> = scored
            .iter()
            .map(|s| (center_of(&spec, snap_oracle(&spec, s.position)), s.score))
            .collect();
        for (name, planar) in [("scored/planar", true), ("scored/full", false)] {
            let h = if planar {
                heatmap_from_scored(spec, &scored, eps)
            } else {
                heatmap_from_scored_with(spec, &scored, eps, DistanceMode::Full)
            }
            .unwrap();
            record(
                name,
                max_deviation(&h, |c| {
                    anchors
                        .iter()
                        .map(|(a, s)| s - eps * distance(c, *a, planar))
                        .fold(f64::NEG_INFINITY, f64::max)
                        .max(0.0)
                }),
            );
        }

        let maps: Vec<Heatmap> = (0..rng.random_range(2..=4))
            .map(|_| {
                let s = [ScoredPosition {
                    position: random_point(&mut rng, &spec),
                    score: rng.random_range(0.0..=1.0),
                }];
                heatmap_from_scored_with(spec, &s, rng.random_range(0.005..0.5), DistanceMode::Full).unwrap()
            })
            .collect();
        let refs: Vec<&Heatmap> = maps.iter().collect();
        let fused = fuse(&refs).unwrap();
        let fuse_dev = (0..spec.voxel_count())
            .map(|i| {
                let product: f64 = maps.iter().map(|m| m.values()[i]).product();
                (fused.values()[i] - product).abs()
            })
            .fold(0.0, f64::max);
        record("fuse", fuse_dev);
    }
    let summary = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (k, v) in &worst {
        let tol = if *k == "fuse" { 1e-12 } else { 1e-9 };
        ensure!(*v <= tol, "{k} deviates by {v:e} (tolerance {tol:e}); {summary}");
    }
    within_budget(start, Duration::from_secs(60), format!("50 instances per constructor, max deviation: {summary}"))
}

// ------------------------------------------------------------ decay defaults

fn unit(space: EmbeddingSpace, dim: usize, i: usize) -> EmbeddingVector {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    EmbeddingVector::normalized(space, v).unwrap()
}

fn decay_defaults() -> Verdict {
    let d = DecayConfig::default();
    ensure!(
        d.epsilon_primary == 0.1 && d.epsilon_auxiliary == 0.01,
        "defaults are {d:?}"
    );
    let grid = GridSpec::new([60, 20, 10], 0.1, [0.0; 3]).unwrap();
    let labels = ["window", "other", "floor", "wall", "ceiling"];
    let object = VoxelIndex::new(6, 6, 3);
    let voxels =
        VoxelFeatureMap::from_parts(grid, labels.len(), vec![(object, 1, unit(EmbeddingSpace::PixelText, 5, 0).values().to_vec())])
            .unwrap();
    let sound_at = grid.voxel_to_world(VoxelIndex::new(6, 6, 3));
    let audio = vec![AudioSegment {
        start_s: 0.0,
        end_s: 1.0,
        pose: Pose::translation(sound_at),
        embedding: unit(EmbeddingSpace::AudioText, 2, 0),
    }];
    let metadata = MapMetadata {
        provider_id: "decay-check".into(),
        provider_version: "1".into(),
        labels: vec!["window".into()],
        ingest: IngestConfig::new(grid),
        summary: BuildSummary::default(),
    };
    let map = MultimodalMap::new(metadata, voxels, vec![], vec![], audio).unwrap();
    let mut store = FixtureStore::new(ProviderManifest {
        provider_id: "decay-check".into(),
        version: "1".into(),
        modalities: vec![Modality::Text],
        spaces: vec![
            SpaceDecl {
                space: EmbeddingSpace::PixelText,
                dim: 5,
            },
            SpaceDecl {
                space: EmbeddingSpace::AudioText,
                dim: 2,
            },
        ],
        text_spaces: vec![EmbeddingSpace::PixelText, EmbeddingSpace::AudioText],
        sample_rates: vec![],
        dense_stride: 1,
    })
    .unwrap();
    for (i, l) in labels.iter().enumerate() {
        store.insert_text(l, unit(EmbeddingSpace::PixelText, 5, i)).unwrap();
    }
    store.insert_text("glass breaking", unit(EmbeddingSpace::AudioText, 2, 0)).unwrap();
    let images: std::collections::HashMap<String, RgbImage> = Default::default();
    let program = dsl::parse(
        "major_obj = get_major_map(obj=\"window\")\nctx_obj = get_map(obj=\"window\")\n\
         major_sound = get_major_map(sound=\"glass breaking\")\nctx_sound = get_map(sound=\"glass breaking\")\n",
    )
    .unwrap();
    let ev = dsl::evaluate(&program, &EvalContext::new(&map, &store, &images)).map_err(|e| e.to_string())?;
    let probe = VoxelIndex::new(36, 6, 3);
    let at_3m = distance(grid.voxel_to_world(probe), grid.voxel_to_world(object), false);
    ensure!((at_3m - 3.0).abs() < 1e-12, "probe is {at_3m} m away");
    let mut readings = Vec::new();
    for (name, want) in [("major_obj", 0.7), ("ctx_obj", 0.97), ("major_sound", 0.7), ("ctx_sound", 0.97)] {
        let h = &ev.heatmaps.iter().find(|(n, _)| n == name).ok_or(format!("{name} not bound"))?.1;
        let got = h.get(probe).unwrap();
        ensure!((got - want).abs() < 1e-9, "{name} reads {got} at 3 m, expected {want}");
        readings.push(format!("{name} {got:.4}"));
    }
    Ok(format!("epsilon 0.1 / 0.01; at 3 m: {}", readings.join(", ")))
}

// ------------------------------------------------------- noiseless pipeline

fn noiseless_exactness() -> Verdict {
    let start = Instant::now();
    let cfg = BenchConfig {
        seed: 101,
        sigmas: vec![0.0],
        scenes: 4,
        scene: SceneConfig {
            label_cosine: 0.0,
            sigma: 0.0,
            ..SceneConfig::default()
        },
        families: TaskFamily::ALL.to_vec(),
        navigation: Some(NavConfig {
            episodes_per_scene: 4,
            subgoals: 3,
        }),
    };
    let report = run_bench(&cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for f in TaskFamily::ALL {
        let row = report.row(0.0, f, Method::Fused).ok_or(format!("no row for {}", f.name()))?;
        let r1 = row.stats.recall[0];
        ensure!(row.stats.trials > 0 && r1 == 1.0, "{} recall@0.5 m {:.1}% over {} trials", f.name(), 100.0 * r1, row.stats.trials);
        parts.push(format!("{} {}/{}", f.name(), row.stats.trials, row.stats.trials));
    }
    let nav = report.navigation.first().ok_or("no navigation row")?;
    ensure!(
        nav.reachable_goals > 0 && nav.single_goal_success == 1.0,
        "single-goal success {:.1}% over {} reachable goals",
        100.0 * nav.single_goal_success,
        nav.reachable_goals
    );
    within_budget(
        start,
        Duration::from_secs(300),
        format!(
            "recall@0.5 m 100% ({}); navigation 100% of {} reachable goals",
            parts.join(", "),
            nav.reachable_goals
        ),
    )
}

// ---------------------------------------------------------- disambiguation

fn disambiguation() -> Verdict {
    let scene = SceneConfig::default();
    let dups = scene.sound_copies;
    let cfg = BenchConfig {
        seed: 202,
        sigmas: vec![0.0, 0.1, 0.3],
        scenes: 25,
        scene,
        families: vec![TaskFamily::ObjectSound],
        navigation: None,
    };
    let report = run_bench(&cfg).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for &s in &cfg.sigmas {
        let fused = report.row(s, TaskFamily::ObjectSound, Method::Fused).ok_or("missing fused row")?;
        let single = report.row(s, TaskFamily::ObjectSound, Method::Single).ok_or("missing sound-only row")?;
        let (f, o) = (fused.stats.recall[0], single.stats.recall[0]);
        ensure!(fused.stats.trials >= 200, "only {} trials at sigma {s}", fused.stats.trials);
        if s == 0.0 {
            let cap = 1.0 / dups as f64 + 0.10;
            ensure!(f == 1.0, "sigma 0: fused {:.1}%", 100.0 * f);
            ensure!(o <= cap, "sigma 0: sound-only {:.1}% above {:.1}%", 100.0 * o, 100.0 * cap);
        } else {
            ensure!(f > o, "sigma {s}: fused {:.1}% not above sound-only {:.1}%", 100.0 * f, 100.0 * o);
        }
        parts.push(format!("sigma {s}: fused {:.1}% vs sound-only {:.1}% ({} trials)", 100.0 * f, 100.0 * o, fused.stats.trials));
    }
    Ok(format!("{dups} copies per sound; {}", parts.join("; ")))
}

// -------------------------------------------------------------------- PnP

fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    a.orientation.angle_to(&b.orientation).to_degrees()
}

fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.position - b.position).norm()
}

fn pnp() -> Verdict {
    let start = Instant::now();
    let room: [f64; 3] = [10.0, 10.0, 2.5];
    let diameter = (room[0] * room[0] + room[1] * room[1] + room[2] * room[2]).sqrt();
    let (rot_tol, trans_tol) = (0.1, 1e-4 * diameter);
    let k = Intrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e9);
    let (mut worst_clean, mut worst_outlier) = ((0.0f64, 0.0f64), (0.0f64, 0.0f64));
    for trial in 0..20 {
        let truth = Pose::from_parts(
            Vector3::new(rng.random_range(0.0..room[0]), rng.random_range(0.0..room[1]), rng.random_range(0.5..2.0)),
            UnitQuaternion::from_euler_angles(
                rng.random_range(-PI..PI),
                rng.random_range(-0.5..0.5),
                rng.random_range(-PI..PI),
            ),
        );
        let mut world = Vec::new();
        let mut pixels = Vec::new();
        for _ in 0..30 {
            let (u, v) = (rng.random_range(0.0..639.0), rng.random_range(0.0..479.0));
            let depth = rng.random_range(1.0..8.0);
            world.push(truth.transform_point(&Point3::from(k.unproject(u, v) * depth)));
            pixels.push(Point2::new(u, v));
        }
        let cfg = PnpConfig {
            seed: trial,
            ..PnpConfig::default()
        };
        let clean = solve_pnp_ransac(&world[..20], &pixels[..20], &k, &cfg).map_err(|e| format!("clean trial {trial}: {e}"))?;
        let err = (rotation_error_deg(&clean.pose, &truth), translation_error(&clean.pose, &truth));
        ensure!(err.0 < rot_tol && err.1 < trans_tol, "clean trial {trial}: {:.2e} deg, {:.2e} m", err.0, err.1);
        worst_clean = (worst_clean.0.max(err.0), worst_clean.1.max(err.1));

        // 9 of 30 correspondences get a pixel at least 20 px from the truth
        let mut outlier = [false; 30];
        for i in rand::seq::index::sample(&mut rng, 30, 9) {
            outlier[i] = true;
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let r = rng.random_range(20.0..200.0);
            pixels[i] += nalgebra::Vector2::new(r * angle.cos(), r * angle.sin());
        }
        let noisy = solve_pnp_ransac(&world, &pixels, &k, &cfg).map_err(|e| format!("outlier trial {trial}: {e}"))?;
        let err = (rotation_error_deg(&noisy.pose, &truth), translation_error(&noisy.pose, &truth));
        ensure!(err.0 < rot_tol && err.1 < trans_tol, "outlier trial {trial}: {:.2e} deg, {:.2e} m", err.0, err.1);
        let wrong = (0..30).filter(|&i| noisy.inliers[i] == outlier[i]).count();
        ensure!(wrong == 0, "outlier trial {trial}: {wrong} correspondences misclassified");
        worst_outlier = (worst_outlier.0.max(err.0), worst_outlier.1.max(err.1));
    }

    let built = BuiltScene::build(Scene::generate(&SceneConfig::default(), 31).map_err(|e| e.to_string())?, 31)
        .map_err(|e| e.to_string())?;
    let kfs = &built.map.keyframes;
    let mut worst_self = (0.0f64, 0.0f64);
    let mut checked = 0;
    for i in (0..kfs.len()).step_by(5) {
        let image = &built.synthesis.stream.frames[kfs[i].frame_index].image;
        let fix = localize_image(kfs, &built.synthesis.store, image, Some(&built.synthesis.intrinsics), &LocalizeConfig::default())
            .map_err(|e| format!("keyframe {i}: {e}"))?;
        let err = (rotation_error_deg(&fix.pose, &kfs[i].pose), translation_error(&fix.pose, &kfs[i].pose));
        ensure!(err.0 < rot_tol && err.1 < trans_tol, "keyframe {i}: {:.2e} deg, {:.2e} m", err.0, err.1);
        worst_self = (worst_self.0.max(err.0), worst_self.1.max(err.1));
        checked += 1;
    }
    within_budget(
        start,
        Duration::from_secs(60),
        format!(
            "worst error: clean {:.1e} deg / {:.1e} m, 30% outliers {:.1e} deg / {:.1e} m, \
             {checked} keyframes relocalized {:.1e} deg / {:.1e} m (tolerance {rot_tol} deg / {trans_tol:.1e} m)",
            worst_clean.0, worst_clean.1, worst_outlier.0, worst_outlier.1, worst_self.0, worst_self.1
        ),
    )
}

// ----------------------------------------------------------------- audio

fn audio_segmentation() -> Verdict {
    let cfg = SegmentationConfig::default();
    let rate = 16_000u32;
    let mut rng = ChaCha8Rng::seed_from_u64(0xa0d10);
    let mut worst = 0.0f64;
    let mut total = 0;
    for pattern in 0..20 {
        let tones = rng.random_range(1..=5);
        let mut samples: Vec<i16> = Vec::new();
        let mut truth = Vec::new();
        let silence = |samples: &mut Vec<i16>, rng: &mut ChaCha8Rng, secs: f64| {
            for _ in 0..(secs * rate as f64) as usize {
                samples.push(rng.random_range(-8..=8));
            }
        };
        let lead = rng.random_range(0.2..1.0);
        silence(&mut samples, &mut rng, lead);
        for t in 0..tones {
            let len = rng.random_range(0.4..1.5);
            let amp = rng.random_range(0.05..0.8) * i16::MAX as f64;
            let freq = rng.random_range(200.0..2000.0);
            let start = samples.len() as f64 / rate as f64;
            for n in 0..(len * rate as f64) as usize {
                let t = n as f64 / rate as f64;
                samples.push((amp * (std::f64::consts::TAU * freq * t).sin()).round() as i16);
            }
            truth.push((start, samples.len() as f64 / rate as f64));
            let gap = if t + 1 == tones { rng.random_range(0.2..1.0) } else { rng.random_range(0.7..1.5) };
            silence(&mut samples, &mut rng, gap);
        }
        let found = detect_segments(&samples, rate, &cfg);
        ensure!(found.len() == truth.len(), "pattern {pattern}: {} segments for {} tones", found.len(), truth.len());
        for (f, (s, e)) in found.iter().zip(&truth) {
            let dev = (f.start_s - s).abs().max((f.end_s - e).abs());
            ensure!(
                dev <= cfg.window_s,
                "pattern {pattern}: [{:.3}, {:.3}] vs tone [{s:.3}, {e:.3}]",
                f.start_s,
                f.end_s
            );
            worst = worst.max(dev);
        }
        total += truth.len();
    }
    Ok(format!(
        "20 patterns, {total} tones, all counts exact, worst boundary error {:.4} s (window {} s)",
        worst, cfg.window_s
    ))
}

// --------------------------------------------------------------- planner

/// Uniform-cost search with unit straight and sqrt(2) diagonal steps; a
/// diagonal step needs both cells it cuts past to be free. Costs are queued
/// as bit patterns, which order like the non-negative floats they encode.
fn ucs(free: &[bool], n: usize, s: (usize, usize), g: (usize, usize)) -> Option<f64> {
    let mut best = vec![f64::INFINITY; n * n];
    let mut queue = BinaryHeap::new();
    best[s.0 * n + s.1] = 0.0;
    queue.push((Reverse(0.0f64.to_bits()), s));
    while let Some((Reverse(c), (x, y))) = queue.pop() {
        let c = f64::from_bits(c);
        if (x, y) == g {
            return Some(c);
        }
        if c > best[x * n + y] {
            continue;
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (tx, ty) = (x as i64 + dx, y as i64 + dy);
                if tx < 0 || ty < 0 || tx >= n as i64 || ty >= n as i64 {
                    continue;
                }
                let (tx, ty) = (tx as usize, ty as usize);
                if !free[tx * n + ty] {
                    continue;
                }
                let step = if dx != 0 && dy != 0 {
                    if !free[tx * n + y] || !free[x * n + ty] {
                        continue;
                    }
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let nc = c + step;
                if nc < best[tx * n + ty] {
                    best[tx * n + ty] = nc;
                    queue.push((Reverse(nc.to_bits()), (tx, ty)));
                }
            }
        }
    }
    None
}

fn planner() -> Verdict {
    let n = 64;
    let res = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(0x91a);
    let (mut reachable, mut blocked, mut worst) = (0, 0, 0.0f64);
    for trial in 0..100 {
        let density = rng.random_range(0.05..0.4);
        let free: Vec<bool> = (0..n * n).map(|_| rng.random::<f64>() >= density).collect();
        let cells = free.iter().map(|&f| if f { Cell::Free } else { Cell::Occupied }).collect();
        let grid = OccupancyGrid::from_cells(n, n, res, [0.0, 0.0], cells).unwrap();
        let pick = |rng: &mut ChaCha8Rng| loop {
            let c = (rng.random_range(0..n), rng.random_range(0..n));
            if free[c.0 * n + c.1] {
                break c;
            }
        };
        let (s, g) = (pick(&mut rng), pick(&mut rng));
        match (plan_path(&grid, s, g), ucs(&free, n, s, g)) {
            (Ok(path), Some(cost)) => {
                let dev = (path.cost - cost * res).abs();
                ensure!(dev < 1e-9, "grid {trial}: A* {} m vs UCS {} m", path.cost, cost * res);
                worst = worst.max(dev);
                reachable += 1;
            }
            (Err(PlanError::NoPath), None) => blocked += 1,
            (a, b) => return Err(format!("grid {trial}: A* {a:?} but UCS {b:?}")),
        }
    }
    let goal = [2.0, 3.0, 0.5];
    let at = |d: f64| [goal[0] + d * 0.6, goal[1] + d * 0.8, 1.7];
    ensure!(judge_success(at(0.99), goal, 1.0), "0.99 m judged a failure");
    ensure!(!judge_success(at(1.01), goal, 1.0), "1.01 m judged a success");
    ensure!(!judge_success([goal[0] + 1.0, goal[1], goal[2]], goal, 1.0), "exactly 1 m judged a success");
    Ok(format!(
        "100 grids ({reachable} reachable, {blocked} disconnected), worst cost deviation {worst:.1e} m; \
         success at 0.99 m, failure at 1.01 m and 1.00 m"
    ))
}

// ------------------------------------------------------------------- DSL

const WINDOW: &str = r#"# move to the window next to the sound of glass breaking
obj_map = robot.get_major_map(obj="window")
sound_map = robot.get_map(sound="glass breaking")
fuse_map = obj_map * sound_map
pos = robot.get_max_pos_3d(fuse_map)
robot.move_to(pos)
"#;

const HIGHLIGHTED: &str = r#"# move to the highlighted area, near the backpack next to the glass breaking
img = robot.load_image("./006899.png")
img_map = robot.get_major_map(img=img)
obj_map = robot.get_major_map(obj="backpack")
sound_map = robot.get_map(sound="glass breaking")
fuse_map = obj_map * sound_map
pos1 = robot.get_max_pos_3d(img_map)
pos2 = robot.get_max_pos_3d(fuse_map)
pos = (pos1 + pos2) / 2
robot.move_to(pos)
"#;

const CAT: &str = r#"# move between the cat sound and the place in the photo
img = robot.load_image("/path/to/image.png")
sound_map = robot.get_major_map(sound="cat meowing")
img_map = robot.get_major_map(img=img)
pos1 = robot.get_max_pos_3d(sound_map)
pos2 = robot.get_max_pos_3d(img_map)
pos = (pos1 + pos2) / 2
robot.move_to(pos)
"#;

fn dsl_programs() -> Verdict {
    let mut cfg = SceneConfig::default();
    cfg.ring_labels[0] = "window".into();
    cfg.ring_labels[1] = "backpack".into();
    cfg.sound_labels[0] = "glass breaking".into();
    cfg.sound_labels[1] = "cat meowing".into();
    let scene = Scene::generate(&cfg, 17).map_err(|e| e.to_string())?;
    let mut built = BuiltScene::build(scene, 17).map_err(|e| e.to_string())?;
    let photos = &mut built.synthesis.queries;
    let first = photos["query_000.png"].clone();
    let second = photos["query_001.png"].clone();
    photos.insert("./006899.png".into(), first);
    photos.insert("/path/to/image.png".into(), second);

    let mut goals = Vec::new();
    for (name, src) in [("window", WINDOW), ("highlighted", HIGHLIGHTED), ("cat", CAT)] {
        let program = dsl::parse(src).map_err(|e| format!("{name}: {e}"))?;
        let ev = dsl::evaluate(&program, &built.context()).map_err(|e| format!("{name}: {e}"))?;
        ensure!(ev.goals.len() == 1, "{name}: {} goals", ev.goals.len());
        ensure!(ev.goals[0].iter().all(|c| c.is_finite()), "{name}: goal {:?}", ev.goals[0]);
        goals.push((name, ev.goals[0]));
    }

    // the window goal is the window copy closest to a glass-breaking event
    let scene = &built.scene;
    let glass: Vec<[f64; 3]> = scene.sounds.iter().filter(|s| s.label == "glass breaking").map(|s| s.position).collect();
    let nearest_window = scene
        .objects
        .iter()
        .filter(|o| o.label == "window")
        .min_by(|a, b| {
            let d = |o: &modalmap_bench::scene::SceneObject| {
                glass.iter().map(|g| distance(o.center, *g, true)).fold(f64::INFINITY, f64::min)
            };
            d(a).total_cmp(&d(b))
        })
        .ok_or("scene has no window")?;
    let off = distance(goals[0].1, nearest_window.center, true);
    ensure!(off < 0.5, "window goal is {off:.2} m from the window nearest the glass");

    let mut rng = ChaCha8Rng::seed_from_u64(0xd51);
    for i in 0..100 {
        let len = rng.random_range(1..=8);
        let p = modalmap::dsl::random::random_program(&mut rng, len);
        let text = dsl::pretty_print(&p);
        let back = dsl::parse(&text).map_err(|e| format!("fuzzed program {i} does not reparse: {e}\n{text}"))?;
        ensure!(back.without_spans() == p.without_spans(), "fuzzed program {i} changes on round trip:\n{text}");
        ensure!(dsl::pretty_print(&back) == text, "fuzzed program {i} prints differently after reparsing");
    }
    let shown: Vec<String> = goals
        .iter()
        .map(|(n, g)| format!("{n} -> ({:.2}, {:.2}, {:.2})", g[0], g[1], g[2]))
        .collect();
    Ok(format!("{}; 100 fuzzed programs round-trip", shown.join(", ")))
}

// ----------------------------------------------------------- determinism

fn modalmap(args: &[&str]) -> Result<Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_modalmap"))
        .args(args)
        .env_remove("MODALMAP_PROVIDER")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "modalmap {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn same_file(a: &Path, b: &Path) -> Result<usize, String> {
    let (x, y) = (std::fs::read(a).map_err(|e| e.to_string())?, std::fs::read(b).map_err(|e| e.to_string())?);
    ensure!(x == y, "{} and {} differ", a.display(), b.display());
    Ok(x.len())
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |s: &str| dir.join(s).to_string_lossy().into_owned();
    modalmap(&["gen", "--out", &p("scene"), "--seed", "9", "--sigma", "0.1"])?;
    let mut build_out = Vec::new();
    for (map, jobs) in [("a.map", "1"), ("b.map", "2")] {
        let out = modalmap(&[
            "--jobs",
            jobs,
            "build",
            "--stream",
            &p("scene/stream"),
            "--fixtures",
            &p("scene/fixtures"),
            "--config",
            &p("scene/ingest.json"),
            "--out",
            &p(map),
        ])?;
        build_out.push(out.stdout);
    }
    ensure!(build_out[0] == build_out[1], "build summaries differ");
    let map_bytes = same_file(&dir.join("a.map"), &dir.join("b.map"))?;

    let mut bench_out = Vec::new();
    for (out_dir, jobs) in [("bench-a", "1"), ("bench-b", "2")] {
        let out = modalmap(&[
            "--jobs", jobs, "bench", "--seed", "5", "--scenes", "2", "--sigmas", "0,0.3", "--episodes", "2", "--out",
            &p(out_dir),
        ])?;
        bench_out.push(out.stdout);
    }
    ensure!(bench_out[0] == bench_out[1], "bench output differs");
    let json = same_file(&dir.join("bench-a/report.json"), &dir.join("bench-b/report.json"))?;
    let text = same_file(&dir.join("bench-a/report.txt"), &dir.join("bench-b/report.txt"))?;
    Ok(format!(
        "build: identical summary and {map_bytes}-byte map; bench: identical stdout, report.json ({json} B), report.txt ({text} B)"
    ))
}

// ------------------------------------------------------------------ main

fn main() {
    let criteria: [Criterion; 9] = [
        ("heatmap oracle equivalence", heatmap_oracle),
        ("decay defaults", decay_defaults),
        ("noiseless exactness", noiseless_exactness),
        ("cross-modal disambiguation", disambiguation),
        ("PnP and visual localization", pnp),
        ("audio segmentation", audio_segmentation),
        ("planner", planner),
        ("goal programs", dsl_programs),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(detail) => println!("PASS  [{}] {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL  [{}] {name}: {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
