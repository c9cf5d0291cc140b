use std::collections::HashMap;

use image::RgbImage;
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::heatmap::DecayConfig;
use crate::ingest::{
    AreaFrame, AudioSegment, BuildSummary, DepthMap, IngestConfig, Intrinsics, KeyframeRecord, VoxelFeatureMap,
};
use crate::map::{MapMetadata, MultimodalMap};
use crate::provider::{
    EmbeddingSpace, EmbeddingVector, FixtureStore, Keypoint, KeypointSet, Modality, ProviderManifest, SpaceDecl,
};
use crate::spatial::{GridSpec, Pose, VoxelIndex};

const PIXEL_LABELS: [&str; 9] = [
    "window", "backpack", "table", "lamp", "vase", "other", "floor", "wall", "ceiling",
];
const SOUNDS: [&str; 2] = ["glass breaking", "cat meowing"];

fn unit(space: EmbeddingSpace, dim: usize, i: usize) -> EmbeddingVector {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    EmbeddingVector::normalized(space, v).unwrap()
}

/// Voxel whose center is the given world position (grid origin at 0).
fn vox(x: f64, y: f64, z: f64) -> VoxelIndex {
    let i = |c: f64| (c / 0.1).round() as usize + 1;
    VoxelIndex::new(i(x), i(y), i(z))
}

struct Fixture {
    map: MultimodalMap,
    store: FixtureStore,
    images: HashMap<String, RgbImage>,
    keyframe_pos: [f64; 3],
}

/// 6 m x 6 m x 1 m room at 0.1 m. Windows at (0.9, 4.9) and (4.9, 0.9),
/// backpacks at (1.4, 1.4) and (4.4, 4.4), a table at (2.0, 5.0), a lamp at
/// the origin and a vase at (2, 2, 0). Glass breaking is heard at (4.5, 2.7),
/// a cat at (1.0, 3.0). One keyframe at (3, 3).
fn fixture() -> Fixture {
    let grid = GridSpec::new([60, 60, 10], 0.1, [0.0; 3]).unwrap();
    let dim = PIXEL_LABELS.len();
    let object_at = [
        (0, [0.9, 4.9, 0.5]),
        (0, [4.9, 0.9, 0.5]),
        (1, [1.4, 1.4, 0.3]),
        (1, [4.4, 4.4, 0.3]),
        (2, [2.0, 5.0, 0.4]),
        (3, [0.0, 0.0, 0.0]),
        (4, [2.0, 2.0, 0.0]),
    ];
    let mut entries: Vec<(VoxelIndex, u32, Vec<f32>)> = object_at
        .iter()
        .map(|(label, p)| (vox(p[0], p[1], p[2]), 1, unit(EmbeddingSpace::PixelText, dim, *label).values().to_vec()))
        .collect();
    // floor under the room, away from planted objects
    for x in (5..55).step_by(7) {
        for y in (5..55).step_by(7) {
            let v = VoxelIndex::new(x, y, 1);
            if !entries.iter().any(|e| e.0 == v) {
                entries.push((v, 1, unit(EmbeddingSpace::PixelText, dim, 6).values().to_vec()));
            }
        }
    }
    entries.sort_by_key(|e| grid.linear(e.0));
    let voxels = VoxelFeatureMap::from_parts(grid, dim, entries).unwrap();

    let audio = vec![
        AudioSegment {
            start_s: 1.0,
            end_s: 2.0,
            pose: Pose::translation([4.5, 2.7, 1.2]),
            embedding: unit(EmbeddingSpace::AudioText, 4, 0),
        },
        AudioSegment {
            start_s: 5.0,
            end_s: 6.0,
            pose: Pose::translation([1.0, 3.0, 1.2]),
            embedding: unit(EmbeddingSpace::AudioText, 4, 1),
        },
    ];
    let areas = vec![
        AreaFrame {
            frame_index: 0,
            timestamp: 0.0,
            pose: Pose::translation([1.0, 1.0, 1.2]),
            embedding: unit(EmbeddingSpace::FrameText, 4, 0),
        },
        AreaFrame {
            frame_index: 1,
            timestamp: 1.0,
            pose: Pose::translation([5.0, 5.0, 1.2]),
            embedding: unit(EmbeddingSpace::FrameText, 4, 1),
        },
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let k = Intrinsics::new(40.0, 40.0, 32.0, 24.0, 64, 48).unwrap();
    let kf_pose = Pose::from_parts(
        Vector3::new(3.0, 3.0, 1.2),
        UnitQuaternion::from_euler_angles(-std::f64::consts::FRAC_PI_2, 0.0, 0.0),
    );
    let depth = DepthMap::new(64, 48, (0..64 * 48).map(|_| rng.random_range(1.0f32..3.0)).collect()).unwrap();
    let mut pixels = std::collections::BTreeSet::new();
    while pixels.len() < 40 {
        pixels.insert((rng.random_range(1u32..63), rng.random_range(1u32..47)));
    }
    let kps: Vec<Keypoint> = pixels
        .iter()
        .map(|&(u, v)| Keypoint {
            u: u as f32,
            v: v as f32,
            score: 1.0,
        })
        .collect();
    let descs: Vec<f32> = (0..40)
        .flat_map(|_| {
            let d: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            crate::provider::normalize_f32(&d).unwrap()
        })
        .collect();
    let keypoints = KeypointSet::new(64, 48, 8, kps, descs).unwrap();
    let retrieval = unit(EmbeddingSpace::Retrieval, 4, 2);
    let keyframes = vec![KeyframeRecord {
        frame_index: 0,
        timestamp: 0.0,
        pose: kf_pose,
        retrieval: retrieval.clone(),
        keypoints: keypoints.clone(),
        depth,
        intrinsics: k,
    }];

    let mut store = FixtureStore::new(ProviderManifest {
        provider_id: "fixture".into(),
        version: "1".into(),
        modalities: vec![Modality::Text, Modality::ImageRetrieval, Modality::Keypoints],
        spaces: vec![
            SpaceDecl {
                space: EmbeddingSpace::PixelText,
                dim,
            },
            SpaceDecl {
                space: EmbeddingSpace::FrameText,
                dim: 4,
            },
            SpaceDecl {
                space: EmbeddingSpace::AudioText,
                dim: 4,
            },
            SpaceDecl {
                space: EmbeddingSpace::Retrieval,
                dim: 4,
            },
            SpaceDecl {
                space: EmbeddingSpace::LocalFeature,
                dim: 8,
            },
        ],
        text_spaces: vec![EmbeddingSpace::PixelText, EmbeddingSpace::FrameText, EmbeddingSpace::AudioText],
        sample_rates: vec![],
        dense_stride: 1,
    })
    .unwrap();
    for (i, l) in PIXEL_LABELS.iter().enumerate() {
        store.insert_text(l, unit(EmbeddingSpace::PixelText, dim, i)).unwrap();
    }
    for (i, s) in SOUNDS.iter().enumerate() {
        store.insert_text(s, unit(EmbeddingSpace::AudioText, 4, i)).unwrap();
    }
    store.insert_text("kitchen", unit(EmbeddingSpace::FrameText, 4, 1)).unwrap();
    let img = RgbImage::from_pixel(64, 48, image::Rgb([10, 20, 30]));
    store.insert_image_retrieval(&img, retrieval).unwrap();
    store.insert_keypoints(&img, keypoints).unwrap();
    let mut images = HashMap::new();
    images.insert("./006899.png".to_string(), img.clone());
    images.insert("/path/to/image.png".to_string(), img);

    let metadata = MapMetadata {
        provider_id: "fixture".into(),
        provider_version: "1".into(),
        labels: PIXEL_LABELS[..5].iter().map(|s| s.to_string()).collect(),
        ingest: IngestConfig::new(grid),
        summary: BuildSummary::default(),
    };
    let map = MultimodalMap::new(metadata, voxels, keyframes, areas, audio).unwrap();
    Fixture {
        map,
        store,
        images,
        keyframe_pos: grid.voxel_to_world(vox(3.0, 3.0, 0.0)),
    }
}

fn run(f: &Fixture, src: &str) -> Result<Evaluation, DslError> {
    let program = parse(src)?;
    evaluate(&program, &EvalContext::new(&f.map, &f.store, &f.images))
}

fn assert_close(a: [f64; 3], b: [f64; 3], tol: f64) {
    for i in 0..3 {
        assert!((a[i] - b[i]).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn center(x: f64, y: f64, z: f64) -> [f64; 3] {
    let v = vox(x, y, z);
    [(v.x - 1) as f64 * 0.1, (v.y - 1) as f64 * 0.1, (v.z - 1) as f64 * 0.1]
}

const WINDOW: &str = r#"# move to the window next to the sound of glass breaking
obj_map = robot.get_major_map(obj="window")
sound_map = robot.get_map(sound="glass breaking")
fuse_map = obj_map * sound_map
pos = robot.get_max_pos_3d(fuse_map)
robot.move_to(pos)
"#;

const HIGHLIGHTED: &str = r#"img = robot.load_image("./006899.png")
img_map = robot.get_major_map(img=img)
obj_map = robot.get_major_map(obj="backpack")
sound_map = robot.get_map(sound="glass breaking")
fuse_map = obj_map * sound_map
pos1 = robot.get_max_pos_3d(img_map)
pos2 = robot.get_max_pos_3d(fuse_map)
pos = (pos1 + pos2) / 2
robot.move_to(pos)
"#;

const CAT: &str = r#"img = robot.load_image("/path/to/image.png")
sound_map = robot.get_major_map(sound="cat meowing")
img_map = robot.get_major_map(img=img)
pos1 = robot.get_max_pos_3d(sound_map)
pos2 = robot.get_max_pos_3d(img_map)
pos = (pos1 + pos2) / 2
robot.move_to(pos)
"#;

#[test]
fn window_program_picks_the_window_near_the_sound() {
    let f = fixture();
    let ev = run(&f, WINDOW).unwrap();
    assert_eq!(ev.goals.len(), 1);
    assert_close(ev.goals[0], center(4.9, 0.9, 0.5), 1e-9);
}

#[test]
fn highlighted_program_goes_between_image_and_backpack() {
    let f = fixture();
    let ev = run(&f, HIGHLIGHTED).unwrap();
    assert_eq!(ev.goals.len(), 1);
    let b = center(4.4, 4.4, 0.3);
    let k = f.keyframe_pos;
    assert_close(ev.goals[0], [(b[0] + k[0]) / 2.0, (b[1] + k[1]) / 2.0, (b[2] + k[2]) / 2.0], 1e-9);
}

#[test]
fn cat_program_goes_between_sound_and_image() {
    let f = fixture();
    let ev = run(&f, CAT).unwrap();
    let c = center(1.0, 3.0, 0.0);
    let k = f.keyframe_pos;
    assert_close(ev.goals[0], [(c[0] + k[0]) / 2.0, (c[1] + k[1]) / 2.0, 0.0], 1e-9);
}

#[test]
fn single_planted_object_is_the_goal() {
    let f = fixture();
    let ev = run(&f, "m=get_map(obj=\"table\"); move_to(max_pos(m))").unwrap();
    assert_close(ev.goals[0], center(2.0, 5.0, 0.4), 0.1 + 1e-9);
}

#[test]
fn midpoint_of_two_known_positions() {
    let f = fixture();
    let ev = run(&f, "a = max_pos(get_major_map(obj=\"lamp\"))\nb = max_pos(get_major_map(obj=\"vase\"))\nmove_to((a + b) / 2)").unwrap();
    assert_close(ev.goals[0], [1.0, 1.0, 0.0], 1e-12);
}

#[test]
fn area_queries_use_frame_positions() {
    let f = fixture();
    let ev = run(&f, "move_to(max_pos(get_major_map(area=\"kitchen\")))").unwrap();
    assert_close(ev.goals[0], [5.0, 5.0, 0.0], 1e-9);
}

#[test]
fn disjoint_fusion_is_degenerate_at_max_pos() {
    let f = fixture();
    let program = parse("a = get_major_map(obj=\"lamp\")\nb = get_major_map(obj=\"table\")\nc = a * b\np = max_pos(c)").unwrap();
    let mut ctx = EvalContext::new(&f.map, &f.store, &f.images);
    ctx.decay = DecayConfig {
        epsilon_primary: 2.0,
        epsilon_auxiliary: 2.0,
    };
    let err = evaluate(&program, &ctx).unwrap_err();
    assert!(matches!(err, DslError::Degenerate { line: 4, col: 5 }), "{err:?}");
}

#[test]
fn decay_rates_read_back() {
    let f = fixture();
    let ev = run(&f, "a = get_major_map(obj=\"lamp\")\nb = get_map(obj=\"lamp\")").unwrap();
    let probe = VoxelIndex::new(31, 1, 1); // 3 m from the lamp
    assert!((ev.heatmaps[0].1.get(probe).unwrap() - 0.7).abs() < 1e-12);
    assert!((ev.heatmaps[1].1.get(probe).unwrap() - 0.97).abs() < 1e-12);
}

#[test]
fn decay_choice_keeps_the_peak_set() {
    let f = fixture();
    for obj in ["window", "backpack", "table"] {
        let ev = run(&f, &format!("a = get_major_map(obj=\"{obj}\")\nb = get_map(obj=\"{obj}\")")).unwrap();
        let ones = |i: usize| -> Vec<usize> {
            let h = &ev.heatmaps[i].1;
            (0..h.values().len()).filter(|&j| h.values()[j] == 1.0).collect()
        };
        assert_eq!(ones(0), ones(1));
        assert!(!ones(0).is_empty());
    }
}

#[test]
fn trace_lists_every_heatmap() {
    let f = fixture();
    let ev = run(&f, HIGHLIGHTED).unwrap();
    let heatmaps = ev.trace.iter().filter(|t| matches!(t.event, TraceEvent::Heatmap { .. })).count();
    assert_eq!(heatmaps, 4);
    let jsonl = ev.trace_jsonl();
    let lines: Vec<&str> = jsonl.lines().collect();
    assert_eq!(lines.len(), ev.trace.len());
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(first["kind"], "image");
    assert_eq!(first["expr"], "load_image(\"./006899.png\")");
}

#[test]
fn evaluation_is_deterministic() {
    let f = fixture();
    assert_eq!(run(&f, HIGHLIGHTED).unwrap(), run(&f, HIGHLIGHTED).unwrap());
}

#[test]
fn missing_text_fixture_is_modality_unavailable() {
    let f = fixture();
    let err = run(&f, "x = get_map(sound=\"dog barking\")").unwrap_err();
    assert!(matches!(err, DslError::ModalityUnavailable { modality: "sound", line: 1, col: 5, .. }));
    assert!(!err.is_static());
}

#[test]
fn missing_image_reported() {
    let f = fixture();
    assert!(matches!(run(&f, "x = load_image(\"nope.png\")"), Err(DslError::Image { .. })));
}

#[test]
fn division_by_zero_is_an_evaluation_error() {
    let f = fixture();
    let err = run(&f, "p = max_pos(get_map(obj=\"lamp\")) / 0").unwrap_err();
    assert!(matches!(err, DslError::DivisionByZero { .. }));
}

#[test]
fn printed_paper_programs_reparse() {
    for src in [WINDOW, HIGHLIGHTED, CAT] {
        let p = parse(src).unwrap();
        let printed = pretty_print(&p);
        assert_eq!(parse(&printed).unwrap().without_spans(), p.without_spans());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>(), len in 0usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let program = random::random_program(&mut rng, len);
        let printed = pretty_print(&program);
        let reparsed = parse(&printed).map_err(|e| TestCaseError::fail(format!("{e}\n{printed}")))?;
        prop_assert_eq!(reparsed.without_spans(), program);
        prop_assert_eq!(pretty_print(&reparsed), printed);
    }
}
