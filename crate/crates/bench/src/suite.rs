//! Building scenes into maps and scoring task programs and navigation on them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use modalmap::dsl::{self, DslError, EvalContext};
use modalmap::ingest::{build_map, IngestConfig};
use modalmap::map::MultimodalMap;
use modalmap::planner::{
    judge_success, nearest_free, plan_to, project_occupancy, OccupancyGrid, ProjectionConfig, RobotState,
    GOAL_SNAP_RADIUS_M, SUCCESS_RADIUS_M,
};
use modalmap::spatial::dist_xy;

use crate::report::{IndexRow, MetricReport, NavRow, RecallStats};
use crate::scene::{Scene, SceneConfig};
use crate::synth::{synthesize, Synthesis};
use crate::tasks::{tasks, Method, Task, TaskFamily};
use crate::BenchError;

pub const RECALL_THRESHOLDS_M: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// A scene with its synthetic observations, built map and occupancy grid.
#[derive(Debug, Clone)]
pub struct BuiltScene {
    pub scene: Scene,
    pub synthesis: Synthesis,
    pub map: MultimodalMap,
    pub occupancy: OccupancyGrid,
}

impl BuiltScene {
    pub fn build(scene: Scene, noise_seed: u64) -> Result<Self, BenchError> {
        let ingest = IngestConfig::new(scene.config.grid()?);
        let synthesis = synthesize(&scene, noise_seed, &ingest.segmentation)?;
        let (map, _) = build_map(&synthesis.stream, &synthesis.store, &ingest)?;
        let occupancy = project_occupancy(&map.voxels, &ProjectionConfig::default());
        Ok(Self {
            scene,
            synthesis,
            map,
            occupancy,
        })
    }

    pub fn context(&self) -> EvalContext<'_> {
        let mut ctx = EvalContext::new(&self.map, &self.synthesis.store, &self.synthesis.queries);
        ctx.query_intrinsics = Some(self.synthesis.intrinsics);
        ctx
    }

    /// Parses and evaluates a program, returning its first goal.
    pub fn run_program(&self, src: &str) -> Result<[f64; 3], DslError> {
        let program = dsl::parse(src)?;
        let ev = dsl::evaluate(&program, &self.context())?;
        Ok(ev.goals.first().copied().unwrap_or([f64::NAN; 3]))
    }

    /// Where episodes start: the first camera position, moved to the nearest
    /// free cell if the projection blocks it.
    pub fn start_state(&self) -> RobotState {
        let p = self.scene.trajectory[0].position;
        let mut position = [p[0], p[1]];
        if let Some(c) = self.occupancy.cell_of(position) {
            if let Some(free) = nearest_free(&self.occupancy, c, GOAL_SNAP_RADIUS_M) {
                if free != c {
                    position = self.occupancy.cell_center(free);
                }
            }
        }
        RobotState {
            position,
            heading_deg: 0.0,
        }
    }

    /// Whether some path leads from `from` to within the snap radius of the
    /// true goal.
    pub fn reachable(&self, from: RobotState, target: [f64; 3]) -> bool {
        plan_to(&self.occupancy, from, [target[0], target[1]]).is_ok()
    }

    /// Plans to `goal` and reports where the robot stops and whether that is
    /// a success for `target`. A failed plan leaves the robot in place.
    pub fn navigate(&self, from: RobotState, goal: [f64; 3], target: [f64; 3]) -> (RobotState, bool) {
        if !goal.iter().all(|c| c.is_finite()) {
            return (from, false);
        }
        match plan_to(&self.occupancy, from, [goal[0], goal[1]]) {
            Ok(plan) => {
                let stop = [plan.end.position[0], plan.end.position[1], 0.0];
                (plan.end, judge_success(stop, target, SUCCESS_RADIUS_M))
            }
            Err(_) => (from, false),
        }
    }
}

/// Result of one program on one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub family: TaskFamily,
    pub method: Method,
    pub goal: Option<[f64; 3]>,
    pub target: [f64; 3],
}

impl Outcome {
    /// Horizontal error, `None` when evaluation failed.
    pub fn distance(&self) -> Option<f64> {
        self.goal.map(|g| dist_xy(&g, &self.target))
    }
}

/// Evaluates both programs of every task of the given families.
pub fn evaluate_tasks(built: &BuiltScene, families: &[TaskFamily]) -> Vec<(Task, Outcome, Outcome)> {
    families
        .iter()
        .flat_map(|&f| tasks(&built.scene, f))
        .map(|t| {
            let run = |m: Method| {
                let goal = match built.run_program(t.program(m)) {
                    Ok(g) => Some(g),
                    Err(e) => {
                        log::debug!("scene {} task {:?} ({}): {e}", built.scene.seed, t.description, m.name());
                        None
                    }
                };
                Outcome {
                    family: t.family,
                    method: m,
                    goal,
                    target: t.target,
                }
            };
            let (fused, single) = (run(Method::Fused), run(Method::Single));
            (t, fused, single)
        })
        .collect()
}

pub fn recall_stats(distances: &[Option<f64>], thresholds: &[f64]) -> RecallStats {
    let trials = distances.len();
    let ok: Vec<f64> = distances.iter().flatten().copied().collect();
    let frac = |n: usize| if trials == 0 { 0.0 } else { n as f64 / trials as f64 };
    RecallStats {
        trials,
        failures: trials - ok.len(),
        recall: thresholds.iter().map(|&t| frac(ok.iter().filter(|&&d| d < t).count())).collect(),
        mean_distance: if ok.is_empty() {
            None
        } else {
            Some(ok.iter().sum::<f64>() / ok.len() as f64)
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub episodes_per_scene: usize,
    pub subgoals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub seed: u64,
    pub sigmas: Vec<f64>,
    pub scenes: usize,
    pub scene: SceneConfig,
    pub families: Vec<TaskFamily>,
    /// `None` skips navigation.
    pub navigation: Option<NavConfig>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            sigmas: vec![0.0, 0.1, 0.3, 0.5],
            scenes: 3,
            scene: SceneConfig::default(),
            families: TaskFamily::ALL.to_vec(),
            navigation: Some(NavConfig {
                episodes_per_scene: 4,
                subgoals: 3,
            }),
        }
    }
}

impl BenchConfig {
    /// Layout seed of scene `i`; the same layouts are reused at every noise level.
    pub fn scene_seed(&self, i: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64 + 1);
        rng.random()
    }

    pub fn noise_seed(&self, i: usize, sigma_index: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scene_seed(i));
        rng.set_stream(sigma_index as u64 + 1);
        rng.random()
    }
}

#[derive(Debug, Default)]
struct SceneResult {
    outcomes: Vec<Outcome>,
    single_goal: (usize, usize),
    episodes: Vec<Vec<bool>>,
}

fn run_scene(cfg: &BenchConfig, i: usize, sigma_index: usize) -> Result<SceneResult, BenchError> {
    let mut scene_cfg = cfg.scene.clone();
    scene_cfg.sigma = cfg.sigmas[sigma_index];
    let scene = Scene::generate(&scene_cfg, cfg.scene_seed(i))?;
    let built = BuiltScene::build(scene, cfg.noise_seed(i, sigma_index))?;
    let evaluated = evaluate_tasks(&built, &cfg.families);
    let mut result = SceneResult {
        outcomes: evaluated.iter().flat_map(|(_, f, s)| [f.clone(), s.clone()]).collect(),
        ..Default::default()
    };
    if let Some(nav) = &cfg.navigation {
        let start = built.start_state();
        for (t, fused, _) in &evaluated {
            if built.reachable(start, t.target) {
                result.single_goal.0 += 1;
                let goal = fused.goal.unwrap_or([f64::NAN; 3]);
                result.single_goal.1 += built.navigate(start, goal, t.target).1 as usize;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(built.scene.seed ^ 0x6e61_7669);
        let mut order: Vec<usize> = (0..evaluated.len()).collect();
        for _ in 0..nav.episodes_per_scene {
            order.shuffle(&mut rng);
            let mut state = start;
            let mut successes = Vec::with_capacity(nav.subgoals);
            for &j in order.iter().take(nav.subgoals) {
                let (t, fused, _) = &evaluated[j];
                let (next, ok) = built.navigate(state, fused.goal.unwrap_or([f64::NAN; 3]), t.target);
                state = next;
                successes.push(ok);
            }
            result.episodes.push(successes);
        }
    }
    Ok(result)
}

/// Runs every scene at every noise level and aggregates the metrics.
/// Scenes run in parallel; results are combined in a fixed order, so the
/// report depends only on the configuration.
pub fn run_bench(cfg: &BenchConfig) -> Result<MetricReport, BenchError> {
    cfg.scene.validate()?;
    if cfg.sigmas.is_empty() || cfg.scenes == 0 || cfg.families.is_empty() {
        return Err(BenchError::Config("need at least one sigma, scene and task family".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.sigmas.len())
        .flat_map(|s| (0..cfg.scenes).map(move |i| (s, i)))
        .collect();
    let results: Vec<SceneResult> = jobs
        .par_iter()
        .map(|&(s, i)| run_scene(cfg, i, s))
        .collect::<Result<_, _>>()?;

    let mut indexing = Vec::new();
    let mut navigation = Vec::new();
    for (s, &sigma) in cfg.sigmas.iter().enumerate() {
        let per_sigma: Vec<&SceneResult> = jobs
            .iter()
            .zip(&results)
            .filter(|((js, _), _)| *js == s)
            .map(|(_, r)| r)
            .collect();
        for &family in &cfg.families {
            for method in [Method::Fused, Method::Single] {
                let d: Vec<Option<f64>> = per_sigma
                    .iter()
                    .flat_map(|r| &r.outcomes)
                    .filter(|o| o.family == family && o.method == method)
                    .map(Outcome::distance)
                    .collect();
                indexing.push(IndexRow {
                    sigma,
                    family,
                    method,
                    stats: recall_stats(&d, &RECALL_THRESHOLDS_M),
                });
            }
        }
        if let Some(nav) = &cfg.navigation {
            let (reachable, reached) = per_sigma
                .iter()
                .fold((0, 0), |acc, r| (acc.0 + r.single_goal.0, acc.1 + r.single_goal.1));
            let episodes: Vec<&Vec<bool>> = per_sigma.iter().flat_map(|r| &r.episodes).collect();
            let n = episodes.len().max(1) as f64;
            let chained = (1..=nav.subgoals)
                .map(|k| episodes.iter().filter(|e| e.iter().take(k).all(|&x| x)).count() as f64 / n)
                .collect();
            let total: usize = episodes.iter().map(|e| e.len()).sum();
            let hits: usize = episodes.iter().map(|e| e.iter().filter(|&&x| x).count()).sum();
            navigation.push(NavRow {
                sigma,
                reachable_goals: reachable,
                single_goal_success: if reachable == 0 { 0.0 } else { reached as f64 / reachable as f64 },
                episodes: episodes.len(),
                subgoals: nav.subgoals,
                chained_success: chained,
                independent_success: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            });
        }
    }
    Ok(MetricReport {
        seed: cfg.seed,
        scenes: cfg.scenes,
        thresholds_m: RECALL_THRESHOLDS_M.to_vec(),
        indexing,
        navigation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recall_counts_failures_as_misses() {
        let s = recall_stats(&[Some(0.2), Some(0.7), None, Some(3.0)], &[0.5, 1.0]);
        assert_eq!(s.trials, 4);
        assert_eq!(s.failures, 1);
        assert_eq!(s.recall, vec![0.25, 0.5]);
        assert!((s.mean_distance.unwrap() - 3.9 / 3.0).abs() < 1e-12);
        // strict threshold
        assert_eq!(recall_stats(&[Some(0.5)], &[0.5]).recall, vec![0.0]);
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let c = BenchConfig::default();
        assert_eq!(c.scene_seed(3), c.scene_seed(3));
        assert_ne!(c.scene_seed(0), c.scene_seed(1));
        assert_ne!(c.noise_seed(0, 0), c.noise_seed(0, 1));
    }

    #[test]
    fn noiseless_scene_solves_every_fused_task() {
        let cfg = SceneConfig {
            label_cosine: 0.0,
            ..SceneConfig::default()
        };
        let built = BuiltScene::build(Scene::generate(&cfg, 21).unwrap(), 0).unwrap();
        let start = built.start_state();
        for (t, fused, single) in evaluate_tasks(&built, &TaskFamily::ALL) {
            let d = fused.distance().unwrap_or(f64::INFINITY);
            assert!(d < 0.5, "{}: fused goal {d} m off", t.description);
            assert!(single.goal.is_some());
            assert!(built.reachable(start, t.target));
            assert!(built.navigate(start, fused.goal.unwrap(), t.target).1, "{}", t.description);
        }
    }
}
