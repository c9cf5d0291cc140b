//! The `modalmap` command line: map building, goal queries, planning,
//! heatmap export, synthetic scene generation and the metric bench.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use modalmap::dsl::{self, DslError, EvalContext, FsImages};
use modalmap::heatmap::{export_heatmap, DecayConfig};
use modalmap::ingest::stream_dir::{read_stream, write_stream};
use modalmap::ingest::{build_map, IngestConfig, IngestError};
use modalmap::map::MultimodalMap;
use modalmap::planner::{plan_to, project_occupancy, ProjectionConfig, RobotState};
use modalmap::provider::wire::ENDPOINT_ENV;
use modalmap::provider::{EmbeddingProvider, FixtureStore, ProviderError, RemoteProvider};
use modalmap::spatial::GridSpec;
use modalmap_bench::suite::NavConfig;
use modalmap_bench::synth::synthesize;
use modalmap_bench::tasks::tasks;
use modalmap_bench::{run_bench, BenchConfig, BenchError, Scene, SceneConfig, TaskFamily};

pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 2;
    pub const PARSE: u8 = 3;
    pub const EVAL: u8 = 4;
    pub const PROVIDER: u8 = 5;
    pub const ACCEPTANCE: u8 = 6;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Program(DslError),
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error("{0}")]
    Failed(String),
    #[error("{} acceptance check(s) failed:\n  {}", .0.len(), .0.join("\n  "))]
    Acceptance(Vec<String>),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Program(e) if e.is_static() => exit::PARSE,
            CliError::Program(DslError::ModalityUnavailable { .. }) => exit::PROVIDER,
            CliError::Program(_) | CliError::Failed(_) => exit::EVAL,
            CliError::Provider(_) => exit::PROVIDER,
            CliError::Acceptance(_) => exit::ACCEPTANCE,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Provider(p) => CliError::Provider(p),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(m) => CliError::Usage(format!("bench configuration: {m}")),
            BenchError::Provider(p) => CliError::Provider(p),
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn failed(context: &str) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{context}: {e}"))
}

/// Settings shared by subcommands, read from `--settings`. Command-line
/// flags and the provider environment variable take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub epsilon_primary: Option<f64>,
    pub epsilon_auxiliary: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub jobs: Option<usize>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }
}

#[derive(Debug, Parser)]
#[command(name = "modalmap", version, about = "Build and query multimodal spatial maps")]
pub struct Cli {
    /// Worker threads for parallel stages; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Shared settings file (JSON): decay rates, seed, output directory, provider.
    #[arg(long, global = true, value_name = "FILE")]
    pub settings: Option<PathBuf>,
    /// Log more detail (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a map file from a stream directory.
    Build(BuildArgs),
    /// Evaluate a goal program against a map and print its goals.
    Query(QueryArgs),
    /// Plan a path on a map's occupancy projection and print the actions.
    Plan(PlanArgs),
    /// Evaluate a goal program and write every named heatmap to disk.
    Export(ExportArgs),
    /// Generate a synthetic scene: stream, fixtures, query photos and tasks.
    Gen(GenArgs),
    /// Run the synthetic metric bench and write its report.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Fixture directory to serve embeddings from.
    #[arg(long, value_name = "DIR", conflicts_with = "endpoint")]
    pub fixtures: Option<PathBuf>,
    /// Embedding service address (host:port).
    #[arg(long, value_name = "ADDR", env = ENDPOINT_ENV)]
    pub endpoint: Option<String>,
}

impl ProviderArgs {
    fn open(&self, settings: &CliConfig) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
        let (fixtures, endpoint) = if self.fixtures.is_some() || self.endpoint.is_some() {
            (self.fixtures.as_ref(), self.endpoint.as_ref())
        } else {
            (settings.fixtures.as_ref(), settings.endpoint.as_ref())
        };
        if let Some(dir) = fixtures {
            if !dir.is_dir() {
                return Err(CliError::Usage(format!("fixture directory {} does not exist", dir.display())));
            }
            return Ok(Arc::new(FixtureStore::load(dir)?));
        }
        match endpoint {
            Some(addr) => Ok(Arc::new(RemoteProvider::connect(addr.trim_start_matches("tcp://"))?)),
            None => Err(CliError::Usage(format!(
                "no embedding provider: pass --fixtures or --endpoint, or set {ENDPOINT_ENV}"
            ))),
        }
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Stream directory (manifest.json, poses.txt, rgb/, depth/, audio.wav).
    #[arg(long, value_name = "DIR")]
    pub stream: PathBuf,
    /// Map file to write.
    #[arg(long, short, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Ingest configuration as JSON; the flags below override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Grid size in voxels, `nx,ny,nz`.
    #[arg(long, value_name = "NX,NY,NZ", value_parser = parse_list::<usize, 3, 3>)]
    pub dims: Option<List<usize>>,
    /// Voxel edge length in meters.
    #[arg(long, value_name = "M")]
    pub resolution: Option<f64>,
    /// World position of the center of voxel (1, 1, 1).
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_list::<f64, 3, 3>, allow_hyphen_values = true)]
    pub origin: Option<List<f64>>,
    /// Fuse every n-th pixel along each image axis.
    #[arg(long, value_name = "N")]
    pub pixel_step: Option<u32>,
    /// Keep every n-th frame as a keyframe.
    #[arg(long, value_name = "N")]
    pub keyframe_stride: Option<usize>,
    /// Keep every n-th frame as an area frame.
    #[arg(long, value_name = "N")]
    pub area_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProgramArgs {
    /// Goal program file, or `-` for standard input.
    #[arg(long, short, value_name = "FILE", conflicts_with = "eval", required_unless_present = "eval")]
    pub program: Option<PathBuf>,
    /// Goal program given inline.
    #[arg(long, short, value_name = "SOURCE")]
    pub eval: Option<String>,
    /// Directory that image paths in the program are relative to; defaults to
    /// the program file's directory, or the working directory.
    #[arg(long, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Decay rate in 1/m of the located entity's heatmap (`get_major_map`).
    #[arg(long, value_name = "EPS")]
    pub major_eps: Option<f64>,
    /// Decay rate in 1/m of context heatmaps (`get_map`).
    #[arg(long, value_name = "EPS")]
    pub eps: Option<f64>,
}

impl ProgramArgs {
    fn source(&self) -> Result<String, CliError> {
        match (&self.program, &self.eval) {
            (_, Some(src)) => Ok(src.clone()),
            (Some(p), None) if p.as_os_str() == "-" => {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s).map_err(failed("stdin"))?;
                Ok(s)
            }
            (Some(p), None) => fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read program {}: {e}", p.display()))),
            (None, None) => Err(CliError::Usage("pass --program or --eval".into())),
        }
    }

    fn image_base(&self) -> PathBuf {
        if let Some(d) = &self.images {
            return d.clone();
        }
        match &self.program {
            Some(p) if p.as_os_str() != "-" => p.parent().map(Path::to_path_buf).unwrap_or_default(),
            _ => PathBuf::from("."),
        }
    }

    fn decay(&self, settings: &CliConfig) -> DecayConfig {
        let d = DecayConfig::default();
        DecayConfig {
            epsilon_primary: self.major_eps.or(settings.epsilon_primary).unwrap_or(d.epsilon_primary),
            epsilon_auxiliary: self.eps.or(settings.epsilon_auxiliary).unwrap_or(d.epsilon_auxiliary),
        }
    }
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Map file written by `build`.
    #[arg(long, short, value_name = "FILE")]
    pub map: PathBuf,
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Write the evaluation trace as JSON lines (`-` for standard error).
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Also export every named heatmap under this directory.
    #[arg(long, value_name = "DIR")]
    pub export: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Map file written by `build`.
    #[arg(long, short, value_name = "FILE")]
    pub map: PathBuf,
    #[command(flatten)]
    pub program: ProgramArgs,
    #[command(flatten)]
    pub provider: ProviderArgs,
    /// Output directory; each heatmap goes to a subdirectory named after its
    /// variable. Defaults to the settings' output directory.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Map file written by `build`.
    #[arg(long, short, value_name = "FILE")]
    pub map: PathBuf,
    /// Start position and optional heading in degrees, `x,y[,heading]`.
    #[arg(long, value_name = "X,Y[,DEG]", value_parser = parse_list::<f64, 2, 3>, allow_hyphen_values = true)]
    pub start: List<f64>,
    /// Goal position, `x,y`.
    #[arg(long, value_name = "X,Y", value_parser = parse_list::<f64, 2, 2>, allow_hyphen_values = true)]
    pub goal: List<f64>,
    /// Lowest world z counted as an obstacle.
    #[arg(long, value_name = "M", default_value_t = ProjectionConfig::default().z_min)]
    pub z_min: f64,
    /// Highest world z counted as an obstacle.
    #[arg(long, value_name = "M", default_value_t = ProjectionConfig::default().z_max)]
    pub z_max: f64,
    /// Obstacle inflation radius in meters.
    #[arg(long, value_name = "M", default_value_t = ProjectionConfig::default().inflation_radius)]
    pub inflation: f64,
    /// Write a top-down PNG with the path drawn in.
    #[arg(long, value_name = "FILE")]
    pub render: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; defaults to the settings' output directory.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Layout seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observation noise level.
    #[arg(long, value_name = "SIGMA")]
    pub sigma: Option<f64>,
    /// Cosine similarity between planted label vectors.
    #[arg(long, value_name = "C")]
    pub label_cosine: Option<f64>,
    /// Seed of the observation noise; defaults to the layout seed.
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Scene configuration as JSON; the flags above override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Directory for report.txt and report.json.
    #[arg(long, short, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Bench configuration as JSON; the flags below override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for scene layouts and noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenes per noise level.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Noise levels to sweep.
    #[arg(long, value_name = "SIGMA,...", value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Task families (area-object, object-sound, visual-object).
    #[arg(long, value_name = "NAME,...", value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Cosine similarity between planted label vectors.
    #[arg(long, value_name = "C")]
    pub label_cosine: Option<f64>,
    /// Skip the navigation suite.
    #[arg(long)]
    pub no_navigation: bool,
    /// Navigation episodes per scene.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Subgoals per navigation episode.
    #[arg(long)]
    pub subgoals: Option<usize>,
    /// Report invariant violations without failing.
    #[arg(long)]
    pub no_check: bool,
}

/// Comma-separated numbers given as one flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T> std::ops::Deref for List<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

/// Parses `MIN..=MAX` comma-separated numbers.
fn parse_list<T: std::str::FromStr, const MIN: usize, const MAX: usize>(s: &str) -> Result<List<T>, String> {
    let items = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("{p:?} is not a number")))
        .collect::<Result<Vec<T>, _>>()?;
    if (MIN..=MAX).contains(&items.len()) {
        Ok(List(items))
    } else if MIN == MAX {
        Err(format!("expected {MIN} comma-separated values, got {}", items.len()))
    } else {
        Err(format!("expected {MIN} to {MAX} comma-separated values, got {}", items.len()))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(failed(&dir.display().to_string()))?;
    }
    fs::write(path, bytes).map_err(failed(&path.display().to_string()))
}

fn load_map(path: &Path) -> Result<MultimodalMap, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("map file {} does not exist", path.display())));
    }
    MultimodalMap::load(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn out_dir(flag: &Option<PathBuf>, settings: &CliConfig) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| settings.out_dir.clone())
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set out_dir in the settings".into()))
}

fn cmd_build(a: &BuildArgs, settings: &CliConfig) -> Result<String, CliError> {
    if !a.stream.is_dir() {
        return Err(CliError::Usage(format!("stream directory {} does not exist", a.stream.display())));
    }
    let base: Option<IngestConfig> = a.config.as_deref().map(read_json).transpose()?;
    let grid = match (&a.dims, a.resolution, &base) {
        (Some(d), res, _) => GridSpec::new(
            [d[0], d[1], d[2]],
            res.or(base.as_ref().map(|b| b.grid.resolution()))
                .ok_or_else(|| CliError::Usage("--dims needs --resolution".into()))?,
            a.origin
                .as_ref()
                .map(|o| [o[0], o[1], o[2]])
                .or(base.as_ref().map(|b| b.grid.origin()))
                .unwrap_or([0.0; 3]),
        ),
        (None, _, Some(b)) => GridSpec::new(
            b.grid.dims(),
            a.resolution.unwrap_or(b.grid.resolution()),
            a.origin.as_ref().map(|o| [o[0], o[1], o[2]]).unwrap_or(b.grid.origin()),
        ),
        (None, _, None) => return Err(CliError::Usage("pass --config or --dims and --resolution".into())),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut cfg = base.unwrap_or_else(|| IngestConfig::new(grid));
    cfg.grid = grid;
    if let Some(v) = a.pixel_step {
        cfg.pixel_step = v;
    }
    if let Some(v) = a.keyframe_stride {
        cfg.keyframe_stride = v;
    }
    if let Some(v) = a.area_stride {
        cfg.area_stride = v;
    }
    let provider = a.provider.open(settings)?;
    let stream = read_stream(&a.stream)?;
    let (map, summary) = build_map(&stream, provider.as_ref(), &cfg)?;
    write_file(&a.out, map.to_bytes())?;
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")
}

struct Evaluated {
    result: dsl::Evaluation,
}

fn evaluate(map_path: &Path, p: &ProgramArgs, provider: &ProviderArgs, settings: &CliConfig) -> Result<Evaluated, CliError> {
    let source = p.source()?;
    let program = dsl::parse(&source).map_err(CliError::Program)?;
    let map = load_map(map_path)?;
    let provider = provider.open(settings)?;
    let images = FsImages { base: p.image_base() };
    let mut ctx = EvalContext::new(&map, provider.as_ref(), &images);
    ctx.decay = p.decay(settings);
    let result = dsl::evaluate(&program, &ctx).map_err(CliError::Program)?;
    Ok(Evaluated { result })
}

fn export_all(ev: &dsl::Evaluation, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    for (name, h) in &ev.heatmaps {
        written.extend(export_heatmap(h, &dir.join(name)).map_err(|e| CliError::Failed(e.to_string()))?);
    }
    Ok(written)
}

fn goal_lines(ev: &dsl::Evaluation) -> String {
    ev.goals
        .iter()
        .map(|g| format!("{}\n", serde_json::json!({ "goal": g })))
        .collect()
}

fn cmd_query(a: &QueryArgs, settings: &CliConfig) -> Result<String, CliError> {
    let ev = evaluate(&a.map, &a.program, &a.provider, settings)?;
    match &a.trace {
        Some(p) if p.as_os_str() == "-" => eprint!("{}", ev.result.trace_jsonl()),
        Some(p) => write_file(p, ev.result.trace_jsonl())?,
        None => {}
    }
    if let Some(dir) = &a.export {
        export_all(&ev.result, dir)?;
    }
    Ok(goal_lines(&ev.result))
}

fn cmd_export(a: &ExportArgs, settings: &CliConfig) -> Result<String, CliError> {
    let out = out_dir(&a.out, settings)?;
    let ev = evaluate(&a.map, &a.program, &a.provider, settings)?;
    let written = export_all(&ev.result, &out)?;
    Ok(written.iter().map(|p| format!("{}\n", p.display())).collect())
}

fn cmd_plan(a: &PlanArgs) -> Result<String, CliError> {
    let map = load_map(&a.map)?;
    let cfg = ProjectionConfig {
        z_min: a.z_min,
        z_max: a.z_max,
        inflation_radius: a.inflation,
    };
    let grid = project_occupancy(&map.voxels, &cfg);
    let start = RobotState {
        position: [a.start[0], a.start[1]],
        heading_deg: a.start.get(2).copied().unwrap_or(0.0),
    };
    let plan = plan_to(&grid, start, [a.goal[0], a.goal[1]]).map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(path) = &a.render {
        let img = grid.render(&plan.path.cells);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(failed(&dir.display().to_string()))?;
        }
        img.save(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    }
    let mut out = format!("path_cost_m {:.3}\n", plan.path.cost);
    for c in &plan.path.cells {
        let p = grid.cell_center(*c);
        out += &format!("waypoint {:.3} {:.3}\n", p[0], p[1]);
    }
    for act in &plan.actions {
        out += &format!("action {}\n", serde_json::to_value(act).expect("action serializes").as_str().unwrap_or("?"));
    }
    out += &format!(
        "end {:.3} {:.3} {:.1}\n",
        plan.end.position[0], plan.end.position[1], plan.end.heading_deg
    );
    Ok(out)
}

fn cmd_gen(a: &GenArgs, settings: &CliConfig) -> Result<String, CliError> {
    let out = &out_dir(&a.out, settings)?;
    let seed = a.seed.or(settings.seed).unwrap_or(1);
    let mut cfg: SceneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    if let Some(s) = a.sigma {
        cfg.sigma = s;
    }
    if let Some(c) = a.label_cosine {
        cfg.label_cosine = c;
    }
    let scene = Scene::generate(&cfg, seed)?;
    let ingest = IngestConfig::new(cfg.grid()?);
    let syn = synthesize(&scene, a.noise_seed.unwrap_or(seed), &ingest.segmentation)?;
    write_stream(&syn.stream, &out.join("stream"))?;
    syn.store.save(&out.join("fixtures"))?;
    let queries = out.join("queries");
    fs::create_dir_all(&queries).map_err(failed(&queries.display().to_string()))?;
    let mut names: Vec<&String> = syn.queries.keys().collect();
    names.sort();
    for name in names {
        let path = queries.join(name);
        syn.queries[name]
            .save(&path)
            .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    }
    let all_tasks: Vec<_> = TaskFamily::ALL.iter().flat_map(|&f| tasks(&scene, f)).collect();
    write_file(&out.join("scene.json"), serde_json::to_string_pretty(&scene).expect("scene serializes") + "\n")?;
    write_file(&out.join("ingest.json"), serde_json::to_string_pretty(&ingest).expect("config serializes") + "\n")?;
    write_file(&out.join("tasks.json"), serde_json::to_string_pretty(&all_tasks).expect("tasks serialize") + "\n")?;
    Ok(format!(
        "{} frames, {} objects, {} sound events, {} query photos, {} tasks written to {}\n",
        syn.stream.frames.len(),
        scene.objects.len(),
        scene.sounds.len(),
        scene.queries.len(),
        all_tasks.len(),
        out.display()
    ))
}

fn bench_config(a: &BenchArgs, settings: &CliConfig) -> Result<BenchConfig, CliError> {
    let mut cfg: BenchConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if let Some(s) = a.seed.or(settings.seed) {
        cfg.seed = s;
    }
    if let Some(n) = a.scenes {
        cfg.scenes = n;
    }
    if let Some(s) = &a.sigmas {
        cfg.sigmas = s.clone();
    }
    if let Some(c) = a.label_cosine {
        cfg.scene.label_cosine = c;
    }
    if let Some(f) = &a.families {
        cfg.families = f
            .iter()
            .map(|n| TaskFamily::from_name(n).ok_or_else(|| CliError::Usage(format!("unknown task family {n:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if a.no_navigation {
        cfg.navigation = None;
    } else if a.episodes.is_some() || a.subgoals.is_some() {
        let base = cfg.navigation.clone().unwrap_or(NavConfig {
            episodes_per_scene: 4,
            subgoals: 3,
        });
        cfg.navigation = Some(NavConfig {
            episodes_per_scene: a.episodes.unwrap_or(base.episodes_per_scene),
            subgoals: a.subgoals.unwrap_or(base.subgoals),
        });
    }
    Ok(cfg)
}

fn cmd_bench(a: &BenchArgs, settings: &CliConfig) -> Result<String, CliError> {
    let cfg = bench_config(a, settings)?;
    let report = run_bench(&cfg)?;
    let text = report.to_text();
    if let Some(dir) = a.out.as_ref().or(settings.out_dir.as_ref()) {
        write_file(&dir.join("report.txt"), &text)?;
        write_file(&dir.join("report.json"), report.to_json())?;
    }
    let violations = report.check();
    if !violations.is_empty() && !a.no_check {
        print!("{text}");
        return Err(CliError::Acceptance(violations));
    }
    for v in &violations {
        log::warn!("{v}");
    }
    Ok(text)
}

/// Runs a parsed command line and returns what goes to standard output.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let settings = match &cli.settings {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(n) = cli.jobs.or(settings.jobs) {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Build(a) => cmd_build(a, &settings),
        Command::Query(a) => cmd_query(a, &settings),
        Command::Plan(a) => cmd_plan(a),
        Command::Export(a) => cmd_export(a, &settings),
        Command::Gen(a) => cmd_gen(a, &settings),
        Command::Bench(a) => cmd_bench(a, &settings),
    }
}

pub fn main_with_args() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
