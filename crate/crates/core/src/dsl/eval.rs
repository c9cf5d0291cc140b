use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;
use serde::Serialize;

use crate::heatmap::{fuse, heatmap_from_points, heatmap_from_pose, heatmap_from_scored, DecayConfig};
use crate::ingest::Intrinsics;
use crate::localize::{localize_area, localize_image, localize_object, localize_sound, LocalizeConfig, LocalizeError};
use crate::map::MultimodalMap;
use crate::provider::EmbeddingProvider;
use crate::spatial::{Heatmap, SpatialError};

use super::ast::{BinOp, Builtin, Expr, ExprKind, Keyword, Program, Span, Stmt};
use super::pretty::expr_to_string;
use super::DslError;

/// Loads the images named by `load_image`.
pub trait ImageResolver {
    fn resolve(&self, path: &str) -> Result<RgbImage, String>;
}

/// Reads images from disk, resolving relative paths against `base`.
#[derive(Debug, Clone)]
pub struct FsImages {
    pub base: PathBuf,
}

impl ImageResolver for FsImages {
    fn resolve(&self, path: &str) -> Result<RgbImage, String> {
        let full = self.base.join(path);
        image::open(&full)
            .map(|i| i.to_rgb8())
            .map_err(|e| format!("{}: {e}", full.display()))
    }
}

impl ImageResolver for HashMap<String, RgbImage> {
    fn resolve(&self, path: &str) -> Result<RgbImage, String> {
        self.get(path).cloned().ok_or_else(|| format!("no image registered as {path:?}"))
    }
}

pub struct EvalContext<'a> {
    pub map: &'a MultimodalMap,
    pub provider: &'a dyn EmbeddingProvider,
    pub images: &'a dyn ImageResolver,
    pub decay: DecayConfig,
    pub localize: LocalizeConfig,
    /// Intrinsics of the camera that took query images; keyframe intrinsics
    /// are used when absent.
    pub query_intrinsics: Option<Intrinsics>,
}

impl<'a> EvalContext<'a> {
    pub fn new(map: &'a MultimodalMap, provider: &'a dyn EmbeddingProvider, images: &'a dyn ImageResolver) -> Self {
        Self {
            map,
            provider,
            images,
            decay: DecayConfig::default(),
            localize: LocalizeConfig::default(),
            query_intrinsics: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Image {
        path: String,
        width: u32,
        height: u32,
    },
    Heatmap {
        /// Decay rate for heatmaps built from evidence; absent for fusions.
        #[serde(skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        /// Number of voxels, frames or segments the heatmap was built from.
        #[serde(skip_serializing_if = "Option::is_none")]
        evidence: Option<usize>,
        empty_input: bool,
        peak: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        peak_at: Option<[f64; 3]>,
    },
    Position {
        position: [f64; 3],
    },
    Goal {
        position: [f64; 3],
    },
}

/// One evaluated sub-expression and what it produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub statement: usize,
    pub line: usize,
    pub col: usize,
    pub expr: String,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub goals: Vec<[f64; 3]>,
    pub trace: Vec<TraceEntry>,
    /// Heatmaps bound by `let` statements, in program order.
    pub heatmaps: Vec<(String, Arc<Heatmap>)>,
}

impl Evaluation {
    /// The trace as JSON lines, one entry per line.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trace {
            out.push_str(&serde_json::to_string(t).expect("trace entries serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Value {
    Number(f64),
    Str(String),
    Image(Arc<RgbImage>),
    Heatmap(Arc<Heatmap>),
    Position([f64; 3]),
    Unit,
}

struct Evaluator<'c, 'a> {
    ctx: &'c EvalContext<'a>,
    env: HashMap<String, Value>,
    out: Evaluation,
    statement: usize,
}

fn localize_error(span: Span, e: LocalizeError) -> DslError {
    match e {
        LocalizeError::ModalityUnavailable { modality, source } => DslError::ModalityUnavailable {
            modality,
            line: span.line,
            col: span.col,
            source,
        },
        other => DslError::Localize {
            line: span.line,
            col: span.col,
            source: other,
        },
    }
}

/// Runs a type-checked program against a map. Each `move_to` appends a goal.
pub fn evaluate(program: &Program, ctx: &EvalContext<'_>) -> Result<Evaluation, DslError> {
    ctx.decay.validate().map_err(|source| DslError::Heatmap {
        line: 0,
        col: 0,
        source,
    })?;
    let mut ev = Evaluator {
        ctx,
        env: HashMap::new(),
        out: Evaluation::default(),
        statement: 0,
    };
    for (i, s) in program.statements.iter().enumerate() {
        ev.statement = i;
        match s {
            Stmt::Let { name, value, .. } => {
                let v = ev.eval(value)?;
                if let Value::Heatmap(h) = &v {
                    ev.out.heatmaps.push((name.clone(), h.clone()));
                }
                ev.env.insert(name.clone(), v);
            }
            Stmt::Expr(e) => {
                ev.eval(e)?;
            }
        }
    }
    Ok(ev.out)
}

impl Evaluator<'_, '_> {
    fn record(&mut self, e: &Expr, event: TraceEvent) {
        self.out.trace.push(TraceEntry {
            statement: self.statement,
            line: e.span.line,
            col: e.span.col,
            expr: expr_to_string(e),
            event,
        });
    }

    fn record_heatmap(&mut self, e: &Expr, h: &Heatmap, epsilon: Option<f64>, evidence: Option<usize>) {
        let (peak, peak_at) = match h.argmax() {
            Ok((v, p)) => (p, Some(h.spec().voxel_to_world(v))),
            Err(_) => (0.0, None),
        };
        self.record(
            e,
            TraceEvent::Heatmap {
                epsilon,
                evidence,
                empty_input: h.is_empty_input(),
                peak,
                peak_at,
            },
        );
    }

    fn heatmap_error(span: Span) -> impl Fn(crate::heatmap::HeatmapError) -> DslError {
        move |source| DslError::Heatmap {
            line: span.line,
            col: span.col,
            source,
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, DslError> {
        match &e.kind {
            ExprKind::Number(n) => Ok(Value::Number(*n)),
            ExprKind::Str(s) => Ok(Value::Str(s.clone())),
            ExprKind::Var(v) => Ok(self.env.get(v).cloned().expect("parser resolves identifiers")),
            ExprKind::Binary { op, lhs, rhs } => {
                let (l, r) = (self.eval(lhs)?, self.eval(rhs)?);
                match (op, l, r) {
                    (BinOp::Mul, Value::Heatmap(a), Value::Heatmap(b)) => {
                        let h = fuse(&[&a, &b]).map_err(Self::heatmap_error(e.span))?;
                        self.record_heatmap(e, &h, None, None);
                        Ok(Value::Heatmap(Arc::new(h)))
                    }
                    (BinOp::Add, Value::Position(a), Value::Position(b)) => {
                        let p = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                        self.record(e, TraceEvent::Position { position: p });
                        Ok(Value::Position(p))
                    }
                    (BinOp::Div, Value::Position(a), Value::Number(n)) => {
                        if n == 0.0 {
                            return Err(DslError::DivisionByZero {
                                line: e.span.line,
                                col: e.span.col,
                            });
                        }
                        let p = [a[0] / n, a[1] / n, a[2] / n];
                        self.record(e, TraceEvent::Position { position: p });
                        Ok(Value::Position(p))
                    }
                    _ => unreachable!("parser type-checks binary operators"),
                }
            }
            ExprKind::Call { function, args } => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push((a.keyword, self.eval(&a.value)?));
                }
                self.call(e, *function, vals)
            }
        }
    }

    fn call(&mut self, e: &Expr, function: Builtin, mut args: Vec<(Option<Keyword>, Value)>) -> Result<Value, DslError> {
        let (keyword, arg) = args.pop().expect("parser checks arity");
        match (function, arg) {
            (Builtin::LoadImage, Value::Str(path)) => {
                let img = self.ctx.images.resolve(&path).map_err(|message| DslError::Image {
                    path: path.clone(),
                    message,
                    line: e.span.line,
                    col: e.span.col,
                })?;
                self.record(
                    e,
                    TraceEvent::Image {
                        path,
                        width: img.width(),
                        height: img.height(),
                    },
                );
                Ok(Value::Image(Arc::new(img)))
            }
            (Builtin::GetMap | Builtin::GetMajorMap, arg) => {
                let eps = if function == Builtin::GetMajorMap {
                    self.ctx.decay.epsilon_primary
                } else {
                    self.ctx.decay.epsilon_auxiliary
                };
                let (h, evidence) = self.build_heatmap(e.span, keyword.expect("parser checks keywords"), arg, eps)?;
                self.record_heatmap(e, &h, Some(eps), Some(evidence));
                Ok(Value::Heatmap(Arc::new(h)))
            }
            (Builtin::MaxPos | Builtin::GetMaxPos3d, Value::Heatmap(h)) => {
                let (v, _) = h.argmax().map_err(|err| match err {
                    SpatialError::DegenerateHeatmap => DslError::Degenerate {
                        line: e.span.line,
                        col: e.span.col,
                    },
                    other => DslError::Heatmap {
                        line: e.span.line,
                        col: e.span.col,
                        source: other.into(),
                    },
                })?;
                let p = h.spec().voxel_to_world(v);
                self.record(e, TraceEvent::Position { position: p });
                Ok(Value::Position(p))
            }
            (Builtin::MoveTo, Value::Position(p)) => {
                self.out.goals.push(p);
                self.record(e, TraceEvent::Goal { position: p });
                Ok(Value::Unit)
            }
            (f, v) => unreachable!("parser type-checks calls: {} on {v:?}", f.name()),
        }
    }

    fn build_heatmap(&self, span: Span, keyword: Keyword, arg: Value, eps: f64) -> Result<(Heatmap, usize), DslError> {
        let map = self.ctx.map;
        let spec = *map.grid();
        let provider = self.ctx.provider;
        let herr = Self::heatmap_error(span);
        let scored = match (keyword, arg) {
            (Keyword::Obj, Value::Str(category)) => {
                let hits = localize_object(
                    &map.voxels,
                    provider,
                    &category,
                    &map.metadata.labels,
                    &self.ctx.localize.background_labels,
                )
                .map_err(|err| localize_error(span, err))?;
                let h = heatmap_from_points(spec, &hits.voxels, eps).map_err(herr)?;
                return Ok((h, hits.voxels.len()));
            }
            (Keyword::Img, Value::Image(img)) => {
                let fix = match localize_image(
                    &map.keyframes,
                    provider,
                    &img,
                    self.ctx.query_intrinsics.as_ref(),
                    &self.ctx.localize,
                ) {
                    Ok(fix) => fix,
                    Err(LocalizeError::EmptyDatabase(db)) => {
                        log::warn!("{db} database is empty; image heatmap is empty");
                        return Ok((Heatmap::empty_result(spec), 0));
                    }
                    Err(err) => return Err(localize_error(span, err)),
                };
                let h = heatmap_from_pose(spec, fix.pose.position_array(), eps).map_err(herr)?;
                return Ok((h, 1));
            }
            (Keyword::Sound, Value::Str(desc)) => localize_sound(&map.audio, provider, &desc),
            (Keyword::Area, Value::Str(concept)) => localize_area(&map.areas, provider, &concept),
            (k, v) => unreachable!("parser type-checks {}= against {v:?}", k.name()),
        };
        let scored = match scored {
            Ok(s) => s,
            Err(LocalizeError::EmptyDatabase(db)) => {
                log::warn!("{db} database is empty; heatmap is empty");
                Vec::new()
            }
            Err(err) => return Err(localize_error(span, err)),
        };
        let h = heatmap_from_scored(spec, &scored, eps).map_err(herr)?;
        Ok((h, scored.len()))
    }
}
