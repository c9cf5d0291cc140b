//! Goal programs: a small statement language over map queries.
//!
//! ```text
//! img = robot.load_image("./006899.png")
//! img_map = robot.get_major_map(img=img)
//! obj_map = robot.get_major_map(obj="backpack")
//! sound_map = robot.get_map(sound="glass breaking")
//! fuse_map = obj_map * sound_map
//! pos = (robot.get_max_pos_3d(img_map) + robot.get_max_pos_3d(fuse_map)) / 2
//! robot.move_to(pos)
//! ```
//!
//! Programs are parsed and type-checked in one pass, then evaluated against a
//! [`MultimodalMap`](crate::map::MultimodalMap). The grammar is in
//! `docs/dsl.md`.

pub mod ast;
mod eval;
mod lexer;
mod parser;
mod pretty;
pub mod random;

use thiserror::Error;

use crate::heatmap::HeatmapError;
use crate::localize::LocalizeError;
use crate::provider::ProviderError;

pub use ast::{Program, Span};
pub use eval::{evaluate, EvalContext, Evaluation, FsImages, ImageResolver, TraceEntry, TraceEvent};
pub use parser::parse;
pub use pretty::{expr_to_string, pretty_print};

/// Static type of an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Number,
    Str,
    Image,
    Heatmap,
    Position,
    Unit,
}

impl Type {
    pub fn name(&self) -> &'static str {
        match self {
            Type::Number => "number",
            Type::Str => "string",
            Type::Image => "image",
            Type::Heatmap => "heatmap",
            Type::Position => "position",
            Type::Unit => "nothing",
        }
    }
}

#[derive(Debug, Error)]
pub enum DslError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unknown function `{name}`")]
    UnknownFunction { name: String, line: usize, col: usize },
    #[error("{line}:{col}: {function}: {message}")]
    Arity {
        function: &'static str,
        message: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: `{name}` is not bound")]
    Unbound { name: String, line: usize, col: usize },
    #[error("{line}:{col}: `{name}` is already bound")]
    Rebind { name: String, line: usize, col: usize },
    #[error("{line}:{col}: type error: {message}")]
    Type { message: String, line: usize, col: usize },
    #[error("{line}:{col}: division by zero")]
    DivisionByZero { line: usize, col: usize },
    #[error("{line}:{col}: heatmap is zero everywhere")]
    Degenerate { line: usize, col: usize },
    #[error("{line}:{col}: {modality} queries are unavailable: {source}")]
    ModalityUnavailable {
        modality: &'static str,
        line: usize,
        col: usize,
        #[source]
        source: ProviderError,
    },
    #[error("{line}:{col}: {source}")]
    Localize {
        line: usize,
        col: usize,
        #[source]
        source: LocalizeError,
    },
    #[error("{line}:{col}: cannot load image {path:?}: {message}")]
    Image {
        path: String,
        message: String,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: {source}")]
    Heatmap {
        line: usize,
        col: usize,
        #[source]
        source: HeatmapError,
    },
}

impl DslError {
    /// Whether the error was raised before evaluation started.
    pub fn is_static(&self) -> bool {
        matches!(
            self,
            DslError::Syntax { .. }
                | DslError::UnknownFunction { .. }
                | DslError::Arity { .. }
                | DslError::Unbound { .. }
                | DslError::Rebind { .. }
                | DslError::Type { .. }
        )
    }

    pub fn location(&self) -> (usize, usize) {
        match self {
            DslError::Syntax { line, col, .. }
            | DslError::UnknownFunction { line, col, .. }
            | DslError::Arity { line, col, .. }
            | DslError::Unbound { line, col, .. }
            | DslError::Rebind { line, col, .. }
            | DslError::Type { line, col, .. }
            | DslError::DivisionByZero { line, col }
            | DslError::Degenerate { line, col }
            | DslError::ModalityUnavailable { line, col, .. }
            | DslError::Localize { line, col, .. }
            | DslError::Image { line, col, .. }
            | DslError::Heatmap { line, col, .. } => (*line, *col),
        }
    }
}

#[cfg(test)]
mod tests;
