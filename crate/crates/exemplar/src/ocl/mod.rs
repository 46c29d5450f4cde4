//! Front end for the constraint language: a closed subset of OCL 2.4 surface
//! syntax covering invariants over class models — Boolean connectives,
//! relational and arithmetic operators, collection operations and iterator
//! expressions, `if`/`let`, user-defined operations, and the `oclIs*`
//! introspection operations.
//!
//! Anything outside the subset is rejected by the parser with a diagnostic
//! naming the unsupported feature, so failures are loud rather than silently
//! mis-typed.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod types;

pub use ast::{Expr, ExprKind, Label, Type};
pub use parser::{parse_constraint, parse_constraint_file, ConstraintFile, Invariant};
pub use pretty::pretty_print;
pub use types::{OpDef, OpTable};

use std::fmt;

/// Byte span of a node in its source text; `Span::SYNTH` marks nodes created
/// by transformations rather than the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub const SYNTH: Span = Span { start: 0, end: 0 };
    pub fn new(start: usize, end: usize) -> Self {
        Span { start: start as u32, end: end as u32 }
    }
}

/// Error raised by the lexer, parser or type checker. The offset is a byte
/// position into the offending source text.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum FrontendError {
    #[error("lex error at byte {offset}: {message}")]
    Lex { offset: usize, message: String },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported feature at byte {offset}: {feature}")]
    Unsupported { offset: usize, feature: String },
    #[error("type error at byte {offset}: {message}")]
    Type { offset: usize, message: String },
    #[error("unresolved name at byte {offset}: {name}")]
    Unresolved { offset: usize, name: String },
    #[error("duplicate invariant name {name}")]
    DuplicateInvariant { name: String },
    #[error("duplicate operation definition {name}")]
    DuplicateOperation { name: String },
}

impl FrontendError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            FrontendError::Lex { offset, .. }
            | FrontendError::Parse { offset, .. }
            | FrontendError::Unsupported { offset, .. }
            | FrontendError::Type { offset, .. }
            | FrontendError::Unresolved { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

/// Render an error with a line/column and a caret into the source.
pub fn render_error(err: &FrontendError, source: &str) -> String {
    let Some(off) = err.offset() else { return err.to_string() };
    let off = off.min(source.len());
    let (mut line, mut col, mut line_start) = (1usize, 1usize, 0usize);
    for (i, ch) in source.char_indices() {
        if i >= off {
            break;
        }
        if ch == '\n' {
            line += 1;
            col = 1;
            line_start = i + 1;
        } else {
            col += 1;
        }
    }
    let line_text: &str = source[line_start..].lines().next().unwrap_or("");
    let caret = " ".repeat(col.saturating_sub(1)) + "^";
    format!("{err}\n  --> line {line}, column {col}\n  | {line_text}\n  | {caret}")
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}
