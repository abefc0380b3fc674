//! Whole-program defunctionalization of contract-annotated higher-order
//! programs.
//!
//! The pipeline is: [`parser::parse`] → [`typecheck::typecheck`] →
//! [`defunc::defunctionalize`] (which also translates specifications through
//! [`specgen`]) → [`emit::emit`]. The [`eval`] interpreters run both the
//! source and the generated program with runtime contract checking, and
//! [`check`] drives differential testing over the bundled [`corpus`].

pub mod analysis;
pub mod ast;
pub mod check;
pub mod corpus;
pub mod defunc;
pub mod diag;
pub mod emit;
pub mod eval;
pub mod fuzz;
pub mod lexer;
pub mod parser;
pub mod specgen;
pub mod typecheck;

pub use ast::{Expr, ExprKind, Program, Type};
pub use diag::{Diagnostic, Error, Severity};
