use std::fmt;

use crate::ast::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub span: Span,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
            span,
        }
    }

    pub fn warning(message: impl Into<String>, span: Span) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
            span,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        if self.span.is_synthetic() {
            write!(f, "{sev}: {}", self.message)
        } else {
            write!(f, "{}: {sev}: {}", self.span, self.message)
        }
    }
}

/// A failed pipeline stage. Diagnostics are user-level problems; internal
/// errors mean a transform invariant was broken.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}", render(.0))]
    Diagnostics(Vec<Diagnostic>),
    #[error("internal error: {0}")]
    Internal(String),
}

fn render(ds: &[Diagnostic]) -> String {
    ds.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn single(message: impl Into<String>, span: Span) -> Self {
        Error::Diagnostics(vec![Diagnostic::error(message, span)])
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            Error::Diagnostics(ds) => ds,
            Error::Internal(_) => &[],
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
