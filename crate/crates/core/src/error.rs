use std::fmt;

use thiserror::Error;

/// Position in a line-oriented input, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("undeclared capability `{0}`")]
    UndeclaredCapability(String),
    #[error("duplicate capability id `{0}`")]
    DuplicateCapability(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("edge `{0}` has an empty tail")]
    EmptyTail(String),
    #[error("edge `{0}` has an empty head")]
    EmptyHead(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {kind}")]
pub struct ParseError {
    pub location: Location,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub fn new(line: usize, column: usize, kind: ParseErrorKind) -> Self {
        Self {
            location: Location { line, column },
            kind,
        }
    }
}

/// Errors from mutating or querying a hypergraph through the library API.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("undeclared capability `{0}`")]
    UndeclaredCapability(String),
    #[error("capability index {index} out of range for {n} capabilities")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("duplicate capability id `{0}`")]
    DuplicateCapability(String),
    #[error("duplicate edge id `{0}`")]
    DuplicateEdge(String),
    #[error("no such edge `{0}`")]
    NoSuchEdge(String),
    #[error("edge `{0}` has an empty tail")]
    EmptyTail(String),
    #[error("edge `{0}` has an empty head")]
    EmptyHead(String),
    #[error("invalid id `{0}`")]
    InvalidId(String),
}

/// An exhaustive search would exceed its configured budget.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{what}: {required} candidates exceed the budget of {budget}")]
pub struct BudgetExceeded {
    pub what: &'static str,
    pub required: u128,
    pub budget: u128,
}
