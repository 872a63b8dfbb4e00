use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Validation(#[from] ValidationErrors),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no unique steady state: {0}")]
    NoUniqueSteadyState(String),

    #[error("{what}: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Residual {
        what: &'static str,
        residual: f64,
        tolerance: f64,
    },

    #[error("vectorized space of dimension {dim} exceeds the limit of {limit}")]
    DimensionOverflow { dim: usize, limit: usize },

    #[error("Fock truncation did not converge: occupations still moved by {change:.3e} at n_max = {n_max}")]
    TruncationNotConverged { n_max: usize, change: f64 },

    #[error("{0} is undefined")]
    Undefined(&'static str),

    #[error("at {point}: {source}")]
    AtPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(point: impl Into<String>, source: Error) -> Self {
        Error::AtPoint {
            point: point.into(),
            source: Box::new(source),
        }
    }

    /// Strips any [`Error::AtPoint`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors raised before any solver ran (bad parameters or
    /// violated preconditions).
    pub fn is_validation(&self) -> bool {
        matches!(self.root(), Error::Validation(_) | Error::Precondition(_))
    }
}

/// One violated invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

/// Every invariant violation found while validating a parameter record.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct ValidationErrors(pub Vec<Violation>);

impl ValidationErrors {
    pub fn violations(&self) -> &[Violation] {
        &self.0
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|v| v.field == field)
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid parameters: ")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{}: {}", v.field, v.message)?;
        }
        Ok(())
    }
}
