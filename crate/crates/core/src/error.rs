use thiserror::Error;

use crate::linops::SolveReport;

#[derive(Debug, Error)]
pub enum HomogError {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid coefficient field: {0}")]
    Field(String),

    #[error("mu = {re}{im:+}i lies in the sector |Im z| <= {slope}*(Re z + {shift})")]
    Sector {
        re: f64,
        im: f64,
        slope: f64,
        shift: f64,
    },

    #[error("eps = {eps} is not aligned with the grid: {reason}")]
    Alignment { eps: f64, reason: String },

    #[error("{context}: Krylov solver did not converge ({report})")]
    NoConvergence {
        context: String,
        report: SolveReport,
    },

    #[error("{0}")]
    Fit(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("{context}: {source}")]
    Located {
        context: String,
        #[source]
        source: Box<HomogError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HomogError {
    pub fn at(self, context: impl Into<String>) -> Self {
        HomogError::Located {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, HomogError>;
