//! Fairness post-processing over group-wise ROC convex hulls.
//!
//! Scores are mapped to per-group ROC hulls, a linear program over hull
//! mixtures finds the most accurate target rates meeting linear and
//! linear-fractional parity constraints, and a minimal-intervention
//! randomized classifier realizes those targets at prediction time.

// `!(x > 0.0)` style checks are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints;
pub mod construct;
pub mod data;
pub mod linprog;
pub mod region;
pub mod roc;
pub mod config;
pub mod eval;
pub mod pipeline;

use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for pipeline and command-line use.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Roc(#[from] roc::RocError),
    #[error(transparent)]
    Constraint(#[from] constraints::ConstraintError),
    #[error(transparent)]
    Region(#[from] region::RegionError),
    #[error(transparent)]
    Construct(#[from] construct::ConstructError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Oracle(#[from] eval::OracleError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Input(String),
}

impl Error {
    /// Process exit status: 2 for bad input, 3 when no classifier can be built, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        use construct::ConstructError as C;
        match self {
            Error::Data(_) | Error::Config(_) | Error::Io { .. } | Error::Input(_) => 2,
            Error::Roc(roc::RocError::DegenerateGroup { .. }) => 2,
            Error::Oracle(eval::OracleError::Roc(roc::RocError::DegenerateGroup { .. })) => 2,
            Error::Constraint(constraints::ConstraintError::Denominator { .. }) => 4,
            Error::Constraint(_) => 2,
            Error::Construct(C::Infeasible { .. } | C::OutsideHull { .. }) => 3,
            Error::Construct(C::Io(_) | C::Json(_) | C::UnknownGroup { .. } | C::GroupMismatch(..)) => 2,
            Error::Region(region::RegionError::Infeasible) => 3,
            Error::Oracle(eval::OracleError::Region(region::RegionError::Infeasible)) => 3,
            _ => 4,
        }
    }
}
