//! Command-line front end: config ingestion, run orchestration, and result
//! emission for the wedflow solvers. Exit codes are part of the interface:
//!
//! | code | meaning                                         |
//! |------|-------------------------------------------------|
//! | 0    | success                                         |
//! | 2    | invalid config (message names the offending key)|
//! | 3    | divergence detected by the iteration guard      |
//! | 4    | iteration budget exhausted before tolerance     |
//! | 5    | numerical failure inside a linear/Newton solve  |
//! | 6    | filesystem error                                |
//! | 7    | acceptance criteria failed                      |

pub mod config;
pub mod run;

pub use config::RunConfig;
pub use run::{cmd_accept, cmd_solve, cmd_sweep, list_criteria};

use wedflow::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_NUMERICS: i32 = 5;
pub const EXIT_IO: i32 = 6;
pub const EXIT_ACCEPTANCE: i32 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: key `{key}`: {detail}")]
    Config { key: String, detail: String },

    #[error(transparent)]
    Solver(#[from] Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// Stable machine-readable exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_IO,
            CliError::Solver(e) => match e {
                Error::DivergenceDetected { .. } => EXIT_DIVERGENCE,
                Error::MaxIterExceeded { .. }
                | Error::MaxOuterIterExceeded { .. }
                | Error::InnerSolveFailed { .. }
                | Error::LineSearchFailed { .. } => EXIT_NONCONVERGENCE,
                Error::NewtonFailed { .. } => EXIT_NUMERICS,
                // Everything else is a problem-construction failure: the
                // config described an instance the library rejects.
                _ => EXIT_CONFIG,
            },
        }
    }
}
