//! Experiment harness for `topp-core`: seeded workloads, `TWLT` tensor
//! files, TOML configuration, and the drivers behind the `topp` binary.

pub mod commands;
pub mod config;
pub mod report;
pub mod tensor;
pub mod workload;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::Config;
pub use tensor::{read_tensor, write_tensor, Tensor, TensorError};
pub use workload::{Workload, WorkloadItem, WorkloadKind, WorkloadSpec};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Tensor { path: PathBuf, source: TensorError },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("numerical failure: {0}")]
    Numerical(#[from] topp_core::Error),
    #[error("{0} check(s) failed")]
    CheckFailed(usize),
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::CheckFailed(_) => 1,
            HarnessError::Config(_) => 2,
            HarnessError::Io { .. } | HarnessError::Tensor { .. } | HarnessError::Csv(_) => 3,
            HarnessError::Numerical(_) => 4,
        }
    }
}
