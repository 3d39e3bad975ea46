//! Training, evaluation, and verification drivers shared by the CLI and
//! the integration tests.

pub mod csv;
pub mod eval;
pub mod gradsuite;
pub mod train;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TapeError;
use crate::checkpoint::CheckpointError;
use crate::config::{ConfigError, Stage};
use crate::model::ModelError;
use crate::optim::OptimError;
use crate::world::dataset::DatasetError;
use crate::world::episode::GenError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("dataset has no episodes")]
    EmptyDataset,
    #[error("training pool has {got} usable frame pairs, needs at least {want}")]
    PoolTooSmall { got: usize, want: usize },
    #[error("stage {run:?} run cannot resume a stage {found:?} checkpoint")]
    StageMismatch { run: Stage, found: Stage },
}

pub type HarnessResult<T> = Result<T, HarnessError>;
