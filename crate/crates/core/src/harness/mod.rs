//! Synthetic corpora, quality metrics, channel sweeps and the intent-shift
//! scenario runner.

pub mod corpus;
pub mod metrics;
pub mod scenario;
pub mod sweep;

use std::path::PathBuf;

use thiserror::Error;

use crate::channel::ChannelError;
use crate::importance::ImportanceError;
use crate::kb::KbError;
use crate::semcodec::CodecError;
use crate::sync::SyncError;

pub use corpus::{checker_image, generate_corpus, Family};
pub use metrics::{kb_information, mse, psnr, ssim, weighted_mse, WeightedMse};
pub use scenario::{
    compare_protection, run_scenario, sign_test_p, PairedFrame, PhaseConfig, ReportRow, ScenarioConfig,
    ScenarioEvent, ScenarioReport,
};
pub use sweep::{cliff_sweep, coded_ber, protection_window, uncoded_ber, CodedPoint};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown corpus family {0:?}")]
    UnknownFamily(String),
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("replicas diverged after the update following subset {subset}")]
    ReplicaDiverged { subset: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}
