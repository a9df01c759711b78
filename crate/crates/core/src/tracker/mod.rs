//! Online tracking by detection with hallucinated positives, and the
//! ablation harness over synthetic videos.

mod ablation;
mod online;
mod sim;

pub use ablation::{prepare_suite, run_ablation, AblationRow, AblationTable, Suite, SuiteConfig, Variant, VariantSummary};
pub use online::{
    argmax_first, classifier_loss, detect, joint_step, joint_train, track_video, IterationStats, OnlineState,
    PairSource, Ratio, TrackConfig, TrackContext, TrackResult,
};
pub use sim::{Candidate, LabeledSample, SamplePool, SimFrame, SimVideo, VideoConfig};

use thiserror::Error;

use crate::dataio::DataError;
use crate::hallucinator::HalError;
use crate::nets::NetError;
use crate::numgrad::NumError;
use crate::sdt::SdtError;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error(transparent)]
    Sdt(#[from] SdtError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid tracking configuration: {0}")]
    InvalidConfig(String),
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("no candidates to score")]
    NoCandidates,
    #[error("no labeled training samples")]
    EmptyPool,
    #[error("the deformation pair set is empty; lower T (top) or disable SDT")]
    EmptyPairs,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}
