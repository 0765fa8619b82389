//! Metrics, statistics and report generation.

pub mod metrics;
pub mod ragas;
pub mod report;
pub mod stats;
pub mod sweeps;

use crate::corpus::CorpusError;
use crate::gateway::GatewayError;
use crate::prompt::PromptError;
use crate::reader::ReaderError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub use metrics::{accuracy, context_precision, context_recall, faithfulness, recall_at_k, RecallSubset, RerankTrial};
pub use report::EvalReport;
pub use stats::{chi2_sf, chi_square_bias, ChiSquare};
