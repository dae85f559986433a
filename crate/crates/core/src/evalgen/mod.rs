//! Evaluation: ranking metrics, the frequency and matrix-factorization
//! sanity baselines, a synthetic travel-behavior corpus generator, and
//! the runner that scores every model variant on the same test users.

mod baselines;
mod experiment;
mod gradcheck;
mod metrics;
mod synth;

pub use baselines::{train_bpr_mf, MfConfig, MfRanker, TopRanker};
pub use experiment::{
    evaluate_models, run_experiment, EvalReport, ExperimentOptions, ModelScores, ModelSpec,
};
pub use gradcheck::{run_tiny_gradcheck, GradcheckSummary, LossCheck};
pub use metrics::{average_precision, mean_average_precision, recall_at_k};
pub use synth::{generate_synthetic, SynthConfig, SynthTruth};

use thiserror::Error;

use crate::dataio::DataError;
use crate::numkit::NumError;
use crate::outoftown::TripleError;
use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground-truth set is empty")]
    EmptyTruth,
    #[error("ranking holds {have} items but the catalog has {need}")]
    ShortRanking { have: usize, need: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Sampling(#[from] TripleError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
