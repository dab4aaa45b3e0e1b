//! Hierarchical tax-code classification.
//!
//! A product record is encoded into hashed text embeddings plus metadata
//! routing features. One mixture-of-experts block per taxonomy level gates
//! its experts on the metadata, and each level predicts a code (or NULL
//! past the record's depth). Training combines a hierarchical loss with a
//! semantic-consistency loss supervised by a distilled judge. Inference
//! prefers a confident leaf and can rebuild the path from that leaf's
//! ancestors (RePath).

pub mod container;
pub mod dataset;
pub mod encoder;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod moe;
pub mod rng;
pub mod semantic;
pub mod taxonomy;
pub mod tensor;
pub mod train;

pub use dataset::{ProductRecord, Source};
pub use encoder::{EncoderConfig, FeatureVector};
pub use infer::{predict_batch, repath, select_prediction, PredictionPath, PredictionRecord, SelectionMode};
pub use metrics::{evaluate, EvalPair, EvalReport, Mode};
pub use moe::{init_model, LevelDistribution, MoeConfig, MoeModel};
pub use semantic::{ConsistencyLabel, Judge, JudgeModel, OracleJudge, Verdict};
pub use taxonomy::{NodeSpec, TaxNode, Taxonomy, NULL_CODE};
pub use train::{fit, run_pipeline, LossWeights, PipelineConfig, TrainConfig};

use thiserror::Error;

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Taxonomy(#[from] taxonomy::TaxonomyError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Container(#[from] container::ContainerError),
    #[error(transparent)]
    Split(#[from] dataset::SplitError),
    #[error(transparent)]
    Synth(#[from] dataset::SynthError),
    #[error(transparent)]
    Wos(#[from] dataset::wos::WosError),
    #[error(transparent)]
    Moe(#[from] moe::MoeError),
    #[error(transparent)]
    Checkpoint(#[from] moe::CheckpointError),
    #[error(transparent)]
    Semantic(#[from] semantic::SemanticError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Pipeline(#[from] train::PipelineError),
    #[error(transparent)]
    Infer(#[from] infer::InferError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

impl Error {
    /// True when the error came from the filesystem rather than from the
    /// inputs or configuration.
    pub fn is_io(&self) -> bool {
        fn container(e: &container::ContainerError) -> bool {
            matches!(e, container::ContainerError::Io(_))
        }
        fn file(e: &io::IoError) -> bool {
            matches!(e, io::IoError::Io(_))
        }
        match self {
            Error::Taxonomy(taxonomy::TaxonomyError::Io(_)) => true,
            Error::Io(e) => file(e),
            Error::Container(e) => container(e),
            Error::Checkpoint(moe::CheckpointError::Container(e)) => container(e),
            Error::Semantic(semantic::SemanticError::Container(e)) => container(e),
            Error::Pipeline(p) => match &p.source {
                train::StageError::Io(e) => file(e),
                train::StageError::Checkpoint(moe::CheckpointError::Container(e)) => container(e),
                train::StageError::Semantic(semantic::SemanticError::Container(e)) => container(e),
                _ => false,
            },
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(io::IoError::Io(e))
    }
}
