//! Four-stage training pipeline.
//!
//! 1. cleanse the raw records;
//! 2. train a preliminary model without the semantic loss, score the
//!    cleansed set and draw the confidence-stratified dev sample;
//! 3. label the dev sample with the oracle judge and distill the student;
//! 4. annotate the cleansed set with the student and train the final model
//!    with both losses, then evaluate it on the test split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{fit, EpochLog, LossWeights, TrainConfig, TrainError};
use crate::dataset::{
    cleanse, split, stratified_dev_sample, DevComposition, ProductRecord, ScoredRecord, SplitError, SplitSpec,
};
use crate::encoder::EncoderConfig;
use crate::infer::{predict_batch, InferError, PredictionRecord};
use crate::io::{atomic_write, write_json_file, write_jsonl_file, IoError};
use crate::metrics::{evaluate, EvalReport, MetricsError};
use crate::moe::{init_model, CheckpointError, MoeConfig, MoeError, MoeModel};
use crate::rng::stream_rng;
use crate::semantic::{
    annotate_corpus, annotation_rows, distill_judge_with, DistillConfig, Judge, JudgeModel, LabeledPair, OracleJudge,
    OracleThresholds, SemanticError, Verdict,
};
use crate::taxonomy::Taxonomy;
use rand::Rng;

pub const CLEANSED: &str = "cleansed.jsonl";
pub const DEV: &str = "dev.jsonl";
pub const JUDGE: &str = "judge.ckpt";
pub const ANNOTATED: &str = "annotated.jsonl";
pub const MODEL: &str = "model.ckpt";
pub const METRICS: &str = "metrics.json";

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Moe(#[from] MoeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Invalid(String),
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        StageError::Io(IoError::Io(e))
    }
}

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: u8,
    #[source]
    pub source: StageError,
}

trait Stage<T> {
    fn stage(self, stage: u8) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> Stage<T> for Result<T, E> {
    fn stage(self, stage: u8) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, source: e.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub moe: MoeConfig,
    /// Final-model training. The preliminary model uses the same settings
    /// with `omega_s = 1`.
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub confidence_threshold: f64,
    pub high_conf_fraction: f64,
    pub tau_leaf: f64,
    pub judge_thresholds: OracleThresholds,
    pub distill: DistillConfig,
    pub include_absent_categories: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            encoder: EncoderConfig::default(),
            moe: MoeConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            confidence_threshold: 0.9,
            high_conf_fraction: 0.05,
            tau_leaf: crate::infer::DEFAULT_TAU_LEAF,
            judge_thresholds: OracleThresholds::default(),
            distill: DistillConfig::default(),
            include_absent_categories: false,
        }
    }
}

impl PipelineConfig {
    /// Copies the global seed into every component that takes one.
    pub fn with_global_seed(mut self) -> Self {
        self.encoder.seed = self.seed;
        self.moe.seed = self.seed;
        self.train.seed = self.seed;
        self.split.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), StageError> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(StageError::Invalid(format!("confidence_threshold = {}", self.confidence_threshold)));
        }
        if !(self.high_conf_fraction > 0.0 && self.high_conf_fraction <= 1.0) {
            return Err(StageError::Invalid(format!("high_conf_fraction = {}", self.high_conf_fraction)));
        }
        if !(0.0..=1.0).contains(&self.tau_leaf) {
            return Err(StageError::Invalid(format!("tau_leaf = {}", self.tau_leaf)));
        }
        self.split.validate()?;
        self.train.validate()?;
        self.judge_thresholds.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub prelim: MoeModel,
    pub model: MoeModel,
    pub judge: JudgeModel,
    pub prelim_log: Vec<EpochLog>,
    pub final_log: Vec<EpochLog>,
    pub rejected: usize,
    pub dev: DevComposition,
    pub report: EvalReport,
    pub artifacts: Vec<PathBuf>,
}

/// Stage-2 scoring: prediction and correctness on the effective leaf.
pub fn score_records(
    model: &MoeModel,
    records: &[ProductRecord],
    taxonomy: &Taxonomy,
    tau_leaf: f64,
) -> Result<Vec<ScoredRecord>, InferError> {
    let preds = predict_batch(model, records, taxonomy, tau_leaf, false)?;
    Ok(records
        .iter()
        .zip(preds)
        .map(|(r, p)| ScoredRecord {
            correct: Some(p.selected_leaf.as_str()) == r.effective_leaf(),
            predicted_leaf: p.selected_leaf,
            confidence: p.leaf_confidence,
            record: r.clone(),
        })
        .collect())
}

/// Oracle labels for the dev sample, judged on each record's own leaf.
pub fn label_dev(
    dev: &[ProductRecord],
    judge: &dyn Judge,
    taxonomy: &Taxonomy,
) -> Result<Vec<LabeledPair>, SemanticError> {
    dev.iter()
        .map(|r| {
            let code = r.effective_leaf().ok_or_else(|| SemanticError::EmptyPath(r.id.clone()))?;
            Ok(LabeledPair {
                title: r.title.clone(),
                code: code.to_string(),
                label: judge.judge(&r.title, code, taxonomy)?,
            })
        })
        .collect()
}

/// When the dev labels lack a Y or an N, adds each dev title paired with a
/// seeded foreign leaf, labeled by the same judge. Clean corpora otherwise
/// never produce an N.
pub fn contrast_if_degenerate(
    labeled: &mut Vec<LabeledPair>,
    judge: &dyn Judge,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<usize, SemanticError> {
    let has = |v: Verdict, l: &[LabeledPair]| l.iter().any(|p| p.label.verdict == v);
    if has(Verdict::Y, labeled) && has(Verdict::N, labeled) {
        return Ok(0);
    }
    let leaves: Vec<&str> = taxonomy.leaves().map(|n| n.code.as_str()).collect();
    if leaves.len() < 2 {
        return Ok(0);
    }
    let mut rng = stream_rng(seed, "dev-contrast");
    let own: Vec<(String, String)> = labeled.iter().map(|p| (p.title.clone(), p.code.clone())).collect();
    let added = own.len();
    for (title, code) in own {
        let other = loop {
            let c = leaves[rng.gen_range(0..leaves.len())];
            if c != code {
                break c;
            }
        };
        labeled.push(LabeledPair {
            title: title.clone(),
            code: other.to_string(),
            label: judge.judge(&title, other, taxonomy)?,
        });
    }
    Ok(added)
}

fn save_model(model: &MoeModel, path: &Path) -> Result<(), StageError> {
    atomic_write(path, |w| model.save(w).map_err(StageError::from))
}

pub fn run_pipeline(
    raw: Vec<ProductRecord>,
    taxonomy: &Taxonomy,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<PipelineOutcome, PipelineError> {
    config.validate().stage(0)?;
    fs::create_dir_all(out_dir).stage(0)?;
    let path = |name: &str| out_dir.join(name);

    // Stage 1.
    let outcome = cleanse(raw, taxonomy);
    let rejected = outcome.rejected.len();
    let cleansed = outcome.kept;
    write_jsonl_file(&path(CLEANSED), &cleansed).stage(1)?;
    log::info!("stage 1: kept {} records, rejected {rejected}", cleansed.len());

    // Stage 2.
    let splits = split(cleansed.clone(), &config.split).stage(2)?;
    let encoder = config.encoder.clone().with_vocabularies(&splits.train);
    let fresh = || init_model(taxonomy, &encoder, &config.moe, config.seed);
    let prelim_cfg =
        TrainConfig { loss_weights: LossWeights { omega_s: 1.0, ..config.train.loss_weights }, ..config.train.clone() };
    let (prelim, prelim_log) =
        fit(fresh().stage(2)?, &splits.train, &splits.val, taxonomy, None, &prelim_cfg).stage(2)?;
    let scored = score_records(&prelim, &cleansed, taxonomy, config.tau_leaf).stage(2)?;
    let dev = stratified_dev_sample(&scored, config.confidence_threshold, config.high_conf_fraction, config.seed);
    write_jsonl_file(&path(DEV), &dev.records).stage(2)?;
    log::info!("stage 2: dev sample {:?}", dev.composition);

    // Stage 3.
    let oracle = OracleJudge::new(config.judge_thresholds).stage(3)?;
    let mut labeled = label_dev(&dev.records, &oracle, taxonomy).stage(3)?;
    let added = contrast_if_degenerate(&mut labeled, &oracle, taxonomy, config.seed).stage(3)?;
    if added > 0 {
        log::warn!("stage 3: dev labels lack a verdict class; added {added} mismatched pairs");
    }
    let judge = distill_judge_with(&labeled, taxonomy, config.seed, &config.distill).stage(3)?;
    atomic_write(&path(JUDGE), |w| judge.save(w).map_err(StageError::from)).stage(3)?;

    // Stage 4.
    let table = annotate_corpus(&cleansed, &judge, taxonomy).stage(4)?;
    write_jsonl_file(&path(ANNOTATED), &annotation_rows(&table)).stage(4)?;
    let (model, final_log) =
        fit(fresh().stage(4)?, &splits.train, &splits.val, taxonomy, Some(&table), &config.train).stage(4)?;
    save_model(&model, &path(MODEL)).stage(4)?;

    let preds = predict_batch(&model, &splits.test, taxonomy, config.tau_leaf, false).stage(4)?;
    let dump: Vec<PredictionRecord> =
        splits.test.iter().zip(&preds).map(|(r, p)| PredictionRecord::new(&r.id, p)).collect();
    let report = evaluate(&dump, &splits.test, taxonomy, config.include_absent_categories).stage(4)?;
    write_json_file(&path(METRICS), &report).stage(4)?;

    Ok(PipelineOutcome {
        prelim,
        model,
        judge,
        prelim_log,
        final_log,
        rejected,
        dev: dev.composition,
        report,
        artifacts: [CLEANSED, DEV, JUDGE, ANNOTATED, MODEL, METRICS].iter().map(|n| path(n)).collect(),
    })
}
