//! Final path selection and leaf-to-path reconstruction.
//!
//! Selection prefers the most confident level whose argmax is a taxonomy
//! leaf, assembling the path from the per-level argmaxes above it. Those
//! argmaxes need not form a parent→child chain, so a leaf-confident path can
//! carry an off-chain intermediate node. [`repath`] replaces any path ending
//! at a leaf with that leaf's ancestor chain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ProductRecord;
use crate::moe::{LevelDistribution, MoeError, MoeModel};
use crate::taxonomy::{Taxonomy, NULL_CODE};
use crate::tensor::argmax;

pub const DEFAULT_TAU_LEAF: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum InferError {
    #[error("missing distribution for level {0}")]
    MissingLevel(usize),
    #[error("level-1 distribution has no non-NULL labels")]
    EmptyFirstLevel,
    #[error("model was trained on taxonomy {model}, supplied taxonomy hashes to {supplied}")]
    TaxonomyMismatch { model: String, supplied: String },
    #[error("tau_leaf must lie in [0, 1], got {0}")]
    Tau(f64),
    #[error("record {id}: {source}")]
    Model { id: String, source: MoeError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    LeafConfident,
    DeepestValid,
    Repathed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPath {
    pub per_level: Vec<LevelDistribution>,
    pub selected_path: Vec<String>,
    pub selected_leaf: String,
    pub mode: SelectionMode,
    pub leaf_confidence: f64,
}

/// Index and code of the most probable non-NULL label at level 1.
fn first_level(d: &LevelDistribution, taxonomy: &Taxonomy) -> Result<(usize, String), InferError> {
    let index = if d.argmax_code == NULL_CODE {
        // NULL is the last slot; everything before it is a real code.
        let real = &d.probs[..d.probs.len() - 1];
        if real.is_empty() {
            return Err(InferError::EmptyFirstLevel);
        }
        argmax(real)
    } else {
        d.argmax_index
    };
    let code = taxonomy.label_code(1, index).ok_or(InferError::EmptyFirstLevel)?;
    Ok((index, code.to_string()))
}

pub fn select_prediction(
    dists: &[LevelDistribution],
    taxonomy: &Taxonomy,
    tau_leaf: f64,
) -> Result<PredictionPath, InferError> {
    if !(0.0..=1.0).contains(&tau_leaf) {
        return Err(InferError::Tau(tau_leaf));
    }
    let needed = taxonomy.max_depth().max(1);
    for l in 1..=needed.max(dists.len()) {
        if dists.get(l - 1).map(|d| d.level) != Some(l) {
            return Err(InferError::MissingLevel(l));
        }
    }

    let (first_index, first_code) = first_level(&dists[0], taxonomy)?;

    let confident = dists.iter().filter(|d| d.confidence >= tau_leaf && taxonomy.is_leaf(&d.argmax_code)).fold(
        None::<&LevelDistribution>,
        |best, d| match best {
            Some(b) if b.confidence >= d.confidence => Some(b),
            _ => Some(d),
        },
    );

    let (selected_path, mode, leaf_confidence) = if let Some(leaf) = confident {
        let mut path = vec![first_code];
        if leaf.level > 1 {
            path.extend(
                dists[1..leaf.level].iter().filter(|d| d.argmax_code != NULL_CODE).map(|d| d.argmax_code.clone()),
            );
        }
        (path, SelectionMode::LeafConfident, leaf.confidence)
    } else {
        let mut path = vec![first_code];
        for d in &dists[1..] {
            let code = &d.argmax_code;
            let extends = taxonomy
                .node(code)
                .and_then(|n| n.parent.as_deref())
                .is_some_and(|p| Some(p) == path.last().map(String::as_str));
            if code == NULL_CODE || !extends {
                break;
            }
            path.push(code.clone());
        }
        let level = path.len();
        let conf = if level == 1 { dists[0].probs[first_index] } else { dists[level - 1].confidence };
        (path, SelectionMode::DeepestValid, conf)
    };
    Ok(PredictionPath {
        per_level: dists.to_vec(),
        selected_leaf: selected_path.last().expect("nonempty path").clone(),
        selected_path,
        mode,
        leaf_confidence,
    })
}

/// Replaces the path with the ancestor chain of its leaf when the leaf is a
/// taxonomy leaf; otherwise returns the prediction unchanged.
pub fn repath(pred: &PredictionPath, taxonomy: &Taxonomy) -> PredictionPath {
    let mut out = pred.clone();
    if taxonomy.is_leaf(&pred.selected_leaf) {
        out.selected_path = taxonomy.ancestors(&pred.selected_leaf).expect("leaf exists in taxonomy");
        out.mode = SelectionMode::Repathed;
    }
    out
}

pub fn check_taxonomy(model: &MoeModel, taxonomy: &Taxonomy) -> Result<(), InferError> {
    let supplied = taxonomy.content_hash();
    if supplied != model.taxonomy_hash {
        return Err(InferError::TaxonomyMismatch { model: model.taxonomy_hash.clone(), supplied });
    }
    Ok(())
}

/// Order-preserving parallel prediction.
pub fn predict_batch(
    model: &MoeModel,
    records: &[ProductRecord],
    taxonomy: &Taxonomy,
    tau_leaf: f64,
    use_repath: bool,
) -> Result<Vec<PredictionPath>, InferError> {
    check_taxonomy(model, taxonomy)?;
    records
        .par_iter()
        .map(|r| {
            let (dists, _) =
                model.forward(&model.encode(r)).map_err(|source| InferError::Model { id: r.id.clone(), source })?;
            let p = select_prediction(&dists, taxonomy, tau_leaf)?;
            Ok(if use_repath { repath(&p, taxonomy) } else { p })
        })
        .collect()
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub path: Vec<String>,
    pub leaf: String,
    pub mode: SelectionMode,
    pub leaf_confidence: f64,
    pub per_level_argmax: Vec<String>,
}

impl PredictionRecord {
    pub fn new(id: &str, p: &PredictionPath) -> Self {
        PredictionRecord {
            id: id.to_string(),
            path: p.selected_path.clone(),
            leaf: p.selected_leaf.clone(),
            mode: p.mode,
            leaf_confidence: p.leaf_confidence,
            per_level_argmax: p.per_level.iter().map(|d| d.argmax_code.clone()).collect(),
        }
    }

    /// RePath on a dump line: only the path and mode can change.
    pub fn repathed(&self, taxonomy: &Taxonomy) -> Self {
        let mut out = self.clone();
        if taxonomy.is_leaf(&self.leaf) {
            out.path = taxonomy.ancestors(&self.leaf).expect("leaf exists in taxonomy");
            out.mode = SelectionMode::Repathed;
        }
        out
    }
}
