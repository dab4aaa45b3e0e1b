//! Product records, Stage-1 cleansing, depth-stratified splitting,
//! confidence-stratified dev sampling and the synthetic corpus generator.

mod cleanse;
mod normalize;
mod sample;
mod split;
pub mod synth;
pub mod wos;

pub use cleanse::{cleanse, CleanseOutcome, RejectReason, Rejection};
pub use normalize::{normalize_title, tokens};
pub use sample::{stratified_dev_sample, DevComposition, DevSample, ScoredRecord};
pub use split::{split, SplitError, SplitSpec, Splits};
pub use synth::{synth_corpus, SynthConfig, SynthCorpus, SynthError};

use serde::{Deserialize, Serialize};

/// Where a record came from. The four production sources are kept as tags so
/// multi-source merging is exercised even on synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    GoodsRegistry,
    KnowledgeBase,
    ValidationRecord,
    InvoiceArchive,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: String,
    pub title: String,
    pub category_name: String,
    pub bu_code: String,
    pub ou_code: String,
    pub system_code: String,
    /// Category property values as `key:value` strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpvs: Option<Vec<String>>,
    pub label_path: Vec<String>,
    pub source: Source,
}

impl ProductRecord {
    /// Deepest annotated node.
    pub fn effective_leaf(&self) -> Option<&str> {
        self.label_path.last().map(String::as_str)
    }

    pub fn depth(&self) -> usize {
        self.label_path.len()
    }

    /// Structured field by name; `None` for unknown field names.
    pub fn field(&self, name: &str) -> Option<&str> {
        match name {
            "bu_code" => Some(&self.bu_code),
            "ou_code" => Some(&self.ou_code),
            "system_code" => Some(&self.system_code),
            _ => None,
        }
    }
}
