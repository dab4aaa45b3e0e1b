use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::ProductRecord;
use crate::rng::stream_rng;

/// A cleansed record scored by the preliminary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record: ProductRecord,
    pub predicted_leaf: String,
    pub confidence: f64,
    pub correct: bool,
}

/// Stratum sizes of a dev sample. Strata are disjoint: an incorrect record is
/// counted as incorrect whatever its confidence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DevComposition {
    pub high_conf_correct: usize,
    pub high_conf_selected: usize,
    pub low_conf_correct: usize,
    pub incorrect: usize,
}

impl DevComposition {
    pub fn selected(&self) -> usize {
        self.high_conf_selected + self.low_conf_correct + self.incorrect
    }
}

#[derive(Debug, Clone, Default)]
pub struct DevSample {
    pub records: Vec<ProductRecord>,
    pub composition: DevComposition,
}

/// Keeps every incorrect or low-confidence record and a seeded random
/// `round(fraction * |H|)` of the high-confidence correct ones `H`. Output
/// preserves input order.
pub fn stratified_dev_sample(scored: &[ScoredRecord], threshold: f64, high_conf_fraction: f64, seed: u64) -> DevSample {
    debug_assert!(threshold > 0.0 && threshold < 1.0);
    debug_assert!(high_conf_fraction > 0.0 && high_conf_fraction <= 1.0);

    let high: Vec<usize> =
        scored.iter().enumerate().filter(|(_, s)| s.correct && s.confidence >= threshold).map(|(i, _)| i).collect();
    let take = ((high.len() as f64) * high_conf_fraction).round() as usize;
    let mut rng = stream_rng(seed, "dev-sample");
    let mut keep = vec![false; scored.len()];
    for pick in index::sample(&mut rng, high.len(), take.min(high.len())) {
        keep[high[pick]] = true;
    }

    let mut composition = DevComposition {
        high_conf_correct: high.len(),
        high_conf_selected: take.min(high.len()),
        ..DevComposition::default()
    };
    for (k, s) in keep.iter_mut().zip(scored) {
        if !s.correct {
            composition.incorrect += 1;
            *k = true;
        } else if s.confidence < threshold {
            composition.low_conf_correct += 1;
            *k = true;
        }
    }
    let records = scored.iter().zip(&keep).filter(|(_, &k)| k).map(|(s, _)| s.record.clone()).collect();
    DevSample { records, composition }
}
