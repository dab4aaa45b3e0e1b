use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{normalize_title, ProductRecord};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    EmptyTitle,
    UnknownCode,
    InvalidPath,
    Duplicate,
    ConflictingLabel,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::EmptyTitle => "empty-title",
            RejectReason::UnknownCode => "unknown-code",
            RejectReason::InvalidPath => "invalid-path",
            RejectReason::Duplicate => "duplicate",
            RejectReason::ConflictingLabel => "conflicting-label",
        }
    }
}

/// One line of the rejection report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct CleanseOutcome {
    pub kept: Vec<ProductRecord>,
    pub rejected: Vec<(ProductRecord, RejectReason)>,
}

impl CleanseOutcome {
    pub fn report(&self) -> Vec<Rejection> {
        self.rejected.iter().map(|(r, reason)| Rejection { id: r.id.clone(), reason: *reason }).collect()
    }
}

/// Stage-1 cleansing: per-record rule checks, then exact-duplicate grouping on
/// normalized titles with majority-label resolution. Kept records preserve
/// input order.
pub fn cleanse(records: Vec<ProductRecord>, taxonomy: &Taxonomy) -> CleanseOutcome {
    let mut verdicts: Vec<Option<RejectReason>> = vec![None; records.len()];
    let mut groups: HashMap<String, Vec<usize>> = HashMap::new();
    let mut group_order = Vec::new();

    for (i, r) in records.iter().enumerate() {
        let title = normalize_title(&r.title);
        verdicts[i] = if title.is_empty() {
            Some(RejectReason::EmptyTitle)
        } else if r.label_path.iter().any(|c| !taxonomy.contains(c)) {
            Some(RejectReason::UnknownCode)
        } else if !taxonomy.is_valid_path(&r.label_path) {
            Some(RejectReason::InvalidPath)
        } else {
            None
        };
        if verdicts[i].is_none() {
            let members = groups.entry(title.clone()).or_default();
            if members.is_empty() {
                group_order.push(title);
            }
            members.push(i);
        }
    }

    for title in &group_order {
        let members = &groups[title];
        // Leaf code -> member indices, in first-seen order.
        let mut by_leaf: Vec<(&str, Vec<usize>)> = Vec::new();
        for &i in members {
            let leaf = records[i].effective_leaf().unwrap_or_default();
            match by_leaf.iter_mut().find(|(c, _)| *c == leaf) {
                Some((_, v)) => v.push(i),
                None => by_leaf.push((leaf, vec![i])),
            }
        }
        let top = by_leaf.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        let winners = by_leaf.iter().filter(|(_, v)| v.len() == top).count();
        for (_, idx) in &by_leaf {
            if winners == 1 && idx.len() == top {
                for &i in &idx[1..] {
                    verdicts[i] = Some(RejectReason::Duplicate);
                }
            } else {
                for &i in idx {
                    verdicts[i] = Some(RejectReason::ConflictingLabel);
                }
            }
        }
    }

    let mut out = CleanseOutcome::default();
    for (r, v) in records.into_iter().zip(verdicts) {
        match v {
            None => out.kept.push(r),
            Some(reason) => out.rejected.push((r, reason)),
        }
    }
    out
}
