//! Path- and leaf-level precision, recall and F1.
//!
//! Path mode compares predicted and true node *sets*; leaf mode compares
//! effective leaves (last element of each path). Micro pools counts over
//! samples, macro averages per-category scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ProductRecord;
use crate::infer::PredictionRecord;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("empty path for sample {0}")]
    EmptyPath(String),
    #[error("prediction and truth ids differ: missing predictions {missing:?}, unknown predictions {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("duplicate id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Path,
    Leaf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub predicted_path: Vec<String>,
    pub true_path: Vec<String>,
    pub true_depth: usize,
}

impl EvalPair {
    pub fn new(predicted_path: Vec<String>, true_path: Vec<String>) -> Self {
        let true_depth = true_path.len();
        EvalPair { predicted_path, true_path, true_depth }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Prf {
    pub fn from_counts(tp: f64, pred: f64, truth: f64) -> Prf {
        let precision = ratio(tp, pred);
        let recall = ratio(tp, truth);
        Prf { precision, recall, f1: ratio(2.0 * precision * recall, precision + recall) }
    }
}

pub fn effective_leaf(path: &[String]) -> Result<&str, MetricsError> {
    path.last().map(String::as_str).ok_or_else(|| MetricsError::EmptyPath(String::new()))
}

/// `(tp, |pred|, |true|)` over node sets.
pub fn path_counts(pair: &EvalPair) -> (usize, usize, usize) {
    let pred: BTreeSet<&String> = pair.predicted_path.iter().collect();
    let truth: BTreeSet<&String> = pair.true_path.iter().collect();
    (pred.intersection(&truth).count(), pred.len(), truth.len())
}

fn check(pairs: &[EvalPair]) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.predicted_path.is_empty() || p.true_path.is_empty() {
            return Err(MetricsError::EmptyPath(format!("#{i}")));
        }
    }
    Ok(())
}

pub fn micro_f1(pairs: &[EvalPair], mode: Mode) -> Result<Prf, MetricsError> {
    check(pairs)?;
    let (mut tp, mut pred, mut truth) = (0usize, 0usize, 0usize);
    for p in pairs {
        let (t, a, b) = match mode {
            Mode::Path => path_counts(p),
            Mode::Leaf => (usize::from(p.predicted_path.last() == p.true_path.last()), 1, 1),
        };
        tp += t;
        pred += a;
        truth += b;
    }
    Ok(Prf::from_counts(tp as f64, pred as f64, truth as f64))
}

fn sample_sets(p: &EvalPair, mode: Mode) -> (BTreeSet<&str>, BTreeSet<&str>) {
    match mode {
        Mode::Path => {
            (p.predicted_path.iter().map(String::as_str).collect(), p.true_path.iter().map(String::as_str).collect())
        }
        Mode::Leaf => (
            p.predicted_path.last().map(String::as_str).into_iter().collect(),
            p.true_path.last().map(String::as_str).into_iter().collect(),
        ),
    }
}

/// Unweighted mean of per-category precision, recall and F1.
///
/// Categories are those touched by a prediction or a truth. With
/// `include_absent`, every taxonomy node (path mode) or leaf (leaf mode) is
/// also a category, scoring 0 when untouched.
pub fn macro_f1(
    pairs: &[EvalPair],
    taxonomy: &Taxonomy,
    mode: Mode,
    include_absent: bool,
) -> Result<Prf, MetricsError> {
    check(pairs)?;
    // (tp, fp, fn) per category.
    let mut tally: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    if include_absent {
        let universe: Box<dyn Iterator<Item = &str>> = match mode {
            Mode::Path => Box::new(taxonomy.nodes().map(|n| n.code.as_str())),
            Mode::Leaf => Box::new(taxonomy.leaves().map(|n| n.code.as_str())),
        };
        for c in universe {
            tally.insert(c, (0, 0, 0));
        }
    }
    for p in pairs {
        let (pred, truth) = sample_sets(p, mode);
        for c in pred.union(&truth) {
            let e = tally.entry(c).or_default();
            match (pred.contains(c), truth.contains(c)) {
                (true, true) => e.0 += 1,
                (true, false) => e.1 += 1,
                _ => e.2 += 1,
            }
        }
    }
    let n = tally.len() as f64;
    if n == 0.0 {
        return Err(MetricsError::Empty);
    }
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for &(tp, fp, fn_) in tally.values() {
        let s = Prf::from_counts(tp as f64, (tp + fp) as f64, (tp + fn_) as f64);
        sp += s.precision;
        sr += s.recall;
        sf += s.f1;
    }
    Ok(Prf { precision: sp / n, recall: sr / n, f1: sf / n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub path_macro_f1: f64,
    pub path_micro_f1: f64,
    pub leaf_macro_f1: f64,
    pub leaf_micro_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub count: usize,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub include_absent_categories: bool,
    #[serde(flatten)]
    pub scores: Scores,
    pub path_macro: Prf,
    pub path_micro: Prf,
    pub leaf_macro: Prf,
    pub leaf_micro: Prf,
    /// Keyed by true path depth.
    pub per_depth: BTreeMap<usize, DepthReport>,
    /// `(confidence, fraction of samples at or below it)`, ascending.
    pub confidence_cdf: Vec<(f64, f64)>,
}

fn scores(pairs: &[EvalPair], taxonomy: &Taxonomy, include_absent: bool) -> Result<(Scores, [Prf; 4]), MetricsError> {
    let pm = macro_f1(pairs, taxonomy, Mode::Path, include_absent)?;
    let pu = micro_f1(pairs, Mode::Path)?;
    let lm = macro_f1(pairs, taxonomy, Mode::Leaf, include_absent)?;
    let lu = micro_f1(pairs, Mode::Leaf)?;
    Ok((
        Scores { path_macro_f1: pm.f1, path_micro_f1: pu.f1, leaf_macro_f1: lm.f1, leaf_micro_f1: lu.f1 },
        [pm, pu, lm, lu],
    ))
}

pub fn confidence_cdf(confidences: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, c) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *c => last.1 = frac,
            _ => out.push((*c, frac)),
        }
    }
    out
}

/// Pairs predictions with truth records by id; truth order is kept.
pub fn pair_by_id(preds: &[PredictionRecord], truth: &[ProductRecord]) -> Result<Vec<(EvalPair, f64)>, MetricsError> {
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in preds {
        if by_id.insert(&p.id, p).is_some() {
            return Err(MetricsError::DuplicateId(p.id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(truth.len());
    for r in truth {
        if !seen.insert(r.id.as_str()) {
            return Err(MetricsError::DuplicateId(r.id.clone()));
        }
        match by_id.get(r.id.as_str()) {
            Some(p) => out.push((EvalPair::new(p.path.clone(), r.label_path.clone()), p.leaf_confidence)),
            None => missing.push(r.id.clone()),
        }
    }
    let extra: Vec<String> = by_id.keys().filter(|id| !seen.contains(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(MetricsError::IdMismatch { missing, extra });
    }
    Ok(out)
}

pub fn evaluate(
    preds: &[PredictionRecord],
    truth: &[ProductRecord],
    taxonomy: &Taxonomy,
    include_absent: bool,
) -> Result<EvalReport, MetricsError> {
    let paired = pair_by_id(preds, truth)?;
    let pairs: Vec<EvalPair> = paired.iter().map(|(p, _)| p.clone()).collect();
    let confidences: Vec<f64> = paired.iter().map(|(_, c)| *c).collect();
    evaluate_pairs(&pairs, &confidences, taxonomy, include_absent)
}

pub fn evaluate_pairs(
    pairs: &[EvalPair],
    confidences: &[f64],
    taxonomy: &Taxonomy,
    include_absent: bool,
) -> Result<EvalReport, MetricsError> {
    let (overall, [pm, pu, lm, lu]) = scores(pairs, taxonomy, include_absent)?;
    let mut buckets: BTreeMap<usize, Vec<EvalPair>> = BTreeMap::new();
    for p in pairs {
        buckets.entry(p.true_depth).or_default().push(p.clone());
    }
    let per_depth = buckets
        .into_iter()
        .map(|(d, ps)| {
            let (s, _) = scores(&ps, taxonomy, include_absent)?;
            Ok((d, DepthReport { count: ps.len(), scores: s }))
        })
        .collect::<Result<_, MetricsError>>()?;
    Ok(EvalReport {
        samples: pairs.len(),
        include_absent_categories: include_absent,
        scores: overall,
        path_macro: pm,
        path_micro: pu,
        leaf_macro: lm,
        leaf_micro: lu,
        per_depth,
        confidence_cdf: confidence_cdf(confidences),
    })
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table with Path/Leaf × Macro/Micro columns, in percent.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, label: &str, sc: &Scores, n: usize| {
            let _ = writeln!(
                s,
                "{label:<10} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {n:>8}",
                100.0 * sc.path_macro_f1,
                100.0 * sc.path_micro_f1,
                100.0 * sc.leaf_macro_f1,
                100.0 * sc.leaf_micro_f1,
            );
        };
        let _ = writeln!(s, "{:<10} {:^15} {:^15} {:>8}", "", "Path", "Leaf", "");
        let _ = writeln!(s, "{:<10} {:>7} {:>7} {:>7} {:>7} {:>8}", "", "Macro", "Micro", "Macro", "Micro", "n");
        row(&mut s, "all", &self.scores, self.samples);
        for (d, r) in &self.per_depth {
            row(&mut s, &format!("depth {d}"), &r.scores, r.count);
        }
        s
    }

    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("confidence,cumulative_fraction\n");
        for (c, f) in &self.confidence_cdf {
            let _ = writeln!(s, "{c},{f}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::NodeSpec;

    fn p(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn taxonomy() -> Taxonomy {
        let n = |c: &str, par: Option<&str>, l| NodeSpec {
            code: c.into(),
            name: c.into(),
            definition: String::new(),
            parent: par.map(Into::into),
            level: l,
        };
        Taxonomy::from_nodes(vec![
            n("A", None, 1),
            n("A.1", Some("A"), 2),
            n("A.2", Some("A"), 2),
            n("A.1.1", Some("A.1"), 3),
            n("A.1.2", Some("A.1"), 3),
        ])
        .unwrap()
    }

    #[test]
    fn counts_by_hand() {
        let pair = EvalPair::new(p(&["A", "A.1", "A.1.1"]), p(&["A", "A.1", "A.1.2"]));
        assert_eq!(path_counts(&pair), (2, 3, 3));
        let s = micro_f1(&[pair], Mode::Path).unwrap();
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let same = EvalPair::new(p(&["A", "A.1"]), p(&["A", "A.1"]));
        assert_eq!(path_counts(&same), (2, 2, 2));
        let disjoint = EvalPair::new(p(&["A"]), p(&["B"]));
        assert_eq!(path_counts(&disjoint).0, 0);
        assert_eq!(micro_f1(&[disjoint], Mode::Path).unwrap().f1, 0.0);
    }

    #[test]
    fn pooled_micro() {
        let pairs = vec![
            EvalPair::new(p(&["A", "A.1", "A.1.1"]), p(&["A", "A.1", "A.1.2"])),
            EvalPair::new(p(&["A", "A.1", "A.1.1"]), p(&["A", "A.1", "A.1.1"])),
        ];
        let s = micro_f1(&pairs, Mode::Path).unwrap();
        assert!((s.f1 - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn leaf_micro_is_accuracy() {
        let pairs = vec![
            EvalPair::new(p(&["A", "A.1"]), p(&["A", "A.1"])),
            EvalPair::new(p(&["A", "A.2"]), p(&["A", "A.2"])),
            EvalPair::new(p(&["A", "A.1", "A.1.1"]), p(&["A", "A.1", "A.1.1"])),
            EvalPair::new(p(&["A", "A.1"]), p(&["A", "A.2"])),
        ];
        let s = micro_f1(&pairs, Mode::Leaf).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.75, 0.75, 0.75));
    }

    #[test]
    fn macro_by_hand() {
        let t = taxonomy();
        let pairs = vec![EvalPair::new(p(&["A", "A.1"]), p(&["A", "A.2"]))];
        let s = macro_f1(&pairs, &t, Mode::Path, false).unwrap();
        assert!((s.f1 - 1.0 / 3.0).abs() < 1e-15);
        // All five nodes: A=1, the rest 0.
        let s = macro_f1(&pairs, &t, Mode::Path, true).unwrap();
        assert!((s.f1 - 1.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_batch_scores_one() {
        let t = taxonomy();
        let pairs = vec![
            EvalPair::new(p(&["A", "A.1", "A.1.1"]), p(&["A", "A.1", "A.1.1"])),
            EvalPair::new(p(&["A", "A.2"]), p(&["A", "A.2"])),
        ];
        for mode in [Mode::Path, Mode::Leaf] {
            assert_eq!(micro_f1(&pairs, mode).unwrap().f1, 1.0);
            assert_eq!(macro_f1(&pairs, &t, mode, false).unwrap().f1, 1.0);
        }
    }

    #[test]
    fn effective_leaf_rules() {
        assert_eq!(effective_leaf(&p(&["A", "A.1", "A.1.1"])).unwrap(), "A.1.1");
        assert_eq!(effective_leaf(&p(&["A"])).unwrap(), "A");
        // Partial truth ending at an internal node.
        assert_eq!(effective_leaf(&p(&["A", "A.1"])).unwrap(), "A.1");
        assert!(effective_leaf(&[]).is_err());
    }

    #[test]
    fn empty_input() {
        assert_eq!(micro_f1(&[], Mode::Path), Err(MetricsError::Empty));
        assert_eq!(macro_f1(&[], &taxonomy(), Mode::Leaf, false), Err(MetricsError::Empty));
    }

    #[test]
    fn cdf_collapses_ties() {
        assert_eq!(confidence_cdf(&[0.9, 0.5, 0.9, 1.0]), vec![(0.5, 0.25), (0.9, 0.75), (1.0, 1.0)]);
    }

    fn record(id: &str, path: &[&str]) -> ProductRecord {
        ProductRecord {
            id: id.into(),
            title: "t".into(),
            category_name: String::new(),
            bu_code: String::new(),
            ou_code: String::new(),
            system_code: String::new(),
            cpvs: None,
            label_path: p(path),
            source: crate::dataset::Source::Synthetic,
        }
    }

    fn pred(id: &str, path: &[&str]) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            path: p(path),
            leaf: path.last().unwrap().to_string(),
            mode: crate::infer::SelectionMode::DeepestValid,
            leaf_confidence: 0.9,
            per_level_argmax: p(path),
        }
    }

    #[test]
    fn id_mismatch_lists_both_sides() {
        let t = taxonomy();
        let err =
            evaluate(&[pred("a", &["A"]), pred("z", &["A"])], &[record("a", &["A"]), record("b", &["A"])], &t, false)
                .unwrap_err();
        assert_eq!(err, MetricsError::IdMismatch { missing: vec!["b".into()], extra: vec!["z".into()] });
    }

    #[test]
    fn evaluate_perfect_and_deterministic() {
        let t = taxonomy();
        let truth = vec![record("a", &["A", "A.1", "A.1.1"]), record("b", &["A", "A.2"])];
        let preds = vec![pred("b", &["A", "A.2"]), pred("a", &["A", "A.1", "A.1.1"])];
        let r = evaluate(&preds, &truth, &t, false).unwrap();
        assert_eq!(r.scores, Scores { path_macro_f1: 1.0, path_micro_f1: 1.0, leaf_macro_f1: 1.0, leaf_micro_f1: 1.0 });
        assert_eq!(r.per_depth.values().map(|d| d.count).sum::<usize>(), 2);
        assert_eq!(r.to_json_pretty(), evaluate(&preds, &truth, &t, false).unwrap().to_json_pretty());
        assert!(r.to_table().contains("100.00"));
        assert!(r.cdf_csv().starts_with("confidence,cumulative_fraction\n0.9,1\n"));
    }
}
