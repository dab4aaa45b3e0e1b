//! Title/code consistency judging.
//!
//! [`OracleJudge`] scores the share of distinct title tokens that occur in
//! the code's name or definition. [`JudgeModel`] is the distilled student: a
//! cumulative-logit (ordinal) classifier over a handful of overlap features,
//! ordered N < U < Y along a single score.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::{self, ContainerError, TensorEntry};
use crate::dataset::{normalize_title, tokens, ProductRecord};
use crate::rng::stream_rng;
use crate::taxonomy::{Taxonomy, TaxonomyError};

pub const JUDGE_MAGIC: [u8; 4] = *b"TXNJ";

#[derive(Debug, Error)]
pub enum SemanticError {
    #[error("unknown code {0}")]
    UnknownCode(String),
    #[error("record {0} has an empty label path")]
    EmptyPath(String),
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("degenerate label set: {0}")]
    Degenerate(String),
    #[error("invalid judge config: {0}")]
    Config(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Consistency class. The discriminant order is the semantic head's class
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Y,
    N,
    U,
}

impl Verdict {
    pub const ALL: [Verdict; 3] = [Verdict::Y, Verdict::N, Verdict::U];

    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Y => "Y",
            Verdict::N => "N",
            Verdict::U => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyLabel {
    pub verdict: Verdict,
    pub rationale: String,
}

pub trait Judge: Sync {
    fn judge(&self, title: &str, code: &str, taxonomy: &Taxonomy) -> Result<ConsistencyLabel, SemanticError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleThresholds {
    /// Overlap at or above which the verdict is Y.
    pub yes: f64,
    /// Overlap at or below which the verdict is N.
    pub no: f64,
}

impl Default for OracleThresholds {
    fn default() -> Self {
        OracleThresholds { yes: 0.5, no: 0.1 }
    }
}

impl OracleThresholds {
    pub fn validate(&self) -> Result<(), SemanticError> {
        if !(0.0..=1.0).contains(&self.no) || !(0.0..=1.0).contains(&self.yes) || self.no >= self.yes {
            return Err(SemanticError::Config(format!("need 0 <= no < yes <= 1, got no={} yes={}", self.no, self.yes)));
        }
        Ok(())
    }

    pub fn verdict(&self, s: f64) -> Verdict {
        if s >= self.yes {
            Verdict::Y
        } else if s <= self.no {
            Verdict::N
        } else {
            Verdict::U
        }
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokens(&normalize_title(text)).into_iter().collect()
}

/// Overlap ratio between the distinct title tokens and `reference`, plus the
/// matched tokens in sorted order. Zero for an empty title.
pub fn overlap(title: &BTreeSet<String>, reference: &BTreeSet<String>) -> (f64, Vec<String>) {
    if title.is_empty() {
        return (0.0, Vec::new());
    }
    let matched: Vec<String> = title.intersection(reference).cloned().collect();
    (matched.len() as f64 / title.len() as f64, matched)
}

fn node_tokens(taxonomy: &Taxonomy, code: &str) -> Result<BTreeSet<String>, SemanticError> {
    let node = taxonomy.node(code).ok_or_else(|| SemanticError::UnknownCode(code.to_string()))?;
    let mut set = token_set(&node.definition);
    set.extend(token_set(&node.name));
    Ok(set)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleJudge {
    pub thresholds: OracleThresholds,
}

impl OracleJudge {
    pub fn new(thresholds: OracleThresholds) -> Result<Self, SemanticError> {
        thresholds.validate()?;
        Ok(OracleJudge { thresholds })
    }
}

impl Judge for OracleJudge {
    fn judge(&self, title: &str, code: &str, taxonomy: &Taxonomy) -> Result<ConsistencyLabel, SemanticError> {
        let reference = node_tokens(taxonomy, code)?;
        let title = token_set(title);
        let (s, matched) = overlap(&title, &reference);
        Ok(ConsistencyLabel {
            verdict: self.thresholds.verdict(s),
            rationale: format!("overlap {s:.4} ({}/{}); matched: [{}]", matched.len(), title.len(), matched.join(", ")),
        })
    }
}

pub const JUDGE_FEATURES: [&str; 4] = ["leaf_overlap", "ancestor_overlap", "title_length", "popularity"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Share of labeled examples held out to measure agreement.
    pub holdout_fraction: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { iterations: 3000, learning_rate: 0.05, holdout_fraction: 0.2 }
    }
}

/// Distilled ordinal judge.
///
/// With score `s = w·φ(title, code)`:
/// `P(N) = σ(τ_lo − s)`, `P(U) = σ(τ_hi − s) − σ(τ_lo − s)`,
/// `P(Y) = 1 − σ(τ_hi − s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeModel {
    pub weights: [f64; 4],
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// Label frequency per code in the distillation set.
    pub popularity: BTreeMap<String, u64>,
    /// Agreement with the teacher on the held-out share.
    pub holdout_agreement: f64,
    pub holdout_size: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn popularity_feature(popularity: &BTreeMap<String, u64>, code: &str) -> f64 {
    let max = popularity.values().copied().max().unwrap_or(0);
    if max == 0 {
        return 0.0;
    }
    let c = popularity.get(code).copied().unwrap_or(0);
    (1.0 + c as f64).ln() / (1.0 + max as f64).ln()
}

/// Feature vector in [`JUDGE_FEATURES`] order.
pub fn judge_features(
    title: &str,
    code: &str,
    taxonomy: &Taxonomy,
    popularity: &BTreeMap<String, u64>,
) -> Result<[f64; 4], SemanticError> {
    let title_set = token_set(title);
    let (leaf, _) = overlap(&title_set, &node_tokens(taxonomy, code)?);
    let chain = taxonomy.ancestors(code)?;
    let mut ancestor_tokens = BTreeSet::new();
    for a in &chain[..chain.len() - 1] {
        ancestor_tokens.extend(node_tokens(taxonomy, a)?);
    }
    let (anc, _) = overlap(&title_set, &ancestor_tokens);
    Ok([leaf, anc, title_set.len() as f64 / 20.0, popularity_feature(popularity, code)])
}

impl JudgeModel {
    pub fn score(&self, features: &[f64; 4]) -> f64 {
        crate::tensor::dot(&self.weights, features)
    }

    /// Class probabilities in Y, N, U order.
    pub fn probabilities(&self, features: &[f64; 4]) -> [f64; 3] {
        let s = self.score(features);
        let lo = sigmoid(self.tau_lo - s);
        let hi = sigmoid(self.tau_hi - s);
        [1.0 - hi, lo, (hi - lo).max(0.0)]
    }

    pub fn predict(&self, features: &[f64; 4]) -> Verdict {
        let p = self.probabilities(features);
        Verdict::ALL[crate::tensor::argmax(&p)]
    }

    pub fn save<W: Write>(&self, sink: W) -> Result<(), SemanticError> {
        let meta = JudgeMeta {
            features: JUDGE_FEATURES.iter().map(|s| s.to_string()).collect(),
            popularity: self.popularity.clone(),
            holdout_size: self.holdout_size,
        };
        let thresholds = [self.tau_lo, self.tau_hi, self.holdout_agreement];
        let tensors = [
            (TensorEntry { name: "weights".into(), shape: vec![4] }, &self.weights[..]),
            (TensorEntry { name: "thresholds".into(), shape: vec![3] }, &thresholds[..]),
        ];
        container::write(sink, JUDGE_MAGIC, &meta, &tensors)?;
        Ok(())
    }

    pub fn load<R: Read>(source: R) -> Result<JudgeModel, SemanticError> {
        let (meta, manifest, values): (JudgeMeta, Vec<TensorEntry>, Vec<Vec<f64>>) =
            container::read(source, JUDGE_MAGIC)?;
        let shapes: Vec<(&str, &[usize])> = manifest.iter().map(|e| (e.name.as_str(), &e.shape[..])).collect();
        if shapes != [("weights", &[4][..]), ("thresholds", &[3][..])] || meta.features != JUDGE_FEATURES {
            return Err(ContainerError::Manifest("not a judge checkpoint layout".into()).into());
        }
        let mut weights = [0.0; 4];
        weights.copy_from_slice(&values[0]);
        Ok(JudgeModel {
            weights,
            tau_lo: values[1][0],
            tau_hi: values[1][1],
            holdout_agreement: values[1][2],
            popularity: meta.popularity,
            holdout_size: meta.holdout_size,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JudgeMeta {
    features: Vec<String>,
    popularity: BTreeMap<String, u64>,
    holdout_size: usize,
}

impl Judge for JudgeModel {
    fn judge(&self, title: &str, code: &str, taxonomy: &Taxonomy) -> Result<ConsistencyLabel, SemanticError> {
        let f = judge_features(title, code, taxonomy, &self.popularity)?;
        let p = self.probabilities(&f);
        let verdict = Verdict::ALL[crate::tensor::argmax(&p)];
        Ok(ConsistencyLabel {
            verdict,
            rationale: format!("score {:.4}; P(Y)={:.3} P(N)={:.3} P(U)={:.3}", self.score(&f), p[0], p[1], p[2]),
        })
    }
}

/// One teacher-labeled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub title: String,
    pub code: String,
    pub label: ConsistencyLabel,
}

pub fn distill_judge(labeled: &[LabeledPair], taxonomy: &Taxonomy, seed: u64) -> Result<JudgeModel, SemanticError> {
    distill_judge_with(labeled, taxonomy, seed, &DistillConfig::default())
}

/// Fits the ordinal judge by full-batch Adam on mean cross-entropy over a
/// seeded training share and measures agreement on the rest.
pub fn distill_judge_with(
    labeled: &[LabeledPair],
    taxonomy: &Taxonomy,
    seed: u64,
    config: &DistillConfig,
) -> Result<JudgeModel, SemanticError> {
    if !(0.0..1.0).contains(&config.holdout_fraction) || config.learning_rate <= 0.0 {
        return Err(SemanticError::Config("holdout in [0, 1) and positive learning rate required".into()));
    }
    for v in [Verdict::Y, Verdict::N] {
        if !labeled.iter().any(|p| p.label.verdict == v) {
            return Err(SemanticError::Degenerate(format!("no {} examples", v.as_str())));
        }
    }
    let mut popularity: BTreeMap<String, u64> = BTreeMap::new();
    for p in labeled {
        *popularity.entry(p.code.clone()).or_default() += 1;
    }
    let rows: Vec<([f64; 4], Verdict)> = labeled
        .iter()
        .map(|p| Ok((judge_features(&p.title, &p.code, taxonomy, &popularity)?, p.label.verdict)))
        .collect::<Result<_, SemanticError>>()?;

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut stream_rng(seed, "judge-holdout"));
    let n_hold = (rows.len() as f64 * config.holdout_fraction).round() as usize;
    let n_hold = n_hold.min(rows.len().saturating_sub(1));
    let (hold, fit) = order.split_at(n_hold);
    let fit_rows: Vec<_> = fit.iter().map(|&i| rows[i]).collect();

    // Parameters: w[0..4], tau_lo, log gap.
    let mut theta = [0.0, 0.0, 0.0, 0.0, -0.5, 0.0];
    let (mut m, mut v) = ([0.0; 6], [0.0; 6]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    for t in 1..=config.iterations {
        let g = ordinal_gradient(&theta, &fit_rows);
        for i in 0..6 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - f64::powi(b1, t as i32));
            let vh = v[i] / (1.0 - f64::powi(b2, t as i32));
            theta[i] -= config.learning_rate * mh / (vh.sqrt() + eps);
        }
    }
    let mut model = JudgeModel {
        weights: [theta[0], theta[1], theta[2], theta[3]],
        tau_lo: theta[4],
        tau_hi: theta[4] + theta[5].exp(),
        popularity,
        holdout_agreement: 0.0,
        holdout_size: hold.len(),
    };
    let eval: Vec<usize> = if hold.is_empty() { fit.to_vec() } else { hold.to_vec() };
    let agree = eval.iter().filter(|&&i| model.predict(&rows[i].0) == rows[i].1).count();
    model.holdout_agreement = agree as f64 / eval.len() as f64;
    log::info!(
        "distilled judge: {} fit / {} held out, agreement {:.4}",
        fit.len(),
        hold.len(),
        model.holdout_agreement
    );
    Ok(model)
}

/// Mean ordinal cross-entropy and its gradient with respect to
/// `[w0..w3, tau_lo, log_gap]`.
pub fn ordinal_loss(theta: &[f64; 6], rows: &[([f64; 4], Verdict)]) -> f64 {
    let mut total = 0.0;
    for (phi, y) in rows {
        let s: f64 = (0..4).map(|i| theta[i] * phi[i]).sum();
        let lo = theta[4];
        let hi = lo + theta[5].exp();
        let a = sigmoid(lo - s);
        let b = sigmoid(hi - s);
        let p = match y {
            Verdict::N => a,
            Verdict::U => b - a,
            Verdict::Y => 1.0 - b,
        };
        total -= p.max(1e-12).ln();
    }
    total / rows.len() as f64
}

fn ordinal_gradient(theta: &[f64; 6], rows: &[([f64; 4], Verdict)]) -> [f64; 6] {
    let mut g = [0.0; 6];
    let gap = theta[5].exp();
    for (phi, y) in rows {
        let s: f64 = (0..4).map(|i| theta[i] * phi[i]).sum();
        let lo = theta[4];
        let hi = lo + gap;
        let a = sigmoid(lo - s);
        let b = sigmoid(hi - s);
        // Partials with respect to s, tau_lo and tau_hi.
        let (ds, dlo, dhi) = match y {
            Verdict::N => (1.0 - a, -(1.0 - a), 0.0),
            Verdict::Y => (-b, 0.0, b),
            Verdict::U => {
                let p = (b - a).max(1e-12);
                let da = a * (1.0 - a);
                let db = b * (1.0 - b);
                ((db - da) / p, da / p, -db / p)
            }
        };
        for i in 0..4 {
            g[i] += ds * phi[i];
        }
        g[4] += dlo + dhi;
        g[5] += dhi * gap;
    }
    let n = rows.len() as f64;
    g.map(|x| x / n)
}

/// Judges every record on (title, effective leaf). Keyed by record id.
pub fn annotate_corpus(
    records: &[ProductRecord],
    judge: &dyn Judge,
    taxonomy: &Taxonomy,
) -> Result<BTreeMap<String, ConsistencyLabel>, SemanticError> {
    let labels: Vec<ConsistencyLabel> = records
        .par_iter()
        .map(|r| {
            let leaf = r.effective_leaf().ok_or_else(|| SemanticError::EmptyPath(r.id.clone()))?;
            judge.judge(&r.title, leaf, taxonomy)
        })
        .collect::<Result<_, _>>()?;
    let mut table = BTreeMap::new();
    for (r, l) in records.iter().zip(labels) {
        if table.insert(r.id.clone(), l).is_some() {
            return Err(SemanticError::DuplicateId(r.id.clone()));
        }
    }
    Ok(table)
}

/// One line of the annotation table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRow {
    pub id: String,
    pub verdict: Verdict,
    pub rationale: String,
}

pub fn annotation_rows(table: &BTreeMap<String, ConsistencyLabel>) -> Vec<AnnotationRow> {
    table
        .iter()
        .map(|(id, l)| AnnotationRow { id: id.clone(), verdict: l.verdict, rationale: l.rationale.clone() })
        .collect()
}

pub fn annotation_table(rows: Vec<AnnotationRow>) -> Result<BTreeMap<String, ConsistencyLabel>, SemanticError> {
    let mut table = BTreeMap::new();
    for r in rows {
        let label = ConsistencyLabel { verdict: r.verdict, rationale: r.rationale };
        if table.insert(r.id.clone(), label).is_some() {
            return Err(SemanticError::DuplicateId(r.id));
        }
    }
    Ok(table)
}
