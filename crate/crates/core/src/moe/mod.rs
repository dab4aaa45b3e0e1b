//! Hierarchical feature-gating mixture of experts.
//!
//! One module per taxonomy level. Each level's gate reads only the routing
//! one-hots and softmaxes over `E` experts; each expert maps the full dense
//! feature through affine → tanh → affine into a hidden space of width `H`;
//! the level head classifies the gate-weighted expert mixture over the
//! level's labels plus NULL. A semantic head classifies the mean of the
//! per-level hiddens into consistency classes.

mod checkpoint;

pub use checkpoint::{CheckpointError, MODEL_MAGIC};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::container::TensorEntry;
use crate::dataset::ProductRecord;
use crate::encoder::{encode, EncoderConfig, EncoderTables, FeatureVector};
use crate::rng::stream_rng;
use crate::taxonomy::{Taxonomy, NULL_CODE};
use crate::tensor::{argmax, softmax, uniform_vec, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum MoeError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {what} has {got}, model expects {want}")]
    Dimension { what: &'static str, got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoeConfig {
    pub levels: usize,
    pub experts_per_level: usize,
    pub expert_hidden_dim: usize,
    pub include_null_label: bool,
    pub semantic_classes: usize,
    pub seed: u64,
}

impl Default for MoeConfig {
    fn default() -> Self {
        MoeConfig {
            levels: 10,
            experts_per_level: 4,
            expert_hidden_dim: 32,
            include_null_label: true,
            semantic_classes: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    /// D × H
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// H × H
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    /// R × E
    pub gate_w: Matrix,
    pub gate_b: Vec<f64>,
    pub experts: Vec<Expert>,
    /// H × K
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

/// Every learnable parameter. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tables: EncoderTables,
    pub levels: Vec<LevelParams>,
    /// H × S
    pub semantic_w: Matrix,
    pub semantic_b: Vec<f64>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Name, shape and values of every tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(TensorEntry, &[f64])> {
        fn mat(name: String, m: &Matrix) -> (TensorEntry, &[f64]) {
            (TensorEntry { name, shape: vec![m.rows, m.cols] }, &m.data)
        }
        fn vec1(name: String, v: &[f64]) -> (TensorEntry, &[f64]) {
            (TensorEntry { name, shape: vec![v.len()] }, v)
        }
        let mut out =
            vec![mat("tables.title".into(), &self.tables.title), mat("tables.category".into(), &self.tables.category)];
        for (i, t) in self.tables.fields.iter().enumerate() {
            out.push(mat(format!("tables.field{i}"), t));
        }
        for (l, level) in self.levels.iter().enumerate() {
            let l = l + 1;
            out.push(mat(format!("level{l}.gate_w"), &level.gate_w));
            out.push(vec1(format!("level{l}.gate_b"), &level.gate_b));
            for (e, ex) in level.experts.iter().enumerate() {
                out.push(mat(format!("level{l}.expert{e}.w1"), &ex.w1));
                out.push(vec1(format!("level{l}.expert{e}.b1"), &ex.b1));
                out.push(mat(format!("level{l}.expert{e}.w2"), &ex.w2));
                out.push(vec1(format!("level{l}.expert{e}.b2"), &ex.b2));
            }
            out.push(mat(format!("level{l}.head_w"), &level.head_w));
            out.push(vec1(format!("level{l}.head_b"), &level.head_b));
        }
        out.push(mat("semantic_w".into(), &self.semantic_w));
        out.push(vec1("semantic_b".into(), &self.semantic_b));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(&mut self.tables.title.data);
        out.push(&mut self.tables.category.data);
        for t in &mut self.tables.fields {
            out.push(&mut t.data);
        }
        for level in &mut self.levels {
            out.push(&mut level.gate_w.data);
            out.push(&mut level.gate_b);
            for e in &mut level.experts {
                out.push(&mut e.w1.data);
                out.push(&mut e.b1);
                out.push(&mut e.w2.data);
                out.push(&mut e.b2);
            }
            out.push(&mut level.head_w.data);
            out.push(&mut level.head_b);
        }
        out.push(&mut self.semantic_w.data);
        out.push(&mut self.semantic_b);
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(e, _)| e.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Params) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::tensor::axpy(alpha, src, dst);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, d)| d.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, d)| d.iter().all(|x| x.is_finite()))
    }
}

/// Per-level output distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDistribution {
    pub level: usize,
    pub probs: Vec<f64>,
    pub argmax_index: usize,
    /// Code of the argmax label, [`NULL_CODE`] for NULL.
    pub argmax_code: String,
    pub confidence: f64,
}

/// Intermediate values of one forward pass, kept for back-propagation.
#[derive(Debug, Clone)]
pub struct LevelTrace {
    pub gate: Vec<f64>,
    /// tanh activations per expert.
    pub activations: Vec<Vec<f64>>,
    /// Expert outputs.
    pub outputs: Vec<Vec<f64>>,
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub levels: Vec<LevelTrace>,
    pub pooled: Vec<f64>,
    pub semantic_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel {
    pub encoder: EncoderConfig,
    pub config: MoeConfig,
    pub taxonomy_hash: String,
    /// Label codes per level, NULL excluded (NULL is the extra last slot when
    /// `include_null_label`).
    pub level_codes: Vec<Vec<String>>,
    pub params: Params,
}

impl MoeModel {
    pub fn head_width(&self, level: usize) -> usize {
        self.level_codes[level - 1].len() + usize::from(self.config.include_null_label)
    }

    /// Code for `index` at `level`, [`NULL_CODE`] for the NULL slot.
    pub fn label_code(&self, level: usize, index: usize) -> &str {
        self.level_codes[level - 1].get(index).map(String::as_str).unwrap_or(NULL_CODE)
    }

    pub fn label_index(&self, level: usize, code: &str) -> Option<usize> {
        let codes = &self.level_codes[level - 1];
        if code == NULL_CODE {
            return self.config.include_null_label.then_some(codes.len());
        }
        codes.binary_search_by(|c| c.as_str().cmp(code)).ok()
    }

    pub fn encode(&self, record: &ProductRecord) -> FeatureVector {
        encode(record, &self.params.tables, &self.encoder)
    }

    /// Softmax gate weights of `level` (1-based) for a routing vector.
    pub fn gate_forward(&self, routing: &[f64], level: usize) -> Vec<f64> {
        let p = &self.params.levels[level - 1];
        let mut logits = p.gate_b.clone();
        p.gate_w.accumulate_transposed(routing, &mut logits);
        softmax(&logits)
    }

    fn check_dims(&self, fv: &FeatureVector) -> Result<(), MoeError> {
        let want = self.encoder.dense_dim();
        if fv.dense.len() != want {
            return Err(MoeError::Dimension { what: "dense feature", got: fv.dense.len(), want });
        }
        let want = self.encoder.routing_dim();
        if fv.routing.len() != want {
            return Err(MoeError::Dimension { what: "routing vector", got: fv.routing.len(), want });
        }
        Ok(())
    }

    pub fn forward_trace(&self, fv: &FeatureVector) -> Result<ForwardTrace, MoeError> {
        self.check_dims(fv)?;
        let h = self.config.expert_hidden_dim;
        let mut levels = Vec::with_capacity(self.params.levels.len());
        let mut pooled = vec![0.0; h];
        for (l, p) in self.params.levels.iter().enumerate() {
            let gate = self.gate_forward(&fv.routing, l + 1);
            let mut activations = Vec::with_capacity(p.experts.len());
            let mut outputs = Vec::with_capacity(p.experts.len());
            let mut hidden = vec![0.0; h];
            for (e, ex) in p.experts.iter().enumerate() {
                let mut a = ex.b1.clone();
                ex.w1.accumulate_transposed(&fv.dense, &mut a);
                for v in &mut a {
                    *v = v.tanh();
                }
                let mut o = ex.b2.clone();
                ex.w2.accumulate_transposed(&a, &mut o);
                crate::tensor::axpy(gate[e], &o, &mut hidden);
                activations.push(a);
                outputs.push(o);
            }
            let mut logits = p.head_b.clone();
            p.head_w.accumulate_transposed(&hidden, &mut logits);
            let probs = softmax(&logits);
            crate::tensor::axpy(1.0 / self.params.levels.len() as f64, &hidden, &mut pooled);
            levels.push(LevelTrace { gate, activations, outputs, hidden, probs });
        }
        let mut logits = self.params.semantic_b.clone();
        self.params.semantic_w.accumulate_transposed(&pooled, &mut logits);
        let semantic_probs = softmax(&logits);
        Ok(ForwardTrace { levels, pooled, semantic_probs })
    }

    /// Per-level distributions and the semantic class distribution.
    pub fn forward(&self, fv: &FeatureVector) -> Result<(Vec<LevelDistribution>, Vec<f64>), MoeError> {
        let trace = self.forward_trace(fv)?;
        let dists = trace.levels.into_iter().enumerate().map(|(l, t)| self.distribution(l + 1, t.probs)).collect();
        Ok((dists, trace.semantic_probs))
    }

    pub fn distribution(&self, level: usize, probs: Vec<f64>) -> LevelDistribution {
        let idx = argmax(&probs);
        LevelDistribution {
            level,
            argmax_index: idx,
            argmax_code: self.label_code(level, idx).to_string(),
            confidence: probs[idx],
            probs,
        }
    }
}

/// Fresh model with U(-1/√fan_in, 1/√fan_in) parameters drawn from the
/// "init" stream of `seed`. Embedding rows use fan-in 1.
pub fn init_model(
    taxonomy: &Taxonomy,
    encoder: &EncoderConfig,
    config: &MoeConfig,
    seed: u64,
) -> Result<MoeModel, MoeError> {
    encoder.validate().map_err(MoeError::Config)?;
    if config.levels == 0 || config.experts_per_level == 0 || config.expert_hidden_dim == 0 {
        return Err(MoeError::Config("levels, experts and hidden width must be positive".into()));
    }
    if config.semantic_classes == 0 {
        return Err(MoeError::Config("semantic head needs at least one class".into()));
    }
    if config.levels < taxonomy.max_depth() {
        return Err(MoeError::Config(format!(
            "{} levels cannot cover a taxonomy of depth {}",
            config.levels,
            taxonomy.max_depth()
        )));
    }
    let level_codes: Vec<Vec<String>> = (1..=config.levels).map(|l| taxonomy.level_codes(l).to_vec()).collect();
    if !config.include_null_label {
        if let Some(l) = level_codes.iter().position(Vec::is_empty) {
            return Err(MoeError::Config(format!("level {} has no labels and NULL is disabled", l + 1)));
        }
    }

    let mut rng = stream_rng(seed, "init");
    let d = encoder.dense_dim();
    let r = encoder.routing_dim();
    let (e, h) = (config.experts_per_level, config.expert_hidden_dim);
    let tables = EncoderTables {
        title: Matrix::uniform(encoder.hash_buckets, encoder.text_dim, 1, &mut rng),
        category: Matrix::uniform(encoder.hash_buckets, encoder.text_dim, 1, &mut rng),
        fields: (0..encoder.fields.len())
            .map(|f| Matrix::uniform(encoder.field_slots(f), encoder.cat_dim, 1, &mut rng))
            .collect(),
    };
    let levels = level_codes
        .iter()
        .map(|codes| {
            let k = codes.len() + usize::from(config.include_null_label);
            level_params(r, d, e, h, k, &mut rng)
        })
        .collect();
    let params = Params {
        tables,
        levels,
        semantic_w: Matrix::uniform(h, config.semantic_classes, h, &mut rng),
        semantic_b: uniform_vec(config.semantic_classes, h, &mut rng),
    };
    Ok(MoeModel {
        encoder: encoder.clone(),
        config: config.clone(),
        taxonomy_hash: taxonomy.content_hash(),
        level_codes,
        params,
    })
}

fn level_params<R: Rng>(r: usize, d: usize, e: usize, h: usize, k: usize, rng: &mut R) -> LevelParams {
    LevelParams {
        gate_w: Matrix::uniform(r, e, r, rng),
        gate_b: uniform_vec(e, r, rng),
        experts: (0..e)
            .map(|_| Expert {
                w1: Matrix::uniform(d, h, d, rng),
                b1: uniform_vec(h, d, rng),
                w2: Matrix::uniform(h, h, h, rng),
                b2: uniform_vec(h, h, rng),
            })
            .collect(),
        head_w: Matrix::uniform(h, k, h, rng),
        head_b: uniform_vec(k, h, rng),
    }
}
