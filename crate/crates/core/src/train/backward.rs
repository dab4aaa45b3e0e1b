use std::collections::BTreeMap;

use rayon::prelude::*;

use super::loss::{hierarchical_loss, level_loss, level_targets, semantic_loss, total_loss, LevelTargets};
use super::{LossWeights, TrainError};
use crate::dataset::ProductRecord;
use crate::encoder::FeatureVector;
use crate::moe::{ForwardTrace, MoeModel, Params};
use crate::semantic::{ConsistencyLabel, Verdict};
use crate::tensor::{axpy, dot, Matrix};

/// Samples per gradient shard. Fixed so the reduction order, and hence every
/// bit of the result, is independent of the worker count.
const SHARD: usize = 8;

/// A training sample with its table lookups resolved.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub features: FeatureVector,
    pub targets: LevelTargets,
    /// Consistency class; `None` behaves like U.
    pub verdict: Option<Verdict>,
}

pub fn prepare_examples(
    model: &MoeModel,
    records: &[ProductRecord],
    annotations: Option<&BTreeMap<String, ConsistencyLabel>>,
) -> Result<Vec<Example>, TrainError> {
    records
        .iter()
        .map(|r| {
            let targets = level_targets(model, &r.label_path)
                .map_err(|reason| TrainError::Target { id: r.id.clone(), reason })?;
            Ok(Example {
                id: r.id.clone(),
                features: model.encode(r),
                targets,
                verdict: annotations.and_then(|a| a.get(&r.id)).map(|l| l.verdict),
            })
        })
        .collect()
}

struct Forward {
    features: FeatureVector,
    trace: ForwardTrace,
    loss: f64,
}

fn forward(model: &MoeModel, ex: &Example, w: &LossWeights) -> Result<Forward, TrainError> {
    let features = ex.features.refreshed(&model.params.tables);
    let trace = model.forward_trace(&features)?;
    if ex.targets.indices.len() != trace.levels.len() {
        return Err(TrainError::Target {
            id: ex.id.clone(),
            reason: format!("{} targets for {} levels", ex.targets.indices.len(), trace.levels.len()),
        });
    }
    let mut losses = vec![0.0; trace.levels.len()];
    for (l, t) in ex.targets.indices.iter().enumerate() {
        if let Some(t) = *t {
            losses[l] = level_loss(&trace.levels[l].probs, t)?;
        }
    }
    let l_c = hierarchical_loss(&losses, ex.targets.leaf_level, w.omega_c)?;
    let l_s = ex.verdict.map_or(0.0, |v| semantic_loss(&trace.semantic_probs, v));
    let loss = total_loss(l_c, l_s, w.omega_s);
    if !loss.is_finite() {
        return Err(TrainError::NonFinite(ex.id.clone()));
    }
    Ok(Forward { features, trace, loss })
}

pub fn sample_loss(model: &MoeModel, ex: &Example, w: &LossWeights) -> Result<f64, TrainError> {
    Ok(forward(model, ex, w)?.loss)
}

/// Mean total loss over `batch`.
pub fn batch_loss(model: &MoeModel, batch: &[&Example], w: &LossWeights) -> Result<f64, TrainError> {
    let losses: Vec<f64> = batch.par_iter().map(|ex| sample_loss(model, ex, w)).collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
///
/// The softmax/cross-entropy gradient `p − onehot` is used even where the
/// probability floor clamps the loss.
pub fn backward(model: &MoeModel, batch: &[&Example], w: &LossWeights) -> Result<(f64, Params), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let shards: Vec<(f64, Params)> = batch
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut grad = model.params.zeros_like();
            let mut loss = 0.0;
            for ex in chunk {
                loss += accumulate(model, ex, w, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_, TrainError>>()?;
    let mut shards = shards.into_iter();
    let (mut loss, mut grad) = shards.next().expect("nonempty batch");
    for (l, g) in shards {
        loss += l;
        grad.add_scaled(1.0, &g);
    }
    let scale = 1.0 / batch.len() as f64;
    for t in grad.tensors_mut() {
        for x in t {
            *x *= scale;
        }
    }
    Ok((loss * scale, grad))
}

fn scatter_mean(table: &mut Matrix, buckets: &[usize], d: &[f64]) {
    if buckets.is_empty() {
        return;
    }
    let share = 1.0 / buckets.len() as f64;
    for &b in buckets {
        axpy(share, d, table.row_mut(b));
    }
}

/// Adds one sample's (unaveraged) gradient into `g`; returns its loss.
fn accumulate(model: &MoeModel, ex: &Example, w: &LossWeights, g: &mut Params) -> Result<f64, TrainError> {
    let Forward { features: fv, trace, loss } = forward(model, ex, w)?;
    let p = &model.params;
    let n_levels = trace.levels.len();
    let h = model.config.expert_hidden_dim;

    // Semantic head over the mean-pooled hiddens.
    let mut d_pooled = vec![0.0; h];
    let c_s = 1.0 - w.omega_s;
    if let Some(v) = ex.verdict.filter(|v| *v != Verdict::U && c_s != 0.0) {
        let mut ds = trace.semantic_probs.clone();
        ds[v.class_index()] -= 1.0;
        ds.iter_mut().for_each(|x| *x *= c_s);
        g.semantic_w.add_outer(&trace.pooled, &ds);
        axpy(1.0, &ds, &mut g.semantic_b);
        p.semantic_w.accumulate(&ds, &mut d_pooled);
    }

    let mut dx = vec![0.0; fv.dense.len()];
    for (l, tr) in trace.levels.iter().enumerate() {
        let lp = &p.levels[l];
        let lg = &mut g.levels[l];
        let mut dh = vec![0.0; h];
        axpy(1.0 / n_levels as f64, &d_pooled, &mut dh);

        if let Some(t) = ex.targets.indices[l] {
            let share = if l + 1 == ex.targets.leaf_level { 1.0 - w.omega_c } else { w.omega_c };
            let c = w.omega_s * share;
            if c != 0.0 {
                let mut dz = tr.probs.clone();
                dz[t] -= 1.0;
                dz.iter_mut().for_each(|x| *x *= c);
                lg.head_w.add_outer(&tr.hidden, &dz);
                axpy(1.0, &dz, &mut lg.head_b);
                lp.head_w.accumulate(&dz, &mut dh);
            }
        }

        // Mixture h = Σ_e g_e o_e.
        let d_gate: Vec<f64> = tr.outputs.iter().map(|o| dot(&dh, o)).collect();
        let mean = dot(&tr.gate, &d_gate);
        let d_logit: Vec<f64> = tr.gate.iter().zip(&d_gate).map(|(gw, dg)| gw * (dg - mean)).collect();
        for r in fv.routing_hot() {
            axpy(fv.routing[r], &d_logit, lg.gate_w.row_mut(r));
        }
        axpy(1.0, &d_logit, &mut lg.gate_b);

        for (e, (ep, eg)) in lp.experts.iter().zip(lg.experts.iter_mut()).enumerate() {
            let d_out: Vec<f64> = dh.iter().map(|x| tr.gate[e] * x).collect();
            let act = &tr.activations[e];
            eg.w2.add_outer(act, &d_out);
            axpy(1.0, &d_out, &mut eg.b2);
            let mut d_act = vec![0.0; h];
            ep.w2.accumulate(&d_out, &mut d_act);
            for (d, a) in d_act.iter_mut().zip(act) {
                *d *= 1.0 - a * a;
            }
            eg.w1.add_outer(&fv.dense, &d_act);
            axpy(1.0, &d_act, &mut eg.b1);
            ep.w1.accumulate(&d_act, &mut dx);
        }
    }

    // Embedding tables.
    let dt = model.encoder.text_dim;
    let dc = model.encoder.cat_dim;
    scatter_mean(&mut g.tables.title, &fv.title_buckets, &dx[..dt]);
    scatter_mean(&mut g.tables.category, &fv.category_buckets, &dx[dt..2 * dt]);
    for (f, &slot) in fv.field_slots.iter().enumerate() {
        let off = 2 * dt + f * dc;
        axpy(1.0, &dx[off..off + dc], g.tables.fields[f].row_mut(slot));
    }
    Ok(loss)
}
