use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backward::{backward, prepare_examples, Example};
use super::optimizer::Optimizer;
use super::{TrainConfig, TrainError};
use crate::dataset::ProductRecord;
use crate::infer::{check_taxonomy, select_prediction};
use crate::moe::MoeModel;
use crate::rng::stream_rng;
use crate::semantic::ConsistencyLabel;
use crate::taxonomy::Taxonomy;

/// One line of the training log. `seconds` is wall-clock time and the only
/// field that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_leaf_acc: Option<f64>,
    pub seconds: f64,
}

fn leaf_accuracy(
    model: &MoeModel,
    val: &[(Example, String)],
    taxonomy: &Taxonomy,
    tau: f64,
) -> Result<f64, TrainError> {
    let hits: Vec<bool> = val
        .par_iter()
        .map(|(ex, truth)| {
            let fv = ex.features.refreshed(&model.params.tables);
            let (dists, _) = model.forward(&fv)?;
            let p = select_prediction(&dists, taxonomy, tau)?;
            Ok(&p.selected_leaf == truth)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Mini-batch training with a seeded shuffle per epoch ("shuffle-epoch-k").
/// Returns the parameters of the epoch with the best validation leaf
/// accuracy (earliest on ties; the last epoch when `val` is empty).
pub fn fit(
    mut model: MoeModel,
    train: &[ProductRecord],
    val: &[ProductRecord],
    taxonomy: &Taxonomy,
    annotations: Option<&BTreeMap<String, ConsistencyLabel>>,
    config: &TrainConfig,
) -> Result<(MoeModel, Vec<EpochLog>), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    check_taxonomy(&model, taxonomy)?;
    let examples = prepare_examples(&model, train, annotations)?;
    let val_examples: Vec<(Example, String)> = prepare_examples(&model, val, None)?
        .into_iter()
        .zip(val)
        .map(|(ex, r)| (ex, r.label_path.last().cloned().unwrap_or_default()))
        .collect();

    let mut optimizer = Optimizer::new(config);
    let mut best: Option<(f64, crate::moe::Params)> = None;
    let mut logs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, &format!("shuffle-epoch-{epoch}")));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = backward(&model, &batch, &config.loss_weights)?;
            total += loss * batch.len() as f64;
            optimizer.step(&mut model.params, &grad);
        }
        let train_loss = total / examples.len() as f64;
        let val_leaf_acc = if val_examples.is_empty() {
            None
        } else {
            Some(leaf_accuracy(&model, &val_examples, taxonomy, config.tau_leaf)?)
        };
        if let Some(acc) = val_leaf_acc {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.params.clone()));
            }
        }
        log::info!("epoch {epoch}: train_loss {train_loss:.6} val_leaf_acc {val_leaf_acc:?}");
        logs.push(EpochLog { epoch, train_loss, val_leaf_acc, seconds: started.elapsed().as_secs_f64() });
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_corpus, SynthConfig};
    use crate::encoder::EncoderConfig;
    use crate::moe::{init_model, MoeConfig};

    fn setup() -> (Taxonomy, Vec<ProductRecord>, MoeModel) {
        let cfg = SynthConfig {
            leaves: 8,
            samples: 120,
            depth_weights: [(2, 1.0), (3, 1.0)].into_iter().collect(),
            ..SynthConfig::default()
        };
        let c = synth_corpus(&cfg, 4).unwrap();
        let enc = EncoderConfig { hash_buckets: 64, text_dim: 8, cat_dim: 2, ..EncoderConfig::default() }
            .with_vocabularies(&c.records);
        let moe = MoeConfig {
            levels: c.taxonomy.max_depth(),
            experts_per_level: 2,
            expert_hidden_dim: 8,
            ..MoeConfig::default()
        };
        let m = init_model(&c.taxonomy, &enc, &moe, 4).unwrap();
        (c.taxonomy, c.records, m)
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let (t, recs, m) = setup();
        let cfg = TrainConfig { epochs: 1, learning_rate: 0.0, ..TrainConfig::default() };
        let (out, logs) = fit(m.clone(), &recs[..80], &recs[80..], &t, None, &cfg).unwrap();
        assert_eq!(out.params, m.params);
        assert_eq!(logs.len(), 1);
    }

    #[test]
    fn replay_is_deterministic() {
        let (t, recs, m) = setup();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.01, ..TrainConfig::default() };
        let strip =
            |l: Vec<EpochLog>| l.into_iter().map(|e| (e.epoch, e.train_loss, e.val_leaf_acc)).collect::<Vec<_>>();
        let (a, la) = fit(m.clone(), &recs[..80], &recs[80..], &t, None, &cfg).unwrap();
        let (b, lb) = fit(m, &recs[..80], &recs[80..], &t, None, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(strip(la), strip(lb));
    }

    #[test]
    fn empty_training_set() {
        let (t, recs, m) = setup();
        assert!(matches!(fit(m, &[], &recs, &t, None, &TrainConfig::default()), Err(TrainError::EmptyTrainingSet)));
    }
}
