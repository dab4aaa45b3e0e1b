use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use taxcode_core::dataset::{synth_corpus, SynthConfig, SynthCorpus};
use taxcode_core::moe::MoeConfig;
use taxcode_core::semantic::{OracleJudge, OracleThresholds, Verdict};
use taxcode_core::train::pipeline::{
    contrast_if_degenerate, label_dev, ANNOTATED, CLEANSED, DEV, JUDGE, METRICS, MODEL,
};
use taxcode_core::train::{run_pipeline, LossWeights, PipelineConfig, TrainConfig};
use taxcode_core::{EncoderConfig, JudgeModel, MoeModel};

fn corpus() -> SynthCorpus {
    let config = SynthConfig {
        leaves: 12,
        samples: 600,
        max_levels: 3,
        depth_weights: [(2, 1.0), (3, 2.0)].into_iter().collect(),
        label_noise_rate: 0.1,
        ..SynthConfig::default()
    };
    let mut c = synth_corpus(&config, 9).unwrap();
    let dup = taxcode_core::ProductRecord { id: "duplicate".into(), ..c.records[0].clone() };
    c.records.push(dup);
    c
}

fn config(omega_s: f64) -> PipelineConfig {
    PipelineConfig {
        seed: 9,
        encoder: EncoderConfig { hash_buckets: 256, text_dim: 8, cat_dim: 2, ..EncoderConfig::default() },
        moe: MoeConfig { levels: 3, experts_per_level: 2, expert_hidden_dim: 8, ..MoeConfig::default() },
        train: TrainConfig {
            epochs: 4,
            learning_rate: 0.01,
            loss_weights: LossWeights { omega_s, ..LossWeights::default() },
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
    .with_global_seed()
}

fn listing(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect()
}

#[test]
fn writes_exactly_the_six_artifacts_and_is_reproducible() {
    let c = corpus();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_pipeline(c.records.clone(), &c.taxonomy, &config(0.2), a.path()).unwrap();
    run_pipeline(c.records, &c.taxonomy, &config(0.2), b.path()).unwrap();

    let want: BTreeSet<String> =
        [CLEANSED, DEV, JUDGE, ANNOTATED, MODEL, METRICS].iter().map(|s| s.to_string()).collect();
    assert_eq!(listing(a.path()), want);
    assert_eq!(out.artifacts.len(), 6);
    for name in &want {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name} differs");
    }

    let model = MoeModel::load(fs::File::open(a.path().join(MODEL)).unwrap(), Some(&c.taxonomy)).unwrap();
    assert_eq!(model, out.model);
    let judge = JudgeModel::load(fs::File::open(a.path().join(JUDGE)).unwrap()).unwrap();
    assert_eq!(judge, out.judge);
    assert_eq!(out.dev.selected(), fs::read_to_string(a.path().join(DEV)).unwrap().lines().count());
    assert!(out.rejected >= 1);
}

#[test]
fn without_semantic_loss_final_model_equals_preliminary() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(c.records, &c.taxonomy, &config(1.0), dir.path()).unwrap();
    assert_eq!(out.prelim.params, out.model.params);
    let strip =
        |l: &[taxcode_core::train::EpochLog]| l.iter().map(|e| (e.train_loss, e.val_leaf_acc)).collect::<Vec<_>>();
    assert_eq!(strip(&out.prelim_log), strip(&out.final_log));
}

#[test]
fn invalid_config_is_reported_before_any_output() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("out");
    let bad = PipelineConfig { confidence_threshold: 1.5, ..config(0.2) };
    let err = run_pipeline(c.records, &c.taxonomy, &bad, &target).unwrap_err();
    assert_eq!(err.stage, 0);
    assert!(!target.exists());
}

#[test]
fn clean_corpus_gets_contrast_pairs_for_distillation() {
    let synth = SynthConfig {
        leaves: 12,
        samples: 600,
        max_levels: 3,
        depth_weights: [(2, 1.0), (3, 2.0)].into_iter().collect(),
        ..SynthConfig::default()
    };
    let c = synth_corpus(&synth, 9).unwrap();
    let oracle = OracleJudge::new(OracleThresholds::default()).unwrap();
    let mut labeled = label_dev(&c.records[..100], &oracle, &c.taxonomy).unwrap();
    assert!(labeled.iter().all(|p| p.label.verdict != Verdict::N));
    assert_eq!(contrast_if_degenerate(&mut labeled, &oracle, &c.taxonomy, 9).unwrap(), 100);
    assert_eq!(labeled.len(), 200);
    for (own, foreign) in labeled[..100].iter().zip(&labeled[100..]) {
        assert_eq!(own.title, foreign.title);
        assert_ne!(own.code, foreign.code);
        assert!(c.taxonomy.is_leaf(&foreign.code));
    }
    assert!(labeled.iter().any(|p| p.label.verdict == Verdict::N));
    // Nothing is added once both classes are present.
    assert_eq!(contrast_if_degenerate(&mut labeled, &oracle, &c.taxonomy, 9).unwrap(), 0);

    let dir = tempfile::tempdir().unwrap();
    run_pipeline(c.records, &c.taxonomy, &config(0.2), dir.path()).unwrap();
}
