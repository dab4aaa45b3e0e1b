use std::collections::BTreeMap;

use taxcode_core::dataset::{split, stratified_dev_sample, synth_corpus, SplitSpec, SynthConfig, SynthCorpus};
use taxcode_core::moe::{init_model, MoeConfig};
use taxcode_core::semantic::{annotate_corpus, distill_judge, OracleJudge, OracleThresholds, Verdict};
use taxcode_core::train::pipeline::{label_dev, score_records};
use taxcode_core::train::{fit, LossWeights, TrainConfig};
use taxcode_core::EncoderConfig;

/// 50 leaves at depths 2–4, no label noise.
fn separable(samples: usize, label_noise_rate: f64, seed: u64) -> SynthCorpus {
    let config = SynthConfig {
        leaves: 50,
        samples,
        max_levels: 4,
        depth_weights: [(2, 1.0), (3, 2.0), (4, 4.0)].into_iter().collect(),
        label_noise_rate,
        ..SynthConfig::default()
    };
    synth_corpus(&config, seed).unwrap()
}

#[test]
fn loss_is_non_increasing_over_first_five_epochs() {
    for seed in 0..3 {
        let corpus = separable(1200, 0.0, seed);
        let encoder = EncoderConfig { seed, ..EncoderConfig::default() }.with_vocabularies(&corpus.records);
        let moe = MoeConfig { seed, ..MoeConfig::default() };
        let model = init_model(&corpus.taxonomy, &encoder, &moe, seed).unwrap();
        let config = TrainConfig {
            epochs: 5,
            seed,
            loss_weights: LossWeights { omega_s: 1.0, ..LossWeights::default() },
            ..TrainConfig::default()
        };
        let (_, log) = fit(model, &corpus.records, &[], &corpus.taxonomy, None, &config).unwrap();
        let losses: Vec<f64> = log.iter().map(|e| e.train_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {losses:?}");
        }
    }
}

#[test]
fn confident_correct_stratum_is_more_consistent_than_incorrect() {
    let oracle = OracleJudge::new(OracleThresholds::default()).unwrap();
    for seed in 0..3 {
        let corpus = separable(2500, 0.1, seed);
        let parts = split(corpus.records.clone(), &SplitSpec { seed, ..SplitSpec::default() }).unwrap();
        let encoder = EncoderConfig { hash_buckets: 512, text_dim: 16, cat_dim: 4, seed, ..EncoderConfig::default() }
            .with_vocabularies(&parts.train);
        let moe = MoeConfig { levels: 4, experts_per_level: 2, expert_hidden_dim: 16, seed, ..MoeConfig::default() };
        let model = init_model(&corpus.taxonomy, &encoder, &moe, seed).unwrap();
        let config = TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            seed,
            loss_weights: LossWeights { omega_s: 1.0, ..LossWeights::default() },
            ..TrainConfig::default()
        };
        let (model, _) = fit(model, &parts.train, &parts.val, &corpus.taxonomy, None, &config).unwrap();
        let scored = score_records(&model, &corpus.records, &corpus.taxonomy, 0.5).unwrap();

        let y_rate = |keep: &dyn Fn(&taxcode_core::dataset::ScoredRecord) -> bool| {
            let picked: Vec<_> = scored.iter().filter(|s| keep(s)).map(|s| s.record.clone()).collect();
            assert!(!picked.is_empty());
            let labels = label_dev(&picked, &oracle, &corpus.taxonomy).unwrap();
            labels.iter().filter(|l| l.label.verdict == Verdict::Y).count() as f64 / labels.len() as f64
        };
        let high = y_rate(&|s| s.correct && s.confidence >= 0.9);
        let wrong = y_rate(&|s| !s.correct);
        assert!(high > wrong, "seed {seed}: high-confidence Y-rate {high} vs incorrect {wrong}");

        // The dev sample keeps every incorrect record.
        let dev = stratified_dev_sample(&scored, 0.9, 0.05, seed);
        assert_eq!(dev.composition.incorrect, scored.iter().filter(|s| !s.correct).count());
    }
}

#[test]
fn distilled_judge_tracks_the_oracle() {
    let oracle = OracleJudge::new(OracleThresholds::default()).unwrap();
    for seed in 0..3 {
        let corpus = separable(3000, 0.15, seed);
        let (dev, rest) = corpus.records.split_at(1500);
        let labeled = label_dev(dev, &oracle, &corpus.taxonomy).unwrap();
        let judge = distill_judge(&labeled, &corpus.taxonomy, seed).unwrap();
        assert!(judge.holdout_agreement >= 0.95, "seed {seed}: holdout agreement {}", judge.holdout_agreement);

        let rest = &rest[..1000];
        let a = annotate_corpus(rest, &oracle, &corpus.taxonomy).unwrap();
        let b = annotate_corpus(rest, &judge, &corpus.taxonomy).unwrap();
        assert_eq!(a.len(), 1000);
        let agree = a.iter().filter(|(id, l)| b[*id].verdict == l.verdict).count();
        assert!(agree as f64 / 1000.0 >= 0.95, "seed {seed}: cross-judge agreement {agree}/1000");

        let mut by_verdict: BTreeMap<&str, usize> = BTreeMap::new();
        for l in a.values() {
            *by_verdict.entry(l.verdict.as_str()).or_default() += 1;
        }
        assert!(by_verdict.len() >= 2, "{by_verdict:?}");
        let again = distill_judge(&labeled, &corpus.taxonomy, seed).unwrap();
        assert_eq!(again, judge);
    }
}
