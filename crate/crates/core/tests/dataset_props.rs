mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use taxcode_core::dataset::{
    cleanse, split, stratified_dev_sample, synth_corpus, ScoredRecord, SplitSpec, SynthConfig,
};
use taxcode_core::rng::stream_rng;

fn scored(i: usize, confidence: f64, correct: bool) -> ScoredRecord {
    ScoredRecord {
        record: common::record(&format!("s{i}"), "item", "BU", &["a"]),
        predicted_leaf: "a".into(),
        confidence,
        correct,
    }
}

struct Recount {
    high_conf_correct: Vec<String>,
    low_conf_correct: Vec<String>,
    incorrect: Vec<String>,
}

/// Filter-then-count over the raw scored list.
fn recount(input: &[ScoredRecord], threshold: f64) -> Recount {
    let ids = |keep: &dyn Fn(&ScoredRecord) -> bool| -> Vec<String> {
        input.iter().filter(|s| keep(s)).map(|s| s.record.id.clone()).collect()
    };
    Recount {
        high_conf_correct: ids(&|s| s.correct && s.confidence >= threshold),
        low_conf_correct: ids(&|s| s.correct && s.confidence < threshold),
        incorrect: ids(&|s| !s.correct),
    }
}

fn check_against_recount(input: &[ScoredRecord], fraction: f64, seed: u64) -> (usize, usize, usize) {
    let out = stratified_dev_sample(input, 0.9, fraction, seed);
    let truth = recount(input, 0.9);
    let chosen: BTreeSet<&String> = out.records.iter().map(|r| &r.id).collect();
    assert_eq!(chosen.len(), out.records.len(), "duplicates in dev sample");
    for id in truth.low_conf_correct.iter().chain(&truth.incorrect) {
        assert!(chosen.contains(id), "{id} must be kept");
    }
    let high: BTreeSet<&String> = truth.high_conf_correct.iter().collect();
    let sampled = chosen.iter().filter(|id| high.contains(*id)).count();
    assert_eq!(sampled + truth.low_conf_correct.len() + truth.incorrect.len(), chosen.len());
    assert_eq!(out.composition.high_conf_correct, truth.high_conf_correct.len());
    assert_eq!(out.composition.high_conf_selected, sampled);
    assert_eq!(out.composition.low_conf_correct, truth.low_conf_correct.len());
    assert_eq!(out.composition.incorrect, truth.incorrect.len());
    (sampled, truth.low_conf_correct.len(), truth.incorrect.len())
}

#[test]
fn dev_sample_on_large_strata() {
    // 650,713 high-confidence correct, 19,300 low-confidence correct,
    // 12,194 incorrect (half of them confident).
    let mut input = Vec::with_capacity(682_207);
    input.extend((0..650_713).map(|i| scored(i, 0.97, true)));
    input.extend((0..19_300).map(|i| scored(700_000 + i, 0.6, true)));
    input.extend((0..12_194).map(|i| scored(800_000 + i, if i % 2 == 0 { 0.95 } else { 0.3 }, false)));
    let (sampled, low, incorrect) = check_against_recount(&input, 0.05, 11);
    assert_eq!((sampled, low, incorrect), (32_536, 19_300, 12_194));
}

#[test]
fn dev_sample_matches_recount_on_random_scores() {
    for seed in 0..3 {
        let mut rng = stream_rng(seed, "scores");
        let input: Vec<ScoredRecord> = (0..10_000)
            .map(|i| {
                let confidence = if rng.gen_bool(0.8) { rng.gen_range(0.9..=1.0) } else { rng.gen_range(0.0..0.9) };
                scored(i, confidence, rng.gen_bool(0.9))
            })
            .collect();
        let (sampled, _, _) = check_against_recount(&input, 0.05, seed);
        let high = recount(&input, 0.9).high_conf_correct.len();
        assert_eq!(sampled, (high as f64 * 0.05).round() as usize);
    }
}

#[test]
fn all_incorrect_passes_through() {
    let input: Vec<ScoredRecord> = (0..50).map(|i| scored(i, 0.99, false)).collect();
    let out = stratified_dev_sample(&input, 0.9, 0.05, 0);
    let ids: Vec<&String> = out.records.iter().map(|r| &r.id).collect();
    let want: Vec<&String> = input.iter().map(|s| &s.record.id).collect();
    assert_eq!(ids, want);
}

#[test]
fn depth_histogram_follows_weights() {
    let config = SynthConfig { samples: 3411, ..SynthConfig::default() };
    let corpus = synth_corpus(&config, 5).unwrap();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &corpus.records {
        *hist.entry(r.label_path.len()).or_default() += 1;
    }
    let expected = [(2, 11.0), (3, 17.0), (4, 176.0), (5, 2730.0), (6, 477.0)];
    for (depth, count) in expected {
        let got = *hist.get(&depth).unwrap_or(&0) as f64 / 3411.0;
        assert!((got - count / 3411.0).abs() <= 0.01, "depth {depth}: {got}");
    }
    assert_eq!(hist.values().sum::<usize>(), 3411);
}

#[test]
fn split_is_depth_stratified_on_generated_corpus() {
    let config = SynthConfig { samples: 3000, ..SynthConfig::default() };
    let corpus = synth_corpus(&config, 8).unwrap();
    let spec = SplitSpec { seed: 8, ..SplitSpec::default() };
    let parts = split(corpus.records.clone(), &spec).unwrap();
    let depth_counts = |rs: &[taxcode_core::ProductRecord]| {
        let mut m: BTreeMap<usize, usize> = BTreeMap::new();
        for r in rs {
            *m.entry(r.depth()).or_default() += 1;
        }
        m
    };
    let all = depth_counts(&corpus.records);
    let fractions = [spec.train_fraction, spec.val_fraction, spec.test_fraction];
    for (part, f) in [&parts.train, &parts.val, &parts.test].into_iter().zip(fractions) {
        let got = depth_counts(part);
        for (depth, n) in &all {
            let have = *got.get(depth).unwrap_or(&0) as f64;
            assert!((have - *n as f64 * f).abs() <= 1.0, "depth {depth}: {have} vs {}", *n as f64 * f);
        }
        assert!((part.len() as f64 - 3000.0 * f).abs() <= 1.0);
    }
    let mut ids: Vec<&String> = parts.train.iter().chain(&parts.val).chain(&parts.test).map(|r| &r.id).collect();
    ids.sort();
    let mut want: Vec<&String> = corpus.records.iter().map(|r| &r.id).collect();
    want.sort();
    assert_eq!(ids, want);
    assert_eq!(split(corpus.records, &spec).unwrap(), parts);
}

#[test]
fn cleansing_is_idempotent_and_keeps_valid_paths() {
    let config = SynthConfig { samples: 2000, partial_path_rate: 0.1, ..SynthConfig::default() };
    let corpus = synth_corpus(&config, 2).unwrap();
    let first = cleanse(corpus.records, &corpus.taxonomy);
    assert!(first.kept.iter().all(|r| corpus.taxonomy.is_valid_path(&r.label_path)));
    let second = cleanse(first.kept.clone(), &corpus.taxonomy);
    assert!(second.rejected.is_empty());
    assert_eq!(second.kept, first.kept);
}
