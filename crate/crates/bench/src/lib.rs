//! Shared fixtures for the benchmarks.

use taxcode_core::dataset::{synth_corpus, SynthConfig, SynthCorpus};
use taxcode_core::moe::{init_model, MoeConfig, MoeModel};
use taxcode_core::EncoderConfig;

/// A generated corpus and an untrained model sized for it.
pub fn fixture(leaves: usize, samples: usize, experts: usize) -> (SynthCorpus, MoeModel) {
    let config = SynthConfig {
        roots: leaves.div_ceil(10).max(4),
        leaves,
        samples,
        max_levels: 4,
        depth_weights: [(2, 1.0), (3, 2.0), (4, 4.0)].into_iter().collect(),
        intermediate_noise_rate: 0.3,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&config, 1).expect("corpus");
    let encoder = EncoderConfig::default().with_vocabularies(&corpus.records);
    let moe = MoeConfig { levels: 4, experts_per_level: experts, ..MoeConfig::default() };
    let model = init_model(&corpus.taxonomy, &encoder, &moe, 1).expect("model");
    (corpus, model)
}
