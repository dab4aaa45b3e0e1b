#![allow(dead_code)]

use std::collections::BTreeMap;

use taxcode_core::dataset::{ProductRecord, Source};
use taxcode_core::encoder::EncoderConfig;
use taxcode_core::moe::{init_model, MoeConfig, MoeModel};
use taxcode_core::semantic::{ConsistencyLabel, Verdict};
use taxcode_core::taxonomy::{NodeSpec, Taxonomy};
use taxcode_core::train::{prepare_examples, Example};

pub fn node(code: &str, parent: Option<&str>, level: usize) -> NodeSpec {
    NodeSpec {
        code: code.into(),
        name: format!("name {code}"),
        definition: format!("definition of {code}"),
        parent: parent.map(Into::into),
        level,
    }
}

/// Three levels with 3 + 6 + 8 codes, so the heads have 4 + 7 + 9 = 20
/// labels including NULL.
pub fn twenty_label_taxonomy() -> Taxonomy {
    let mut nodes = Vec::new();
    for a in ["a", "b", "c"] {
        nodes.push(node(a, None, 1));
        for i in 1..=2 {
            let mid = format!("{a}{i}");
            nodes.push(node(&mid, Some(a), 2));
        }
    }
    for (mid, leaves) in [("a1", 2), ("a2", 2), ("b1", 2), ("b2", 1), ("c1", 1)] {
        for j in 1..=leaves {
            nodes.push(node(&format!("{mid}{j}"), Some(mid), 3));
        }
    }
    Taxonomy::from_nodes(nodes).expect("valid taxonomy")
}

pub fn record(id: &str, title: &str, bu: &str, path: &[&str]) -> ProductRecord {
    ProductRecord {
        id: id.into(),
        title: title.into(),
        category_name: "home goods".into(),
        bu_code: bu.into(),
        ou_code: format!("OU-{bu}"),
        system_code: "SYS".into(),
        cpvs: None,
        label_path: path.iter().map(|s| s.to_string()).collect(),
        source: Source::Synthetic,
    }
}

pub struct Tiny {
    pub taxonomy: Taxonomy,
    pub model: MoeModel,
    pub examples: Vec<Example>,
}

/// N = 3 levels, E experts, H = 4.
pub fn tiny(experts: usize, seed: u64) -> Tiny {
    let taxonomy = twenty_label_taxonomy();
    let records = vec![
        record("r0", "red kettle glass", "BU0", &["a", "a1", "a11"]),
        record("r1", "steel pan", "BU1", &["b", "b2", "b21"]),
        record("r2", "wool scarf winter", "BU2", &["c", "c2"]),
        record("r3", "kettle lid", "BU0", &["a", "a2", "a22"]),
        record("r4", "spare part", "BU9", &["b"]),
    ];
    let encoder = EncoderConfig { hash_buckets: 16, text_dim: 3, cat_dim: 2, seed: 11, ..EncoderConfig::default() }
        .with_vocabularies(&records[..4]);
    let config = MoeConfig { levels: 3, experts_per_level: experts, expert_hidden_dim: 4, ..MoeConfig::default() };
    let model = init_model(&taxonomy, &encoder, &config, seed).expect("init");
    let verdicts = [Verdict::Y, Verdict::N, Verdict::U, Verdict::Y, Verdict::N];
    let annotations: BTreeMap<String, ConsistencyLabel> = records
        .iter()
        .zip(verdicts)
        .map(|(r, v)| (r.id.clone(), ConsistencyLabel { verdict: v, rationale: String::new() }))
        .collect();
    let examples = prepare_examples(&model, &records, Some(&annotations)).expect("examples");
    Tiny { taxonomy, model, examples }
}

/// Random forest of `n` nodes named `n0..`; each non-first node is a root
/// with probability 1/4, else a child of a uniformly chosen earlier node.
pub fn random_forest<R: rand::Rng>(rng: &mut R, n: usize) -> Taxonomy {
    let mut levels: Vec<usize> = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    for i in 0..n {
        let parent = (i > 0 && !rng.gen_bool(0.25)).then(|| rng.gen_range(0..i));
        let level = parent.map_or(1, |p| levels[p] + 1);
        levels.push(level);
        nodes.push(node(&format!("n{i}"), parent.map(|p| format!("n{p}")).as_deref(), level));
    }
    Taxonomy::from_nodes(nodes).expect("valid forest")
}
