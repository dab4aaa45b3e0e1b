//! Synthetic taxonomy + corpus generator.
//!
//! Produces a forest whose leaves sit at configurable depths, and product
//! records whose titles are drawn from per-node pseudo-word vocabularies.
//! Leaf popularity within a depth follows a Zipf law; structured business
//! codes correlate with the level-1 subtree. Everything is a pure function of
//! `(config, seed)`.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ProductRecord, Source};
use crate::rng::stream_rng;
use crate::taxonomy::{NodeSpec, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible generator config: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Number of level-1 chapters.
    pub roots: usize,
    /// Maximum children per internal node.
    pub branching: usize,
    pub leaves: usize,
    /// Deepest level any node may occupy.
    pub max_levels: usize,
    /// Relative weight of each leaf depth, used for both leaf placement and
    /// sample allocation.
    pub depth_weights: BTreeMap<usize, f64>,
    pub samples: usize,
    /// Zipf exponent of leaf popularity within a depth.
    pub zipf_exponent: f64,
    pub vocab_per_leaf: usize,
    pub vocab_per_internal: usize,
    /// Inclusive title length range in tokens.
    pub title_len: (usize, usize),
    /// Probability that a title token is drawn from the leaf's vocabulary.
    pub leaf_token_rate: f64,
    /// Probability that a title token is drawn from an ancestor's vocabulary.
    pub ancestor_token_rate: f64,
    /// Size of the pool of shared noise tokens.
    pub noise_pool: usize,
    /// Fraction of records relabeled with a uniformly random wrong leaf.
    pub label_noise_rate: f64,
    /// Fraction of leaves whose records carry one consistently wrong
    /// intermediate node in `label_path`. Such paths are deliberately invalid.
    pub intermediate_noise_rate: f64,
    /// Fraction of records annotated only down to an internal node.
    pub partial_path_rate: f64,
    /// Probability that each structured code follows its level-1 subtree.
    pub metadata_correlation: f64,
    /// Leaves at the same rank in different chapters share title vocabulary,
    /// so only structured metadata tells the chapters apart.
    pub shared_leaf_vocab: bool,
    pub cpv_rate: f64,
    /// Pads the forest with extra leaves under existing internal nodes until
    /// it has exactly this many nodes. Padding leaves receive no samples.
    pub total_nodes: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            roots: 4,
            branching: 12,
            leaves: 50,
            max_levels: 10,
            depth_weights: [(2, 11.0), (3, 17.0), (4, 176.0), (5, 2730.0), (6, 477.0)].into_iter().collect(),
            samples: 2000,
            zipf_exponent: 1.0,
            vocab_per_leaf: 6,
            vocab_per_internal: 2,
            title_len: (4, 8),
            leaf_token_rate: 0.6,
            ancestor_token_rate: 0.2,
            noise_pool: 200,
            label_noise_rate: 0.0,
            intermediate_noise_rate: 0.0,
            partial_path_rate: 0.0,
            metadata_correlation: 0.9,
            shared_leaf_vocab: false,
            cpv_rate: 0.0,
            total_nodes: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub taxonomy: Taxonomy,
    pub records: Vec<ProductRecord>,
    /// Noise-free path of each record, aligned with `records`.
    pub truth: Vec<Vec<String>>,
    /// Number of nodes emitted by the generator.
    pub node_count: usize,
}

struct Node {
    code: String,
    level: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    leaf: bool,
    tokens: Vec<String>,
}

struct Forest {
    nodes: Vec<Node>,
    roots: Vec<usize>,
    max_roots: usize,
    branching: usize,
}

impl Forest {
    fn new_node(&mut self, parent: Option<usize>, leaf: bool) -> usize {
        let (code, level) = match parent {
            None => (format!("{:02}", self.roots.len() + 1), 1),
            Some(p) => {
                let n = &self.nodes[p];
                (format!("{}{:02}", n.code, n.children.len() + 1), n.level + 1)
            }
        };
        let id = self.nodes.len();
        self.nodes.push(Node { code, level, parent, children: Vec::new(), leaf, tokens: Vec::new() });
        match parent {
            None => self.roots.push(id),
            Some(p) => self.nodes[p].children.push(id),
        }
        id
    }

    fn slots(&self, parent: Option<usize>) -> (usize, usize) {
        match parent {
            None => (self.roots.len(), self.max_roots),
            Some(p) => (self.nodes[p].children.len(), self.branching),
        }
    }

    /// Places a new leaf at `depth` below `parent`, creating internal nodes on
    /// the way. New branches open with probability 1/(1+k) where k is the
    /// number of existing internal children.
    fn attach(&mut self, parent: Option<usize>, level: usize, depth: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let (used, cap) = self.slots(parent);
        if level == depth {
            return (used < cap).then(|| self.new_node(parent, true));
        }
        let mut internal: Vec<usize> = match parent {
            None => self.roots.clone(),
            Some(p) => self.nodes[p].children.clone(),
        };
        internal.retain(|&c| !self.nodes[c].leaf);
        internal.shuffle(rng);
        let open_first = used < cap && rng.gen_bool(1.0 / (1.0 + internal.len() as f64));
        if open_first {
            let id = self.new_node(parent, false);
            return self.attach(Some(id), level + 1, depth, rng);
        }
        for c in internal {
            if let Some(leaf) = self.attach(Some(c), level + 1, depth, rng) {
                return Some(leaf);
            }
        }
        if used < cap {
            let id = self.new_node(parent, false);
            return self.attach(Some(id), level + 1, depth, rng);
        }
        None
    }

    fn chain(&self, mut id: usize) -> Vec<usize> {
        let mut out = vec![id];
        while let Some(p) = self.nodes[id].parent {
            out.push(p);
            id = p;
        }
        out.reverse();
        out
    }
}

/// Deterministic pseudo-words: base-70 digits of `i + 70` spelled as
/// consonant-vowel syllables, so every index yields a distinct word.
fn word(i: usize) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut n = i + 70;
    let mut out = String::new();
    while n > 0 {
        let s = n % 70;
        out.push(C[s / 5] as char);
        out.push(V[s % 5] as char);
        n /= 70;
    }
    out
}

/// Largest-remainder apportionment of `total` over `weights`, optionally
/// guaranteeing at least one unit per positive weight.
fn apportion(total: usize, weights: &[f64], at_least_one: bool) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let mut counts = vec![0usize; weights.len()];
    if sum <= 0.0 || total == 0 {
        return counts;
    }
    let mut rest = total;
    if at_least_one {
        for (c, w) in counts.iter_mut().zip(weights) {
            if *w > 0.0 && rest > 0 {
                *c = 1;
                rest -= 1;
            }
        }
    }
    let exact: Vec<f64> = weights.iter().map(|w| rest as f64 * w / sum).collect();
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c += e.floor() as usize;
    }
    let assigned: usize = exact.iter().map(|e| e.floor() as usize).sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(rest - assigned) {
        counts[k] += 1;
    }
    counts
}

fn check(config: &SynthConfig) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::Infeasible(m));
    if config.roots == 0 || config.branching == 0 {
        return bad("roots and branching must be positive".into());
    }
    if config.leaves == 0 {
        return bad("at least one leaf is required".into());
    }
    let depths: Vec<usize> = config.depth_weights.iter().filter(|(_, w)| **w > 0.0).map(|(d, _)| *d).collect();
    if depths.is_empty() {
        return bad("no positive depth weight".into());
    }
    if let Some(d) = depths.iter().find(|&&d| d == 0 || d > config.max_levels) {
        return bad(format!("depth {d} outside 1..={}", config.max_levels));
    }
    if config.leaves < depths.len() {
        return bad(format!("{} leaves cannot cover {} weighted depths", config.leaves, depths.len()));
    }
    let deepest = *depths.iter().max().unwrap_or(&1);
    let capacity = (config.roots as f64) * (config.branching as f64).powi(deepest as i32 - 1);
    if (config.leaves as f64) > capacity {
        return bad(format!("{} leaves exceed branching capacity {capacity}", config.leaves));
    }
    let (lo, hi) = config.title_len;
    if lo == 0 || lo > hi {
        return bad(format!("title length range {lo}..={hi}"));
    }
    if config.vocab_per_leaf == 0 {
        return bad("vocab_per_leaf must be positive".into());
    }
    for (name, p) in [
        ("label_noise_rate", config.label_noise_rate),
        ("intermediate_noise_rate", config.intermediate_noise_rate),
        ("partial_path_rate", config.partial_path_rate),
        ("metadata_correlation", config.metadata_correlation),
        ("cpv_rate", config.cpv_rate),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("{name} = {p} outside [0, 1]"));
        }
    }
    if config.leaf_token_rate + config.ancestor_token_rate > 1.0 {
        return bad("token rates sum above 1".into());
    }
    Ok(())
}

// Relative source sizes of the four production corpora.
const SOURCE_WEIGHTS: [(Source, f64); 4] = [
    (Source::GoodsRegistry, 702_869.0),
    (Source::KnowledgeBase, 198_010.0),
    (Source::ValidationRecord, 331_195.0),
    (Source::InvoiceArchive, 7_400_210.0),
];

pub fn synth_corpus(config: &SynthConfig, seed: u64) -> Result<SynthCorpus, SynthError> {
    check(config)?;
    let mut rng = stream_rng(seed, "synth-taxonomy");

    let depth_list: Vec<usize> = config.depth_weights.keys().copied().collect();
    let weights: Vec<f64> = config.depth_weights.values().map(|w| w.max(0.0)).collect();
    let leaves_per_depth = apportion(config.leaves, &weights, true);

    let mut forest =
        Forest { nodes: Vec::new(), roots: Vec::new(), max_roots: config.roots, branching: config.branching };
    // Deep leaves first: they need the most room.
    let mut plan: Vec<usize> =
        depth_list.iter().zip(&leaves_per_depth).flat_map(|(&d, &n)| std::iter::repeat_n(d, n)).collect();
    plan.sort_by(|a, b| b.cmp(a));
    let mut leaves_at: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for depth in plan {
        let id = forest
            .attach(None, 1, depth, &mut rng)
            .ok_or_else(|| SynthError::Infeasible(format!("no room for a depth-{depth} leaf")))?;
        leaves_at.entry(depth).or_default().push(id);
    }
    if let Some(target) = config.total_nodes {
        if forest.nodes.len() > target {
            return Err(SynthError::Infeasible(format!(
                "{} nodes already placed, above total_nodes {target}",
                forest.nodes.len()
            )));
        }
        while forest.nodes.len() < target {
            let open: Vec<usize> = (0..forest.nodes.len())
                .filter(|&i| !forest.nodes[i].leaf && forest.nodes[i].children.len() < config.branching)
                .collect();
            let &parent = open
                .choose(&mut rng)
                .ok_or_else(|| SynthError::Infeasible(format!("no room to pad to {target} nodes")))?;
            forest.new_node(Some(parent), true);
        }
    }

    // Vocabularies. Internal nodes first so leaf slots are contiguous.
    let mut next_word = 0usize;
    let mut fresh = |n: usize| -> Vec<String> {
        let v = (next_word..next_word + n).map(word).collect();
        next_word += n;
        v
    };
    for id in 0..forest.nodes.len() {
        if !forest.nodes[id].leaf {
            forest.nodes[id].tokens = fresh(config.vocab_per_internal.max(2));
        }
    }
    let mut rank_in_root: Vec<usize> = vec![0; forest.nodes.len()];
    let mut per_root_count: BTreeMap<usize, usize> = BTreeMap::new();
    for id in 0..forest.nodes.len() {
        if forest.nodes[id].leaf {
            let root = forest.chain(id)[0];
            let slot = per_root_count.entry(root).or_default();
            rank_in_root[id] = *slot;
            *slot += 1;
        }
    }
    let mut shared_slots: Vec<Vec<String>> = Vec::new();
    for id in 0..forest.nodes.len() {
        if !forest.nodes[id].leaf {
            continue;
        }
        forest.nodes[id].tokens = if config.shared_leaf_vocab {
            let r = rank_in_root[id];
            while shared_slots.len() <= r {
                shared_slots.push(fresh(config.vocab_per_leaf.max(2)));
            }
            shared_slots[r].clone()
        } else {
            fresh(config.vocab_per_leaf.max(2))
        };
    }
    let noise: Vec<String> = fresh(config.noise_pool.max(1));

    let node_name = |n: &Node| format!("{} {}", n.tokens[0], n.tokens[1]);
    let mut specs = Vec::with_capacity(forest.nodes.len());
    for n in &forest.nodes {
        let parent = n.parent.map(|p| &forest.nodes[p]);
        // Roughly two thirds of the signature tokens appear in the definition.
        let shown = (n.tokens.len() * 2).div_ceil(3).max(2);
        let mut definition = format!(
            "goods classified as {}, including {}",
            node_name(n),
            n.tokens[2.min(n.tokens.len())..shown.max(2).min(n.tokens.len())].join(", ")
        );
        if let Some(p) = parent {
            definition.push_str(&format!("; a subdivision of {}", node_name(p)));
        }
        specs.push(NodeSpec {
            code: n.code.clone(),
            name: node_name(n),
            definition,
            parent: parent.map(|p| p.code.clone()),
            level: n.level,
        });
    }
    let node_count = specs.len();
    let taxonomy = Taxonomy::from_nodes(specs)?;

    // Per-leaf intermediate perturbation: (level, confuser code).
    let mut noise_rng = stream_rng(seed, "synth-intermediate-noise");
    let mut by_level: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, n) in forest.nodes.iter().enumerate() {
        by_level.entry(n.level).or_default().push(id);
    }
    let mut perturbed: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    for ids in leaves_at.values() {
        for &leaf in ids {
            let chain = forest.chain(leaf);
            if chain.len() < 2 || !noise_rng.gen_bool(config.intermediate_noise_rate) {
                continue;
            }
            let level = noise_rng.gen_range(1..chain.len());
            let others: Vec<usize> = by_level[&level].iter().copied().filter(|&c| c != chain[level - 1]).collect();
            if let Some(&c) = others.choose(&mut noise_rng) {
                perturbed.insert(leaf, (level, forest.nodes[c].code.clone()));
            }
        }
    }

    // Samples per depth, then Zipf over that depth's leaves.
    let mut rng = stream_rng(seed, "synth-records");
    let present: Vec<f64> =
        depth_list.iter().zip(&weights).map(|(d, w)| if leaves_at.contains_key(d) { *w } else { 0.0 }).collect();
    let samples_per_depth = apportion(config.samples, &present, false);
    let mut sample_leaves: Vec<usize> = Vec::with_capacity(config.samples);
    for (d, &n) in depth_list.iter().zip(&samples_per_depth) {
        let Some(ids) = leaves_at.get(d) else { continue };
        let mut ranked = ids.clone();
        ranked.shuffle(&mut rng);
        let zipf: Vec<f64> = (0..ranked.len()).map(|r| 1.0 / ((r + 1) as f64).powf(config.zipf_exponent)).collect();
        let dist = WeightedIndex::new(&zipf).expect("nonempty positive weights");
        for _ in 0..n {
            sample_leaves.push(ranked[dist.sample(&mut rng)]);
        }
    }
    sample_leaves.shuffle(&mut rng);

    let all_leaves: Vec<usize> = leaves_at.values().flatten().copied().collect();
    let source_dist = WeightedIndex::new(SOURCE_WEIGHTS.iter().map(|(_, w)| *w)).expect("weights");
    let mut records = Vec::with_capacity(sample_leaves.len());
    let mut truth = Vec::with_capacity(sample_leaves.len());
    let code_path = |ids: &[usize]| -> Vec<String> { ids.iter().map(|&i| forest.nodes[i].code.clone()).collect() };

    for (i, &leaf) in sample_leaves.iter().enumerate() {
        let chain = forest.chain(leaf);
        let root_idx = forest.roots.iter().position(|&r| r == chain[0]).unwrap_or(0);
        let title = make_title(config, &forest, &chain, &noise, &mut rng);

        let meta = |rng: &mut ChaCha8Rng, prefix: &str, spread: usize| {
            if rng.gen_bool(config.metadata_correlation) {
                format!("{prefix}{root_idx}")
            } else {
                format!("{prefix}{}", rng.gen_range(0..config.roots * spread))
            }
        };
        let bu_code = meta(&mut rng, "BU", 1);
        let ou_code = meta(&mut rng, "OU", 2);
        let system_code = meta(&mut rng, "SYS", 1);

        let category_name = if config.shared_leaf_vocab || chain.len() < 2 {
            String::new()
        } else {
            node_name(&forest.nodes[chain[1]])
        };

        let mut true_path = code_path(&chain);
        let mut label_path = true_path.clone();
        if config.label_noise_rate > 0.0 && all_leaves.len() > 1 && rng.gen_bool(config.label_noise_rate) {
            let wrong = loop {
                let c = *all_leaves.choose(&mut rng).expect("leaves");
                if c != leaf {
                    break c;
                }
            };
            label_path = code_path(&forest.chain(wrong));
        } else if let Some((level, confuser)) = perturbed.get(&leaf) {
            label_path[level - 1] = confuser.clone();
        }
        if config.partial_path_rate > 0.0 && chain.len() > 1 && rng.gen_bool(config.partial_path_rate) {
            let keep = rng.gen_range(1..chain.len());
            true_path.truncate(keep);
            label_path.truncate(keep);
        }

        let cpvs = (config.cpv_rate > 0.0 && rng.gen_bool(config.cpv_rate)).then(|| {
            let toks = &forest.nodes[leaf].tokens;
            vec![format!("material:{}", toks[rng.gen_range(0..toks.len())])]
        });

        records.push(ProductRecord {
            id: format!("s{i:06}"),
            title,
            category_name,
            bu_code,
            ou_code,
            system_code,
            cpvs,
            label_path,
            source: SOURCE_WEIGHTS[source_dist.sample(&mut rng)].0,
        });
        truth.push(true_path);
    }

    Ok(SynthCorpus { taxonomy, records, truth, node_count })
}

fn make_title(
    config: &SynthConfig,
    forest: &Forest,
    chain: &[usize],
    noise: &[String],
    rng: &mut ChaCha8Rng,
) -> String {
    let leaf = &forest.nodes[*chain.last().expect("nonempty chain")];
    let ancestors = &chain[..chain.len() - 1];
    let (lo, hi) = config.title_len;
    let len = rng.gen_range(lo..=hi);
    let leaf_weights: Vec<f64> = (0..leaf.tokens.len()).map(|r| 1.0 / (r + 1) as f64).collect();
    let leaf_dist = WeightedIndex::new(&leaf_weights).expect("leaf vocab");
    let mut words = Vec::with_capacity(len);
    for slot in 0..len {
        let u: f64 = rng.gen();
        let w = if slot == 0 || u < config.leaf_token_rate {
            &leaf.tokens[leaf_dist.sample(rng)]
        } else if u < config.leaf_token_rate + config.ancestor_token_rate && !ancestors.is_empty() {
            let a = &forest.nodes[*ancestors.choose(rng).expect("ancestor")];
            a.tokens.choose(rng).expect("ancestor vocab")
        } else {
            noise.choose(rng).expect("noise pool")
        };
        words.push(w.clone());
    }
    let mut title = words.join(" ");
    if let Some(first) = title.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    title
}
