//! Feature encoding: hashed bag-of-embeddings for free text, learned
//! embeddings plus one-hot routing blocks for structured business codes.
//!
//! Tokens hash to buckets with XXH64 (seeded by `EncoderConfig::seed`), so
//! bucket assignment is identical on every platform.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::dataset::{normalize_title, ProductRecord};
use crate::tensor::{axpy, Matrix};

pub const DEFAULT_FIELDS: [&str; 3] = ["bu_code", "ou_code", "system_code"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hash_buckets: usize,
    pub text_dim: usize,
    pub cat_dim: usize,
    pub fields: Vec<String>,
    pub seed: u64,
    /// Known values per structured field, sorted. Anything else is UNK, which
    /// occupies the slot after the last known value.
    #[serde(default)]
    pub vocabularies: Vec<Vec<String>>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hash_buckets: 2048,
            text_dim: 32,
            cat_dim: 8,
            fields: DEFAULT_FIELDS.iter().map(|s| s.to_string()).collect(),
            seed: 0x7a78_636f_6465,
            vocabularies: Vec::new(),
        }
    }
}

impl EncoderConfig {
    /// Fills `vocabularies` from the structured fields seen in `records`.
    pub fn with_vocabularies<'a, I>(mut self, records: I) -> Self
    where
        I: IntoIterator<Item = &'a ProductRecord>,
    {
        let mut sets = vec![BTreeSet::new(); self.fields.len()];
        for r in records {
            for (set, f) in sets.iter_mut().zip(&self.fields) {
                if let Some(v) = r.field(f) {
                    set.insert(v.to_string());
                }
            }
        }
        self.vocabularies = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hash_buckets == 0 || self.text_dim == 0 || self.cat_dim == 0 {
            return Err("encoder dimensions must be positive".into());
        }
        if let Some(f) = self.fields.iter().find(|f| !DEFAULT_FIELDS.contains(&f.as_str())) {
            return Err(format!("unknown structured field `{f}`"));
        }
        Ok(())
    }

    fn vocab(&self, field: usize) -> &[String] {
        self.vocabularies.get(field).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Slots in the field's one-hot block, UNK included.
    pub fn field_slots(&self, field: usize) -> usize {
        self.vocab(field).len() + 1
    }

    pub fn slot_of(&self, field: usize, value: &str) -> usize {
        let vocab = self.vocab(field);
        vocab.binary_search_by(|v| v.as_str().cmp(value)).unwrap_or(vocab.len())
    }

    pub fn dense_dim(&self) -> usize {
        2 * self.text_dim + self.fields.len() * self.cat_dim
    }

    pub fn routing_dim(&self) -> usize {
        (0..self.fields.len()).map(|f| self.field_slots(f)).sum()
    }

    pub fn bucket(&self, token: &str) -> usize {
        (xxh64(token.as_bytes(), self.seed) % self.hash_buckets as u64) as usize
    }

    pub fn buckets(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.bucket(t)).collect()
    }
}

/// Embedding tables owned by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTables {
    pub title: Matrix,
    pub category: Matrix,
    pub fields: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub dense: Vec<f64>,
    pub routing: Vec<f64>,
    /// Lookup trace for back-propagating into the tables.
    pub(crate) title_buckets: Vec<usize>,
    pub(crate) category_buckets: Vec<usize>,
    pub(crate) field_slots: Vec<usize>,
}

impl FeatureVector {
    /// Dense block recomputed from `tables`, reusing this vector's lookups.
    pub fn refreshed(&self, tables: &EncoderTables) -> FeatureVector {
        let mut dense = mean_rows(&self.title_buckets, &tables.title);
        dense.extend(mean_rows(&self.category_buckets, &tables.category));
        for (f, &slot) in self.field_slots.iter().enumerate() {
            dense.extend_from_slice(tables.fields[f].row(slot));
        }
        FeatureVector { dense, ..self.clone() }
    }

    /// Routing offsets where the one-hot entries sit.
    pub fn routing_hot(&self) -> impl Iterator<Item = usize> + '_ {
        self.routing.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i)
    }
}

/// Whitespace tokens of the normalized text.
pub fn text_tokens(text: &str) -> Vec<String> {
    normalize_title(text).split_whitespace().map(str::to_owned).collect()
}

/// Title tokens with CPV pairs folded in as `key=value` tokens.
pub fn title_tokens(record: &ProductRecord) -> Vec<String> {
    let mut tokens = text_tokens(&record.title);
    for cpv in record.cpvs.iter().flatten() {
        let (k, v) = cpv.split_once(':').unwrap_or((cpv.as_str(), ""));
        let k = normalize_title(k).replace(' ', "_");
        let v = normalize_title(v).replace(' ', "_");
        if !k.is_empty() || !v.is_empty() {
            tokens.push(format!("{k}={v}"));
        }
    }
    tokens
}

fn mean_rows(buckets: &[usize], table: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; table.cols];
    if buckets.is_empty() {
        return out;
    }
    let w = 1.0 / buckets.len() as f64;
    for &b in buckets {
        axpy(w, table.row(b), &mut out);
    }
    out
}

/// Mean of the hashed bucket rows of `text`'s tokens; zero for no tokens.
pub fn encode_text(text: &str, table: &Matrix, config: &EncoderConfig) -> Vec<f64> {
    mean_rows(&config.buckets(&text_tokens(text)), table)
}

pub fn encode(record: &ProductRecord, tables: &EncoderTables, config: &EncoderConfig) -> FeatureVector {
    let title_buckets = config.buckets(&title_tokens(record));
    let category_buckets = config.buckets(&text_tokens(&record.category_name));
    let mut dense = Vec::with_capacity(config.dense_dim());
    dense.extend(mean_rows(&title_buckets, &tables.title));
    dense.extend(mean_rows(&category_buckets, &tables.category));

    let mut routing = vec![0.0; config.routing_dim()];
    let mut field_slots = Vec::with_capacity(config.fields.len());
    let mut offset = 0;
    for (f, name) in config.fields.iter().enumerate() {
        let slot = config.slot_of(f, record.field(name).unwrap_or_default());
        dense.extend_from_slice(tables.fields[f].row(slot));
        routing[offset + slot] = 1.0;
        offset += config.field_slots(f);
        field_slots.push(slot);
    }
    FeatureVector { dense, routing, title_buckets, category_buckets, field_slots }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;

    fn record(title: &str, bu: &str) -> ProductRecord {
        ProductRecord {
            id: "1".into(),
            title: title.into(),
            category_name: "Home Appliances".into(),
            bu_code: bu.into(),
            ou_code: "OU1".into(),
            system_code: "TM_3C".into(),
            cpvs: None,
            label_path: vec![],
            source: Source::Synthetic,
        }
    }

    fn table(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: (0..rows * cols).map(|i| i as f64).collect() }
    }

    #[test]
    fn xxh64_golden_vectors() {
        // Reference values from the canonical XXH64 implementation.
        assert_eq!(xxh64(b"", 0), 0xef46db3751d8e999);
        assert_eq!(xxh64(b"fully", 42), 0xa043eb3763a7b5cf);
    }

    #[test]
    fn empty_text_is_zero() {
        let cfg = EncoderConfig { hash_buckets: 8, text_dim: 4, ..EncoderConfig::default() };
        assert_eq!(encode_text("  --  ", &table(8, 4), &cfg), vec![0.0; 4]);
    }

    #[test]
    fn single_token_is_its_row() {
        let cfg = EncoderConfig { hash_buckets: 8, text_dim: 4, ..EncoderConfig::default() };
        let t = table(8, 4);
        let k = cfg.bucket("kettle");
        assert_eq!(encode_text("Kettle", &t, &cfg), t.row(k).to_vec());
    }

    #[test]
    fn three_tokens_hand_mean() {
        let cfg = EncoderConfig { hash_buckets: 8, text_dim: 4, ..EncoderConfig::default() };
        let t = table(8, 4);
        let rows: Vec<usize> = ["red", "steel", "kettle"].iter().map(|w| cfg.bucket(w)).collect();
        let mut want = [0.0; 4];
        for c in 0..4 {
            want[c] = rows.iter().map(|&r| (r * 4 + c) as f64).sum::<f64>() / 3.0;
        }
        let got = encode_text("Red steel-kettle", &t, &cfg);
        for c in 0..4 {
            assert!((got[c] - want[c]).abs() < 1e-12);
        }
    }

    fn small_setup() -> (EncoderConfig, EncoderTables) {
        let cfg = EncoderConfig {
            hash_buckets: 16,
            text_dim: 3,
            cat_dim: 2,
            fields: vec!["bu_code".into(), "system_code".into()],
            ..EncoderConfig::default()
        }
        .with_vocabularies(&[record("x", "BU1"), record("y", "BU2")]);
        let tables = EncoderTables {
            title: table(16, 3),
            category: Matrix { rows: 16, cols: 3, data: (0..48).map(|i| -(i as f64)).collect() },
            fields: vec![table(3, 2), Matrix { rows: 2, cols: 2, data: vec![7.0, 8.0, 9.0, 10.0] }],
        };
        (cfg, tables)
    }

    #[test]
    fn unseen_code_routes_to_unk() {
        let (cfg, tables) = small_setup();
        let fv = encode(&record("mug", "BU9"), &tables, &cfg);
        // bu block: [BU1, BU2, UNK], system block: [TM_3C, UNK]
        assert_eq!(fv.routing, vec![0.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(&fv.dense[6..8], tables.fields[0].row(2));
    }

    #[test]
    fn title_only_changes_title_block() {
        let (cfg, tables) = small_setup();
        let a = encode(&record("red mug", "BU1"), &tables, &cfg);
        let b = encode(&record("blue kettle", "BU1"), &tables, &cfg);
        assert_eq!(a.routing, b.routing);
        assert_eq!(a.dense[3..], b.dense[3..]);
        assert_ne!(a.dense[..3], b.dense[..3]);
    }

    #[test]
    fn compositional_oracle() {
        let (cfg, tables) = small_setup();
        let r = record("Steel kettle 2L", "BU2");
        let fv = encode(&r, &tables, &cfg);
        let mut want = encode_text(&r.title, &tables.title, &cfg);
        want.extend(encode_text(&r.category_name, &tables.category, &cfg));
        want.extend_from_slice(tables.fields[0].row(1));
        want.extend_from_slice(tables.fields[1].row(0));
        assert_eq!(fv.dense, want);
        assert_eq!(fv.dense.len(), cfg.dense_dim());
        assert_eq!(fv.routing.len(), cfg.routing_dim());
    }

    #[test]
    fn cpvs_fold_into_title_tokens() {
        let mut r = record("Sofa", "BU1");
        r.cpvs = Some(vec!["Material:Solid Wood".into(), "legs: 4".into()]);
        assert_eq!(title_tokens(&r), vec!["sofa", "material=solid_wood", "legs=4"]);
    }
}
