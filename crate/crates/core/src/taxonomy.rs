//! Multi-level code taxonomy: loading, validation and ancestor queries.
//!
//! The taxonomy is a forest. Level-1 nodes are the roots of the forest; the
//! single virtual root above them is implicit and never stored. Every level
//! additionally owns a reserved NULL label ([`NULL_CODE`]) which marks "the
//! path ends above this level" and always sits at the last index of the
//! level's label space.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Reserved per-level label for "no node at this level".
pub const NULL_CODE: &str = "∅";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported taxonomy version {0}")]
    Version(u32),
    #[error("duplicate code `{0}`")]
    DuplicateCode(String),
    #[error("node `{code}` references unknown parent `{parent}`")]
    DanglingParent { code: String, parent: String },
    #[error("cycle detected through `{0}`")]
    Cycle(String),
    #[error("node `{code}` has level {level}, expected {expected}")]
    LevelMismatch { code: String, level: usize, expected: usize },
    #[error("code `{0}` is reserved")]
    ReservedCode(String),
    #[error("unknown code `{0}`")]
    UnknownCode(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxNode {
    pub code: String,
    pub name: String,
    pub definition: String,
    pub parent: Option<String>,
    pub level: usize,
    pub is_leaf: bool,
}

/// On-disk node record; `is_leaf` is derived on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSpec {
    pub code: String,
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub level: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    version: u32,
    nodes: Vec<NodeSpec>,
}

/// Immutable, validated taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeMap<String, TaxNode>,
    children: HashMap<String, Vec<String>>,
    per_level: Vec<Vec<String>>,
    index: Vec<HashMap<String, usize>>,
    max_depth: usize,
}

impl Taxonomy {
    /// Validates a node list and builds the taxonomy.
    pub fn from_nodes(specs: Vec<NodeSpec>) -> Result<Self, TaxonomyError> {
        let mut by_code: BTreeMap<String, NodeSpec> = BTreeMap::new();
        for spec in specs {
            if spec.code == NULL_CODE {
                return Err(TaxonomyError::ReservedCode(spec.code));
            }
            if by_code.contains_key(&spec.code) {
                return Err(TaxonomyError::DuplicateCode(spec.code));
            }
            by_code.insert(spec.code.clone(), spec);
        }

        for spec in by_code.values() {
            if let Some(parent) = &spec.parent {
                if !by_code.contains_key(parent) {
                    return Err(TaxonomyError::DanglingParent { code: spec.code.clone(), parent: parent.clone() });
                }
            }
        }

        // Parent walks must terminate within |nodes| steps.
        for spec in by_code.values() {
            let mut seen = HashSet::new();
            let mut cursor = Some(spec.code.as_str());
            while let Some(code) = cursor {
                if !seen.insert(code) {
                    return Err(TaxonomyError::Cycle(spec.code.clone()));
                }
                cursor = by_code[code].parent.as_deref();
            }
        }

        for spec in by_code.values() {
            let expected = match &spec.parent {
                None => 1,
                Some(p) => by_code[p].level + 1,
            };
            if spec.level != expected {
                return Err(TaxonomyError::LevelMismatch { code: spec.code.clone(), level: spec.level, expected });
            }
        }

        let mut children: HashMap<String, Vec<String>> = HashMap::new();
        for spec in by_code.values() {
            if let Some(p) = &spec.parent {
                children.entry(p.clone()).or_default().push(spec.code.clone());
            }
        }
        let max_depth = by_code.values().map(|s| s.level).max().unwrap_or(0);
        let mut per_level = vec![Vec::new(); max_depth];
        // BTreeMap iteration is lexicographic, so each level list comes out sorted.
        for spec in by_code.values() {
            per_level[spec.level - 1].push(spec.code.clone());
        }
        let index =
            per_level.iter().map(|codes| codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect()).collect();
        let nodes = by_code
            .into_values()
            .map(|s| {
                let is_leaf = !children.contains_key(&s.code);
                (
                    s.code.clone(),
                    TaxNode {
                        code: s.code,
                        name: s.name,
                        definition: s.definition,
                        parent: s.parent,
                        level: s.level,
                        is_leaf,
                    },
                )
            })
            .collect();

        Ok(Taxonomy { nodes, children, per_level, index, max_depth })
    }

    /// Parses the JSON taxonomy format.
    pub fn load<R: Read>(source: R) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_reader(source)?;
        if file.version != FORMAT_VERSION {
            return Err(TaxonomyError::Version(file.version));
        }
        Self::from_nodes(file.nodes)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TaxonomyError> {
        Self::load(s.as_bytes())
    }

    /// Serializes to the JSON taxonomy format, nodes sorted by code.
    pub fn save<W: Write>(&self, sink: W) -> Result<(), TaxonomyError> {
        serde_json::to_writer_pretty(sink, &self.to_file())?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("taxonomy serializes")
    }

    fn to_file(&self) -> TaxonomyFile {
        TaxonomyFile {
            version: FORMAT_VERSION,
            nodes: self
                .nodes
                .values()
                .map(|n| NodeSpec {
                    code: n.code.clone(),
                    name: n.name.clone(),
                    definition: n.definition.clone(),
                    parent: n.parent.clone(),
                    level: n.level,
                })
                .collect(),
        }
    }

    /// SHA-256 over the canonical compact serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("taxonomy serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn node(&self, code: &str) -> Option<&TaxNode> {
        self.nodes.get(code)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.nodes.contains_key(code)
    }

    pub fn is_leaf(&self, code: &str) -> bool {
        self.nodes.get(code).is_some_and(|n| n.is_leaf)
    }

    /// All nodes in code order.
    pub fn nodes(&self) -> impl Iterator<Item = &TaxNode> {
        self.nodes.values()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TaxNode> {
        self.nodes.values().filter(|n| n.is_leaf)
    }

    pub fn children(&self, code: &str) -> &[String] {
        self.children.get(code).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Sorted codes at `level` (1-based), without the NULL label.
    /// Levels beyond `max_depth` are empty.
    pub fn level_codes(&self, level: usize) -> &[String] {
        level.checked_sub(1).and_then(|i| self.per_level.get(i)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Width of the label space at `level`, including NULL.
    pub fn level_width(&self, level: usize) -> usize {
        self.level_codes(level).len() + 1
    }

    /// Index of `code` within the label space of `level`. NULL maps to the
    /// last index.
    pub fn label_index(&self, level: usize, code: &str) -> Option<usize> {
        if code == NULL_CODE {
            return Some(self.level_codes(level).len());
        }
        level.checked_sub(1).and_then(|i| self.index.get(i)).and_then(|m| m.get(code).copied())
    }

    /// Code at `index` of the label space of `level`; the last index is NULL.
    pub fn label_code(&self, level: usize, index: usize) -> Option<&str> {
        let codes = self.level_codes(level);
        match index.cmp(&codes.len()) {
            std::cmp::Ordering::Less => Some(codes[index].as_str()),
            std::cmp::Ordering::Equal => Some(NULL_CODE),
            std::cmp::Ordering::Greater => None,
        }
    }

    /// Root-first ancestor chain ending at `code`.
    pub fn ancestors(&self, code: &str) -> Result<Vec<String>, TaxonomyError> {
        let mut node = self.nodes.get(code).ok_or_else(|| TaxonomyError::UnknownCode(code.to_string()))?;
        let mut chain = Vec::with_capacity(node.level);
        chain.push(node.code.clone());
        while let Some(parent) = &node.parent {
            node = &self.nodes[parent];
            chain.push(node.code.clone());
        }
        chain.reverse();
        Ok(chain)
    }

    /// True iff `codes` is a nonempty parent→child chain starting at level 1.
    pub fn is_valid_path<S: AsRef<str>>(&self, codes: &[S]) -> bool {
        let Some(first) = codes.first() else {
            return false;
        };
        match self.nodes.get(first.as_ref()) {
            Some(n) if n.level == 1 => {}
            _ => return false,
        }
        codes.windows(2).all(|w| self.nodes.get(w[1].as_ref()).and_then(|n| n.parent.as_deref()) == Some(w[0].as_ref()))
    }
}
