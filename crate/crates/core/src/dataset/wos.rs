//! Adapter for the two-level Web of Science (WOS) layout: rows of
//! `(text, level-1 label, level-2 label)`.

use std::collections::BTreeMap;
use std::io::BufRead;

use thiserror::Error;

use super::{ProductRecord, Source};
use crate::taxonomy::{NodeSpec, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum WosError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: expected 3 tab-separated fields")]
    Row(usize),
    #[error("WOS inputs have different line counts")]
    Misaligned,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Builds the two-level taxonomy and one record per row. Level-2 codes are
/// qualified by their parent (`"<l1>/<l2>"`) since WOS reuses sub-area ids.
pub fn from_rows<I>(rows: I) -> Result<(Taxonomy, Vec<ProductRecord>), WosError>
where
    I: IntoIterator<Item = (String, String, String)>,
{
    let mut areas: BTreeMap<String, ()> = BTreeMap::new();
    let mut subareas: BTreeMap<String, String> = BTreeMap::new();
    let mut records = Vec::new();
    for (i, (text, l1, l2)) in rows.into_iter().enumerate() {
        let l1 = l1.trim().to_string();
        let sub = format!("{l1}/{}", l2.trim());
        areas.insert(l1.clone(), ());
        subareas.insert(sub.clone(), l1.clone());
        records.push(ProductRecord {
            id: format!("wos{i:06}"),
            title: text,
            category_name: String::new(),
            bu_code: "wos".into(),
            ou_code: "wos".into(),
            system_code: "wos".into(),
            cpvs: None,
            label_path: vec![l1, sub],
            source: Source::KnowledgeBase,
        });
    }
    let mut nodes: Vec<NodeSpec> = areas
        .into_keys()
        .map(|c| NodeSpec { name: c.clone(), code: c, definition: String::new(), parent: None, level: 1 })
        .collect();
    nodes.extend(subareas.into_iter().map(|(code, parent)| NodeSpec {
        name: code.clone(),
        code,
        definition: String::new(),
        parent: Some(parent),
        level: 2,
    }));
    Ok((Taxonomy::from_nodes(nodes)?, records))
}

/// Tab-separated `text \t l1 \t l2` rows.
pub fn read_tsv<R: BufRead>(reader: R) -> Result<(Taxonomy, Vec<ProductRecord>), WosError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.rsplitn(3, '\t');
        let (Some(l2), Some(l1), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(WosError::Row(i + 1));
        };
        rows.push((text.to_string(), l1.to_string(), l2.to_string()));
    }
    from_rows(rows)
}

/// The original three-file release: `X.txt`, `YL1.txt`, `YL2.txt`.
pub fn read_split_files<R: BufRead>(
    texts: R,
    level1: R,
    level2: R,
) -> Result<(Taxonomy, Vec<ProductRecord>), WosError> {
    let t: Vec<String> = texts.lines().collect::<Result<_, _>>()?;
    let a: Vec<String> = level1.lines().collect::<Result<_, _>>()?;
    let b: Vec<String> = level2.lines().collect::<Result<_, _>>()?;
    if t.len() != a.len() || a.len() != b.len() {
        return Err(WosError::Misaligned);
    }
    from_rows(t.into_iter().zip(a).zip(b).map(|((x, y), z)| (x, y, z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_builds_two_levels() {
        let input = "deep nets for vision\tCS\t3\nprotein folding\tBio\t1\ngraph cuts\tCS\t3\nsorting\tCS\t1\n";
        let (t, recs) = read_tsv(input.as_bytes()).unwrap();
        assert_eq!(t.max_depth(), 2);
        assert_eq!(t.level_codes(1), &["Bio", "CS"]);
        assert_eq!(t.level_codes(2), &["Bio/1", "CS/1", "CS/3"]);
        assert_eq!(recs.len(), 4);
        assert!(recs.iter().all(|r| t.is_valid_path(&r.label_path)));
    }

    #[test]
    fn split_files_must_align() {
        let r = read_split_files("a\nb\n".as_bytes(), "0\n".as_bytes(), "1\n2\n".as_bytes());
        assert!(matches!(r, Err(WosError::Misaligned)));
        let (_, recs) = read_split_files("a\nb\n".as_bytes(), "0\n1\n".as_bytes(), "1\n2\n".as_bytes()).unwrap();
        assert_eq!(recs[1].label_path, vec!["1", "1/2"]);
    }

    #[test]
    fn malformed_row() {
        assert!(matches!(read_tsv("only text\n".as_bytes()), Err(WosError::Row(1))));
    }
}
