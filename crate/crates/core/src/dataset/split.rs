use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProductRecord;
use crate::rng::stream_rng;

/// Fractions are quantized to parts per million before any counting.
const DENOM: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split fractions must be positive, got {0:?}")]
    NonPositive([f64; 3]),
    #[error("split fractions sum to {0}, expected 1")]
    Sum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.64, val_fraction: 0.16, test_fraction: 0.20, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), SplitError> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(SplitError::NonPositive(f));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SplitError::Sum(sum));
        }
        Ok(())
    }

    /// Parts per million, summing to exactly `DENOM` (largest remainder).
    fn parts(&self) -> [u64; 3] {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        let scaled: Vec<f64> = f.iter().map(|x| x * DENOM as f64).collect();
        let mut parts: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = scaled[a] - scaled[a].floor();
            let rb = scaled[b] - scaled[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut missing = DENOM.saturating_sub(parts.iter().sum());
        for &k in order.iter().cycle() {
            if missing == 0 {
                break;
            }
            parts[k] += 1;
            missing -= 1;
        }
        [parts[0], parts[1], parts[2]]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<ProductRecord>,
    pub val: Vec<ProductRecord>,
    pub test: Vec<ProductRecord>,
}

/// Depth-stratified, seeded three-way split. Each partition keeps input order.
///
/// Per-depth bucket sizes are rounded so that every depth and the global
/// totals both stay within one record of the exact fractions.
pub fn split(records: Vec<ProductRecord>, spec: &SplitSpec) -> Result<Splits, SplitError> {
    spec.validate()?;
    let parts = spec.parts();

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.depth()).or_default().push(i);
    }
    let mut rng = stream_rng(spec.seed, "split");
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    for g in &mut groups {
        g.shuffle(&mut rng);
    }

    let sizes: Vec<u64> = groups.iter().map(|g| g.len() as u64).collect();
    let counts = apportion(&sizes, parts);

    let mut bucket = vec![0u8; records.len()];
    for (g, members) in groups.iter().enumerate() {
        let [train, val, _] = counts[g];
        for (pos, &i) in members.iter().enumerate() {
            bucket[i] = if (pos as u64) < train {
                0
            } else if (pos as u64) < train + val {
                1
            } else {
                2
            };
        }
    }

    let mut out = Splits::default();
    for (r, b) in records.into_iter().zip(bucket) {
        match b {
            0 => out.train.push(r),
            1 => out.val.push(r),
            _ => out.test.push(r),
        }
    }
    Ok(out)
}

/// Integer counts per (group, bucket) with every cell, row total and column
/// total equal to the floor or ceiling of its exact share. Row totals are
/// exact. Solved as a bounded flow: each cell may be rounded up once, rows
/// must absorb their deficit, columns stay within their floor/ceiling.
fn apportion(sizes: &[u64], parts: [u64; 3]) -> Vec<[u64; 3]> {
    let g = sizes.len();
    let total: u64 = sizes.iter().sum();
    let mut counts: Vec<[u64; 3]> = sizes.iter().map(|&n| parts.map(|p| n * p / DENOM)).collect();

    // Nodes: 0 = source, 1..=g rows, g+1..=g+3 columns, g+4 = sink.
    let nodes = g + 5;
    let (src, sink) = (0, g + 4);
    let col = |k: usize| g + 1 + k;
    let mut cap = vec![vec![0i64; nodes]; nodes];
    let mut need = 0i64;
    for (r, &n) in sizes.iter().enumerate() {
        let deficit = n - counts[r].iter().sum::<u64>();
        cap[src][r + 1] = deficit as i64;
        need += deficit as i64;
        for k in 0..3 {
            if !(n * parts[k]).is_multiple_of(DENOM) {
                cap[r + 1][col(k)] = 1;
            }
        }
    }
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for k in 0..3 {
        let floors: u64 = counts.iter().map(|c| c[k]).sum();
        let exact_floor = total * parts[k] / DENOM;
        let exact_ceil = (total * parts[k]).div_ceil(DENOM);
        lo[k] = exact_floor as i64 - floors as i64;
        hi[k] = exact_ceil as i64 - floors as i64;
    }

    let mut flow = vec![vec![0i64; nodes]; nodes];
    let mut pushed = 0;
    for (phase, bound) in [lo, hi].into_iter().enumerate() {
        for k in 0..3 {
            cap[col(k)][sink] = bound[k].max(0);
        }
        while let Some(path) = augmenting_path(&cap, &flow, src, sink) {
            for w in path.windows(2) {
                flow[w[0]][w[1]] += 1;
                flow[w[1]][w[0]] -= 1;
            }
            pushed += 1;
        }
        if phase == 0 {
            debug_assert_eq!(pushed, lo.iter().map(|x| x.max(&0)).sum::<i64>());
        }
    }
    assert_eq!(pushed, need, "split apportionment is always feasible");

    for r in 0..g {
        for k in 0..3 {
            counts[r][k] += flow[r + 1][col(k)].max(0) as u64;
        }
    }
    counts
}

fn augmenting_path(cap: &[Vec<i64>], flow: &[Vec<i64>], src: usize, sink: usize) -> Option<Vec<usize>> {
    let n = cap.len();
    let mut prev = vec![usize::MAX; n];
    prev[src] = src;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if prev[v] == usize::MAX && cap[u][v] - flow[u][v] > 0 {
                prev[v] = u;
                if v == sink {
                    let mut path = vec![sink];
                    let mut cur = sink;
                    while cur != src {
                        cur = prev[cur];
                        path.push(cur);
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(v);
            }
        }
    }
    None
}
