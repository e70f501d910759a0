//! Partition comparison and balance metrics.

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

/// Hard cluster labels in `[0, K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardPartition {
    labels: Vec<usize>,
    k: usize,
}

impl HardPartition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(GemError::InvalidInput("partition needs K >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(GemError::InvalidInput(format!("label {bad} outside [0, {k})")));
        }
        Ok(HardPartition { labels, k })
    }

    /// Uses `max(label) + 1` as K.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let k = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(labels, k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Member indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }
}

/// Summary quality numbers for one partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub nmi: f64,
    pub matched_accuracy: f64,
    pub balance_l2: f64,
    pub max_share: f64,
}

/// Balance of a partition: `‖shares - u‖₂` and the largest share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseReport {
    pub balance_l2: f64,
    pub max_share: f64,
}

pub fn collapse_report(p: &HardPartition) -> CollapseReport {
    let n = p.len().max(1) as f64;
    let u = 1.0 / p.k() as f64;
    let shares: Vec<f64> = p.counts().into_iter().map(|c| c as f64 / n).collect();
    CollapseReport {
        balance_l2: shares.iter().map(|s| (s - u).powi(2)).sum::<f64>().sqrt(),
        max_share: shares.iter().cloned().fold(0.0, f64::max),
    }
}

fn check_same_len(a: &HardPartition, b: &HardPartition) -> Result<()> {
    if a.len() != b.len() {
        return Err(GemError::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn contingency(a: &HardPartition, b: &HardPartition) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; b.k()]; a.k()];
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        table[x][y] += 1;
    }
    table
}

/// Optimal one-to-one label matching.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatching {
    /// `mapping[p]` is the truth label matched to predicted label `p`, if any.
    pub mapping: Vec<Option<usize>>,
    pub matched_accuracy: f64,
}

/// Matches predicted clusters to truth clusters maximizing agreement.
pub fn hungarian_match(pred: &HardPartition, truth: &HardPartition) -> Result<LabelMatching> {
    check_same_len(pred, truth)?;
    let table = contingency(pred, truth);
    let size = pred.k().max(truth.k());
    let max = table.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match table.get(i).and_then(|r| r.get(j)) {
                    Some(&c) => max - c as i64,
                    None => max,
                })
                .collect()
        })
        .collect();
    let assignment = min_cost_assignment(&cost);
    let mut agreed = 0u64;
    let mapping = (0..pred.k())
        .map(|p| {
            let t = assignment[p];
            if t < truth.k() {
                agreed += table[p][t];
                Some(t)
            } else {
                None
            }
        })
        .collect();
    Ok(LabelMatching {
        mapping,
        matched_accuracy: if pred.is_empty() {
            1.0
        } else {
            agreed as f64 / pred.len() as f64
        },
    })
}

/// Square min-cost assignment with row/column potentials, O(n³).
/// Returns the column assigned to each row.
pub fn min_cost_assignment(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; column 0 is a virtual start node.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            col_of[row_of[j] - 1] = j - 1;
        }
    }
    col_of
}

fn entropy_of_counts(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
///
/// Defined as 0 when either side puts everything in one cluster.
pub fn nmi(a: &HardPartition, b: &HardPartition) -> Result<f64> {
    check_same_len(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let n = a.len() as f64;
    let table = contingency(a, b);
    let row: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<u64> = (0..b.k()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let ha = entropy_of_counts(row.iter().copied(), n);
    let hb = entropy_of_counts(col.iter().copied(), n);
    if ha <= 0.0 || hb <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row[i] as f64 * col[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// All four metrics of `pred` against `truth`; balance is measured on `pred`.
pub fn cluster_metrics(pred: &HardPartition, truth: &HardPartition) -> Result<ClusterMetrics> {
    let m = hungarian_match(pred, truth)?;
    let c = collapse_report(pred);
    Ok(ClusterMetrics {
        nmi: nmi(pred, truth)?,
        matched_accuracy: m.matched_accuracy,
        balance_l2: c.balance_l2,
        max_share: c.max_share,
    })
}
