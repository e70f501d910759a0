//! Comparison clusterers: Euclidean k-means, spherical k-means and the
//! unregularized vMF mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GemError, Result};
use crate::geometry::{dot, normalize, EmbeddingSet, UnitVector};
use crate::inference::{fit, GemConfig};
use crate::metrics::HardPartition;

/// Round cap shared by both k-means variants.
pub const MAX_ROUNDS: usize = 100;

/// Output of spherical k-means: unit centroids and hard labels.
#[derive(Debug, Clone)]
pub struct SphericalKmeans {
    pub centroids: Vec<UnitVector>,
    pub labels: Vec<usize>,
    pub rounds: usize,
}

fn check_k(x: &EmbeddingSet, k: usize) -> Result<()> {
    if k == 0 {
        return Err(GemError::InvalidConfig("K must be >= 1".into()));
    }
    if x.n() < k {
        return Err(GemError::TooFewPoints { n: x.n(), k });
    }
    Ok(())
}

/// Greedy k-means++ seeding for an arbitrary non-negative dissimilarity:
/// each step draws `2 + ln k` candidates by D² sampling and keeps the one
/// that lowers the total potential most.
fn plus_plus_seeds<R: Rng>(
    x: &EmbeddingSet,
    k: usize,
    rng: &mut R,
    dissim: impl Fn(&[f64], &[f64]) -> f64 + Sync,
) -> Vec<usize> {
    let n = x.n();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![rng.random_range(0..n)];
    let mut best: Vec<f64> = (0..n).map(|i| dissim(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let candidates: Vec<usize> = (0..trials)
            .map(|_| {
                if total <= 0.0 {
                    return rng.random_range(0..n);
                }
                let mut target = rng.random::<f64>() * total;
                for (i, &w) in best.iter().enumerate() {
                    if w > 0.0 && target < w {
                        return i;
                    }
                    target -= w;
                }
                n - 1
            })
            .collect();
        let (next, updated) = candidates
            .into_iter()
            .map(|c| {
                let row = x.row(c);
                let upd: Vec<f64> = best.par_iter().enumerate().map(|(i, &b)| b.min(dissim(x.row(i), row))).collect();
                (c, upd)
            })
            .min_by(|a, b| a.1.iter().sum::<f64>().total_cmp(&b.1.iter().sum::<f64>()))
            .expect("at least two trials");
        chosen.push(next);
        best = updated;
    }
    chosen
}

fn cosine_gap(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).max(0.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Indices of the `m` points with the largest `badness`, lowest index first on ties.
fn worst_points(badness: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..badness.len()).collect();
    idx.sort_by(|&a, &b| badness[b].total_cmp(&badness[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Spherical k-means: cosine assignment, renormalized resultant centroids.
///
/// Empty clusters are reseeded to the points least similar to their own
/// centroid. Stops when labels no longer change or after [`MAX_ROUNDS`].
pub fn spherical_kmeans(x: &EmbeddingSet, k: usize, seed: u64) -> Result<SphericalKmeans> {
    check_k(x, k)?;
    let d = x.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = plus_plus_seeds(x, k, &mut rng, cosine_gap);
    let mut centroids: Vec<Vec<f64>> = seeds.iter().map(|&i| x.row(i).to_vec()).collect();

    let assign = |centroids: &[Vec<f64>]| -> Vec<(usize, f64)> {
        (0..x.n())
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let mut best = (0, dot(xi, &centroids[0]));
                for (j, c) in centroids.iter().enumerate().skip(1) {
                    let s = dot(xi, c);
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                best
            })
            .collect()
    };

    let mut assigned = assign(&centroids);
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &(l, _)) in assigned.iter().enumerate() {
            counts[l] += 1;
            sums[l].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        for (j, s) in sums.iter().enumerate() {
            if counts[j] > 0 {
                if let Ok(u) = normalize(s) {
                    centroids[j] = u.into_inner();
                }
            }
        }
        if !empty.is_empty() {
            let gap: Vec<f64> = assigned.iter().map(|&(_, s)| 1.0 - s).collect();
            for (j, i) in empty.iter().zip(worst_points(&gap, empty.len())) {
                centroids[*j] = x.row(i).to_vec();
            }
        }
        let next = assign(&centroids);
        let changed = next.iter().zip(&assigned).any(|(a, b)| a.0 != b.0);
        assigned = next;
        if !changed {
            break;
        }
    }
    Ok(SphericalKmeans {
        centroids: centroids
            .into_iter()
            .map(|c| normalize(&c))
            .collect::<Result<_>>()?,
        labels: assigned.into_iter().map(|(l, _)| l).collect(),
        rounds,
    })
}

pub fn spherical_kmeans_fit(x: &EmbeddingSet, k: usize, seed: u64) -> Result<HardPartition> {
    HardPartition::new(spherical_kmeans(x, k, seed)?.labels, k)
}

/// Lloyd's algorithm on raw coordinates with k-means++ seeding.
pub fn kmeans_fit(x: &EmbeddingSet, k: usize, seed: u64) -> Result<HardPartition> {
    check_k(x, k)?;
    let d = x.d();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = plus_plus_seeds(x, k, &mut rng, sq_dist);
    let mut centroids: Vec<Vec<f64>> = seeds.iter().map(|&i| x.row(i).to_vec()).collect();

    let assign = |centroids: &[Vec<f64>]| -> Vec<(usize, f64)> {
        (0..x.n())
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let mut best = (0, sq_dist(xi, &centroids[0]));
                for (j, c) in centroids.iter().enumerate().skip(1) {
                    let s = sq_dist(xi, c);
                    if s < best.1 {
                        best = (j, s);
                    }
                }
                best
            })
            .collect()
    };

    let mut assigned = assign(&centroids);
    for _ in 0..MAX_ROUNDS {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &(l, _)) in assigned.iter().enumerate() {
            counts[l] += 1;
            sums[l].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
        }
        let empty: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !empty.is_empty() {
            let dist: Vec<f64> = assigned.iter().map(|&(_, s)| s).collect();
            for (j, i) in empty.iter().zip(worst_points(&dist, empty.len())) {
                centroids[*j] = x.row(i).to_vec();
            }
        }
        let next = assign(&centroids);
        let changed = next.iter().zip(&assigned).any(|(a, b)| a.0 != b.0);
        assigned = next;
        if !changed {
            break;
        }
    }
    HardPartition::new(assigned.into_iter().map(|(l, _)| l).collect(), k)
}

/// The vMF mixture without the balance term, hard-labelled by argmax.
pub fn vanilla_vmf_fit(x: &EmbeddingSet, cfg: &GemConfig) -> Result<HardPartition> {
    let cfg = GemConfig {
        lambda: 0.0,
        ..cfg.clone()
    };
    let res = fit(x, &cfg)?;
    HardPartition::new(res.gamma.hard_labels(), cfg.k)
}
