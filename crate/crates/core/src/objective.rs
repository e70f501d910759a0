//! The clustering objective: expected complete-data log-likelihood under a
//! uniform generative prior, per-sample assignment entropy, and a quadratic
//! penalty pulling the empirical cluster mass toward uniform.
//!
//! All likelihood terms are evaluated in the log domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::geometry::{dot, EmbeddingSet, VmfParams};

const SIMPLEX_TOL: f64 = 1e-9;

/// Row-stochastic N×K soft-assignment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    /// Every row equal to `1/K`.
    pub fn uniform(n: usize, k: usize) -> Self {
        Responsibilities {
            n,
            k,
            data: vec![1.0 / k as f64; n * k],
        }
    }

    pub fn from_flat(n: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(GemError::InvalidInput("responsibilities must be non-empty".into()));
        }
        if data.len() != n * k {
            return Err(GemError::SizeMismatch {
                left: data.len(),
                right: n * k,
            });
        }
        for (i, row) in data.chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&g| !(g >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(GemError::InvalidInput(format!(
                    "row {i} is not on the probability simplex (sum {sum})"
                )));
            }
        }
        Ok(Responsibilities { n, k, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let k = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.as_ref().len() != k {
                return Err(GemError::DimensionMismatch {
                    expected: k,
                    got: r.as_ref().len(),
                });
            }
            data.extend_from_slice(r.as_ref());
        }
        Self::from_flat(rows.len(), k, data)
    }

    /// One-hot rows from hard labels.
    pub fn one_hot(labels: &[usize], k: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(GemError::InvalidInput(format!("label {l} >= K={k}")));
            }
            data[i * k + l] = 1.0;
        }
        Self::from_flat(labels.len(), k, data)
    }

    pub(crate) fn from_flat_unchecked(n: usize, k: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * k);
        Responsibilities { n, k, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.k)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// `argmax_k γ_ik` per row, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.rows().map(argmax).collect()
    }

    /// Column sums `Σ_i γ_ik`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.k];
        for row in self.rows() {
            sums.iter_mut().zip(row).for_each(|(s, g)| *s += g);
        }
        sums
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Empirical (soft) cluster mass `π_k = (1/N) Σ_i γ_ik`.
#[derive(Debug, Clone, PartialEq)]
pub struct MassVector(pub Vec<f64>);

impl MassVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `‖π - u‖₂` with `u` the uniform vector.
    pub fn distance_to_uniform(&self) -> f64 {
        let u = 1.0 / self.0.len() as f64;
        self.0.iter().map(|p| (p - u).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn empirical_mass(g: &Responsibilities) -> MassVector {
    let n = g.n() as f64;
    MassVector(g.column_sums().into_iter().map(|s| s / n).collect())
}

/// `R(π) = -(λ/2) ‖π - u‖²`.
pub fn balance_regularizer(pi: &[f64], lambda: f64) -> f64 {
    let u = 1.0 / pi.len() as f64;
    -0.5 * lambda * pi.iter().map(|p| (p - u).powi(2)).sum::<f64>()
}

/// `∇R(π) = -λ (π - u)`.
pub fn balance_gradient(pi: &[f64], lambda: f64) -> Vec<f64> {
    let u = 1.0 / pi.len() as f64;
    pi.iter().map(|p| -lambda * (p - u)).collect()
}

/// Shannon entropy of a simplex row with `0 log 0 = 0`.
pub fn row_entropy(row: &[f64]) -> f64 {
    -row.iter().filter(|&&g| g > 0.0).map(|g| g * g.ln()).sum::<f64>()
}

/// `log Σ exp(v_k)`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// K mean directions and concentrations with a fixed uniform prior `α_k = 1/K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub components: Vec<VmfParams>,
}

impl ModelParams {
    pub fn new(components: Vec<VmfParams>) -> Result<Self> {
        let d = components
            .first()
            .ok_or_else(|| GemError::InvalidInput("model needs at least one component".into()))?
            .dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(GemError::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        Ok(ModelParams { components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.components[0].dim()
    }

    /// The fixed generative prior weight, identical for every component.
    pub fn alpha(&self) -> f64 {
        1.0 / self.k() as f64
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.kappa).collect()
    }

    pub(crate) fn check_dim(&self, d: usize) -> Result<()> {
        if self.d() != d {
            return Err(GemError::DimensionMismatch {
                expected: self.d(),
                got: d,
            });
        }
        Ok(())
    }
}

/// N×K matrix of `log(α_k f_vMF(x_i | μ_k, κ_k))`.
#[derive(Debug, Clone)]
pub struct LogJoint {
    n: usize,
    k: usize,
    data: Vec<f64>,
}

impl LogJoint {
    pub fn compute(theta: &ModelParams, x: &EmbeddingSet) -> Result<Self> {
        theta.check_dim(x.d())?;
        let k = theta.k();
        let log_alpha = -(k as f64).ln();
        let offsets: Vec<f64> = theta
            .components
            .iter()
            .map(|c| log_alpha + c.log_normalizer())
            .collect();
        let mut data = vec![0.0; x.n() * k];
        data.par_chunks_mut(k).enumerate().for_each(|(i, out)| {
            let xi = x.row(i);
            for (j, c) in theta.components.iter().enumerate() {
                out[j] = offsets[j] + c.kappa * dot(xi, c.mu.as_slice());
            }
        });
        Ok(LogJoint { n: x.n(), k, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    /// `Σ_i log Σ_k α_k f_ik`.
    pub fn total_log_marginal(&self) -> f64 {
        ordered_sum(self.n, |i| log_sum_exp(self.row(i)))
    }

    /// Exact posterior responsibilities under the uniform prior.
    pub fn posterior(&self) -> Responsibilities {
        let mut data = self.data.clone();
        data.par_chunks_mut(self.k).for_each(softmax_in_place);
        Responsibilities::from_flat_unchecked(self.n, self.k, data)
    }

    /// `Σ_i Σ_k γ_ik log(α_k f_ik) + Σ_i H(γ_i)`.
    pub fn elbo(&self, g: &Responsibilities) -> f64 {
        debug_assert_eq!((g.n(), g.k()), (self.n, self.k));
        ordered_sum(self.n, |i| {
            let gi = g.row(i);
            let expected: f64 = gi
                .iter()
                .zip(self.row(i))
                .filter(|(&gk, _)| gk > 0.0)
                .map(|(gk, l)| gk * l)
                .sum();
            expected + row_entropy(gi)
        })
    }
}

/// Sums `f(0..n)` computing terms in parallel but adding them in index order,
/// so the result does not depend on the thread count.
pub(crate) fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let parts: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    parts.iter().sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `log Σ_k (1/K) f_vMF(x | μ_k, κ_k)`.
pub fn log_marginal(x: &[f64], theta: &ModelParams) -> Result<f64> {
    if x.len() != theta.d() {
        return Err(GemError::DimensionMismatch {
            expected: theta.d(),
            got: x.len(),
        });
    }
    let log_alpha = -(theta.k() as f64).ln();
    let terms: Vec<f64> = theta
        .components
        .iter()
        .map(|c| log_alpha + c.log_normalizer() + c.kappa * dot(x, c.mu.as_slice()))
        .collect();
    Ok(log_sum_exp(&terms))
}

fn check_shapes(theta: &ModelParams, g: &Responsibilities, x: &EmbeddingSet) -> Result<()> {
    theta.check_dim(x.d())?;
    if g.n() != x.n() {
        return Err(GemError::SizeMismatch {
            left: g.n(),
            right: x.n(),
        });
    }
    if g.k() != theta.k() {
        return Err(GemError::SizeMismatch {
            left: g.k(),
            right: theta.k(),
        });
    }
    Ok(())
}

/// The full objective `F(Θ, Γ)`: ELBO plus the balance regularizer on `π(Γ)`.
pub fn objective(theta: &ModelParams, g: &Responsibilities, x: &EmbeddingSet, lambda: f64) -> Result<f64> {
    check_shapes(theta, g, x)?;
    let lj = LogJoint::compute(theta, x)?;
    Ok(objective_from(&lj, g, lambda))
}

pub(crate) fn objective_from(lj: &LogJoint, g: &Responsibilities, lambda: f64) -> f64 {
    lj.elbo(g) + balance_regularizer(empirical_mass(g).as_slice(), lambda)
}

/// The minorizing surrogate `F̃_t(Γ)` anchored at mass `π_t`: the regularizer
/// is replaced by its quadratic lower bound around `π_t`.
pub fn surrogate(
    theta_t: &ModelParams,
    g: &Responsibilities,
    pi_t: &MassVector,
    x: &EmbeddingSet,
    lambda: f64,
) -> Result<f64> {
    check_shapes(theta_t, g, x)?;
    if pi_t.0.len() != g.k() {
        return Err(GemError::SizeMismatch {
            left: pi_t.0.len(),
            right: g.k(),
        });
    }
    let lj = LogJoint::compute(theta_t, x)?;
    Ok(surrogate_from(&lj, g, pi_t.as_slice(), lambda))
}

pub(crate) fn surrogate_from(lj: &LogJoint, g: &Responsibilities, pi_t: &[f64], lambda: f64) -> f64 {
    lj.elbo(g) + quadratic_minorizer(empirical_mass(g).as_slice(), pi_t, lambda)
}

/// `R(π_t) + ⟨∇R(π_t), π - π_t⟩ - (λ/2)‖π - π_t‖²`.
pub(crate) fn quadratic_minorizer(pi: &[f64], pi_t: &[f64], lambda: f64) -> f64 {
    let grad = balance_gradient(pi_t, lambda);
    let lin: f64 = grad.iter().zip(pi.iter().zip(pi_t)).map(|(g, (p, q))| g * (p - q)).sum();
    let quad: f64 = pi.iter().zip(pi_t).map(|(p, q)| (p - q).powi(2)).sum();
    balance_regularizer(pi_t, lambda) + lin - 0.5 * lambda * quad
}
