//! Unit-sphere primitives and von Mises-Fisher densities.

mod bessel;
mod vmf;

pub use bessel::{bessel_ratio, log_bessel_i};
pub use vmf::{concentration_check, log_normalizer, sample_vmf, uniform_sphere, vmf_log_density};
pub(crate) use vmf::{sample_vmf_with, uniform_sphere_with};

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};

/// Upper bound on any concentration parameter.
pub const KAPPA_MAX: f64 = 1e6;

const ZERO_NORM: f64 = 1e-12;

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A point on the unit hypersphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Basis vector `e_axis` in `d` dimensions.
    pub fn basis(d: usize, axis: usize) -> Self {
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        UnitVector(v)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = GemError;

    /// Keeps `v` bit-for-bit when it is already unit length to within
    /// rounding, so stored directions reload unchanged.
    fn try_from(v: Vec<f64>) -> Result<Self> {
        if (norm(&v) - 1.0).abs() <= 1e-12 {
            return Ok(UnitVector(v));
        }
        normalize(&v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    let n = norm(v);
    if !(n >= ZERO_NORM) {
        return Err(GemError::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// N unit vectors in `d` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Builds a set from flat row-major data, normalizing every row.
    pub fn from_flat(n: usize, d: usize, mut data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(GemError::InvalidInput("embedding set is empty".into()));
        }
        if d < 2 {
            return Err(GemError::InvalidInput(format!("dimension must be >= 2, got {d}")));
        }
        if data.len() != n * d {
            return Err(GemError::SizeMismatch {
                left: data.len(),
                right: n * d,
            });
        }
        for row in data.chunks_mut(d) {
            let nrm = norm(row);
            if !(nrm >= ZERO_NORM) {
                return Err(GemError::ZeroVector);
            }
            row.iter_mut().for_each(|x| *x /= nrm);
        }
        Ok(EmbeddingSet { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(GemError::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Rows at the given indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(GemError::InvalidInput(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(indices.len(), self.d, data)
    }

    /// Concatenates two sets of equal dimension.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<Self> {
        if other.d != self.d {
            return Err(GemError::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(EmbeddingSet {
            n: self.n + other.n,
            d: self.d,
            data,
        })
    }
}

/// Mean direction and concentration of one vMF component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfParams {
    pub mu: UnitVector,
    pub kappa: f64,
}

impl VmfParams {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self> {
        if !(0.0..=KAPPA_MAX).contains(&kappa) {
            return Err(GemError::InvalidInput(format!(
                "kappa {kappa} outside [0, {KAPPA_MAX}]"
            )));
        }
        Ok(VmfParams { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// `log C_d(κ)` for this component's dimension.
    pub fn log_normalizer(&self) -> f64 {
        log_normalizer(self.dim(), self.kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_pythagorean() {
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn normalize_identity() {
        let u = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(u.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(GemError::ZeroVector)));
        assert!(matches!(normalize(&[1e-13, 0.0]), Err(GemError::ZeroVector)));
    }

    #[test]
    fn embedding_rows_are_unit() {
        let x = EmbeddingSet::from_rows(&[vec![1.0, 2.0, 2.0], vec![0.0, -5.0, 0.0]]).unwrap();
        for r in x.rows() {
            assert!((norm(r) - 1.0).abs() <= 1e-9);
        }
        assert_eq!(x.n(), 2);
        assert_eq!(x.d(), 3);
    }

    #[test]
    fn embedding_rejects_degenerate_shapes() {
        assert!(EmbeddingSet::from_flat(0, 3, vec![]).is_err());
        assert!(EmbeddingSet::from_flat(2, 1, vec![1.0, 1.0]).is_err());
        assert!(EmbeddingSet::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn kappa_range_enforced() {
        let mu = UnitVector::basis(3, 0);
        assert!(VmfParams::new(mu.clone(), -1.0).is_err());
        assert!(VmfParams::new(mu.clone(), 2e6).is_err());
        assert!(VmfParams::new(mu, 0.0).is_ok());
    }
}
