use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};

use super::{dot, log_bessel_i, EmbeddingSet, VmfParams};
use crate::error::{GemError, Result};

/// `log C_d(κ)`, the log normalizer of a vMF density on `S^{d-1}`.
///
/// At `κ = 0` this is the log density of the uniform distribution,
/// `log Γ(d/2) - log 2 - (d/2) log π`.
pub fn log_normalizer(d: usize, kappa: f64) -> f64 {
    let half = d as f64 / 2.0;
    if kappa == 0.0 {
        return ln_gamma(half) - LN_2 - half * PI.ln();
    }
    let nu = half - 1.0;
    nu * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_i(nu, kappa)
}

/// `log f(x | μ, κ) = log C_d(κ) + κ μᵀx`.
pub fn vmf_log_density(x: &[f64], p: &VmfParams, d: usize) -> Result<f64> {
    if x.len() != d {
        return Err(GemError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if p.dim() != d {
        return Err(GemError::DimensionMismatch {
            expected: d,
            got: p.dim(),
        });
    }
    Ok(log_normalizer(d, p.kappa) + p.kappa * dot(x, p.mu.as_slice()))
}

/// Draws `n` i.i.d. samples from vMF(μ, κ).
///
/// Wood's rejection sampler for the cosine `w = μᵀx`, combined with a
/// uniformly drawn tangent direction orthogonal to μ.
pub fn sample_vmf(p: &VmfParams, n: usize, seed: u64) -> Result<EmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_vmf_with(p, n, &mut rng)
}

pub(crate) fn sample_vmf_with<R: Rng>(p: &VmfParams, n: usize, rng: &mut R) -> Result<EmbeddingSet> {
    if n == 0 {
        return Err(GemError::InvalidInput("sample count must be >= 1".into()));
    }
    let d = p.dim();
    let mu = p.mu.as_slice();
    let kappa = p.kappa;
    let dm1 = (d - 1) as f64;
    let b = dm1 / (2.0 * kappa + (4.0 * kappa * kappa + dm1 * dm1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + dm1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(dm1 / 2.0, dm1 / 2.0).expect("valid beta parameters");

    let mut data = Vec::with_capacity(n * d);
    let mut tangent = vec![0.0; d];
    for _ in 0..n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + dm1 * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        // uniform direction in the tangent space at μ
        loop {
            tangent.iter_mut().for_each(|t| *t = rng.sample(StandardNormal));
            let along = dot(&tangent, mu);
            tangent.iter_mut().zip(mu).for_each(|(t, m)| *t -= along * m);
            let nrm = dot(&tangent, &tangent).sqrt();
            if nrm > 1e-12 {
                tangent.iter_mut().for_each(|t| *t /= nrm);
                break;
            }
        }
        let s = (1.0 - w * w).max(0.0).sqrt();
        data.extend(mu.iter().zip(&tangent).map(|(m, t)| w * m + s * t));
    }
    EmbeddingSet::from_flat(n, d, data)
}

/// `n` points drawn uniformly from `S^{d-1}`.
pub fn uniform_sphere(d: usize, n: usize, seed: u64) -> Result<EmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_sphere_with(d, n, &mut rng)
}

pub(crate) fn uniform_sphere_with<R: Rng>(d: usize, n: usize, rng: &mut R) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        loop {
            let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if dot(&row, &row) > 1e-24 {
                data.extend(row);
                break;
            }
        }
    }
    EmbeddingSet::from_flat(n, d, data)
}

/// Fraction of `n` uniform points on `S^{d-1}` with `|⟨x, e₁⟩| ≤ eps`.
///
/// Concentration of measure bounds this from below by
/// `1 - 2 exp(-d eps² / 2)`.
pub fn concentration_check(d: usize, eps: f64, n: usize, seed: u64) -> Result<f64> {
    if d < 2 {
        return Err(GemError::InvalidInput(format!("dimension must be >= 2, got {d}")));
    }
    if !(eps > 0.0 && eps <= 1.0) || n == 0 {
        return Err(GemError::InvalidInput(format!("eps must be in (0, 1], got {eps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = vec![0.0f64; d];
    let mut hits = 0usize;
    for _ in 0..n {
        let sq = loop {
            row.iter_mut().for_each(|t| *t = rng.sample(StandardNormal));
            let sq = dot(&row, &row);
            if sq > 1e-24 {
                break sq;
            }
        };
        if row[0].abs() <= eps * sq.sqrt() {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{bessel_ratio, normalize, UnitVector};
    use super::*;

    fn params(d: usize, kappa: f64) -> VmfParams {
        VmfParams::new(UnitVector::basis(d, 0), kappa).unwrap()
    }

    #[test]
    fn uniform_limit_on_sphere_and_circle() {
        let x = normalize(&[0.3, -0.2, 0.9]).unwrap();
        let v = vmf_log_density(x.as_slice(), &params(3, 0.0), 3).unwrap();
        assert!((v + (4.0 * PI).ln()).abs() < 1e-12);
        assert!((v - (-2.5310)).abs() < 1e-4);

        let y = normalize(&[0.6, 0.8]).unwrap();
        let v2 = vmf_log_density(y.as_slice(), &params(2, 0.0), 2).unwrap();
        assert!((v2 + (2.0 * PI).ln()).abs() < 1e-12);
        assert!((v2 - (-1.8379)).abs() < 1e-4);
    }

    #[test]
    fn normalizer_continuous_at_zero() {
        for d in [2, 3, 16, 768] {
            let a = log_normalizer(d, 0.0);
            let b = log_normalizer(d, 1e-9);
            assert!((a - b).abs() < 1e-6, "d={d}: {a} vs {b}");
        }
    }

    #[test]
    fn antipodal_difference_is_two_kappa() {
        let p = params(5, 7.5);
        let mu = p.mu.as_slice().to_vec();
        let neg: Vec<f64> = mu.iter().map(|v| -v).collect();
        let a = vmf_log_density(&mu, &p, 5).unwrap();
        let b = vmf_log_density(&neg, &p, 5).unwrap();
        assert!((a - b - 15.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let p = params(3, 1.0);
        assert!(matches!(
            vmf_log_density(&[1.0, 0.0], &p, 3),
            Err(GemError::DimensionMismatch { .. })
        ));
        assert!(vmf_log_density(&[1.0, 0.0], &p, 2).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        // Monte-Carlo over uniform points: E_unif[f] · |S^{d-1}| = 1.
        for d in [2usize, 3] {
            let pts = uniform_sphere(d, 1_000_000, 11).unwrap();
            let log_area = -log_normalizer(d, 0.0);
            for kappa in [0.0, 0.5, 2.0, 8.0] {
                let p = params(d, kappa);
                let lc = p.log_normalizer();
                let mean: f64 = pts
                    .rows()
                    .map(|x| (lc + kappa * x[0]).exp())
                    .sum::<f64>()
                    / pts.n() as f64;
                let integral = mean * log_area.exp();
                assert!((integral - 1.0).abs() < 0.01, "d={d} kappa={kappa}: {integral}");
            }
        }
    }

    #[test]
    fn uniform_sample_is_centered() {
        let d = 16;
        let n = 10_000;
        let x = sample_vmf(&params(d, 0.0), n, 5).unwrap();
        let probe = normalize(&[1.0; 16]).unwrap();
        let mean: f64 = x.rows().map(|r| dot(r, probe.as_slice())).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 * (1.0 / (d * n) as f64).sqrt(), "{mean}");
    }

    #[test]
    fn concentrated_samples_hug_the_mean() {
        let x = sample_vmf(&params(8, 1e4), 100, 9).unwrap();
        let min = x.rows().map(|r| r[0]).fold(f64::INFINITY, f64::min);
        assert!(min > 0.99, "{min}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = VmfParams::new(normalize(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 12.0).unwrap();
        let a = sample_vmf(&p, 200, 42).unwrap();
        let b = sample_vmf(&p, 200, 42).unwrap();
        assert_eq!(a.as_flat(), b.as_flat());
        let c = sample_vmf(&p, 200, 43).unwrap();
        assert_ne!(a.as_flat(), c.as_flat());
    }

    #[test]
    fn mean_resultant_matches_bessel_ratio() {
        let n = 100_000;
        for d in [4usize, 16] {
            for kappa in [1.0, 10.0, 100.0] {
                let mu = normalize(&(0..d).map(|i| (i + 1) as f64).collect::<Vec<_>>()).unwrap();
                let p = VmfParams::new(mu.clone(), kappa).unwrap();
                let x = sample_vmf(&p, n, 1234 + d as u64).unwrap();
                let mut r = vec![0.0; d];
                for row in x.rows() {
                    r.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                let rbar = dot(&r, &r).sqrt() / n as f64;
                let want = bessel_ratio(d as f64 / 2.0 - 1.0, kappa);
                assert!((rbar - want).abs() < 1e-2, "d={d} kappa={kappa}: {rbar} vs {want}");
            }
        }
    }

    #[test]
    fn concentration_bound_holds() {
        let n = 100_000;
        for &(d, eps) in &[(4usize, 0.5f64), (64, 0.3), (1024, 0.2)] {
            let frac = concentration_check(d, eps, n, 77).unwrap();
            let bound = 1.0 - 2.0 * (-(d as f64) * eps * eps / 2.0).exp() - 5.0 * (1.0 / n as f64).sqrt();
            assert!(frac >= bound, "d={d} eps={eps}: {frac} < {bound}");
        }
        assert_eq!(concentration_check(2, 1.0, 1000, 1).unwrap(), 1.0);
    }
}
