//! The fitting loop: spherical k-means start, minorize-maximize E-step,
//! closed-form M-step with an ascent guard, and stopping.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::spherical_kmeans;
use crate::error::{GemError, Result};
use crate::geometry::{dot, log_normalizer, normalize, EmbeddingSet, UnitVector, VmfParams, KAPPA_MAX};
use crate::objective::{
    argmax, balance_gradient, empirical_mass, log_sum_exp, objective_from, ordered_sum, softmax_in_place,
    surrogate_from, LogJoint, ModelParams, Responsibilities,
};

const RBAR_MAX: f64 = 1.0 - 1e-6;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;
// Fixed chunk so Hessian partial sums do not depend on the worker count.
const HESSIAN_CHUNK: usize = 512;

/// Fitting knobs. `stop_tol = None` means `1e-4 · N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GemConfig {
    pub k: usize,
    pub lambda: f64,
    pub max_iters: usize,
    pub stop_tol: Option<f64>,
    pub eps: f64,
    pub kappa_init: f64,
    pub estep_sweeps: usize,
    pub estep_step: f64,
    pub seed: u64,
}

impl Default for GemConfig {
    fn default() -> Self {
        GemConfig {
            k: 24,
            lambda: 5000.0,
            max_iters: 200,
            stop_tol: None,
            eps: 1e-8,
            kappa_init: 1.0,
            estep_sweeps: 3,
            estep_step: 1.0,
            seed: 0,
        }
    }
}

impl GemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GemError::InvalidConfig(m.into()));
        if self.k == 0 {
            return bad("K must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if let Some(t) = self.stop_tol {
            if !(t > 0.0) {
                return bad("stop_tol must be > 0");
            }
        }
        if !(self.eps > 0.0 && self.eps <= 1e-3) {
            return bad("eps must be in (0, 1e-3]");
        }
        if !(0.0..=KAPPA_MAX).contains(&self.kappa_init) {
            return bad("kappa_init must be in [0, KAPPA_MAX]");
        }
        if self.estep_sweeps == 0 {
            return bad("estep_sweeps must be >= 1");
        }
        if !(self.estep_step > 0.0 && self.estep_step.is_finite()) {
            return bad("estep_step must be > 0");
        }
        Ok(())
    }

    /// Effective stopping tolerance for a corpus of `n` points.
    pub fn stop_tol_for(&self, n: usize) -> f64 {
        self.stop_tol.unwrap_or(1e-4 * n as f64)
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ModelParams,
    pub gamma: Responsibilities,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub iters_run: usize,
    pub converged: bool,
    /// Components whose closed-form update was rejected by the ascent guard.
    pub mstep_rejections: usize,
    pub reseeds: usize,
}

impl FitResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one iteration")
    }
}

/// Spherical k-means centroids with every `κ = kappa_init` and uniform rows.
pub fn init_spherical_kmeans(
    x: &EmbeddingSet,
    k: usize,
    kappa_init: f64,
    seed: u64,
) -> Result<(ModelParams, Responsibilities)> {
    let km = spherical_kmeans(x, k, seed)?;
    let components = km
        .centroids
        .into_iter()
        .map(|mu| VmfParams::new(mu, kappa_init))
        .collect::<Result<Vec<_>>>()?;
    Ok((ModelParams::new(components)?, Responsibilities::uniform(x.n(), k)))
}

/// One E-step. Never lowers the surrogate anchored at `π(Γ_t)`.
pub fn mm_e_step(
    theta_t: &ModelParams,
    gamma_t: &Responsibilities,
    x: &EmbeddingSet,
    cfg: &GemConfig,
) -> Result<Responsibilities> {
    if gamma_t.n() != x.n() || gamma_t.k() != theta_t.k() {
        return Err(GemError::SizeMismatch {
            left: gamma_t.n() * gamma_t.k(),
            right: x.n() * theta_t.k(),
        });
    }
    let lj = LogJoint::compute(theta_t, x)?;
    let mut h = vec![0.0; theta_t.k()];
    Ok(e_step(&lj, gamma_t, cfg, &mut h))
}

/// Rows `γ_i = softmax(a_i + shift)`.
fn rows_with_shift(lj: &LogJoint, shift: &[f64]) -> Responsibilities {
    let (n, k) = (lj.n(), lj.k());
    let mut data = vec![0.0; n * k];
    data.par_chunks_mut(k).enumerate().for_each(|(i, out)| {
        out.iter_mut()
            .zip(lj.row(i).iter().zip(shift))
            .for_each(|(o, (a, s))| *o = a + s);
        softmax_in_place(out);
    });
    Responsibilities::from_flat_unchecked(n, k, data)
}

/// Coupled E-step.
///
/// The surrogate's maximizer has rows `γ_i ∝ exp(a_i + (c + h)/N)` with
/// `c = ∇R(π_t)` and `h` the coupling term `-λ(π(Γ) - π_t)`. Rather than a
/// plain fixed-point refresh of `h`, which oscillates when `λ/N` is large,
/// each refresh is a damped Newton step on the convex dual
/// `D(h) = Σ_i lse(a_i + (c+h)/N) - ⟨h, π_t⟩ + ‖h‖²/(2λ)`.
/// `h` is read as a warm start and left at its final value.
fn e_step(lj: &LogJoint, gamma_t: &Responsibilities, cfg: &GemConfig, h: &mut [f64]) -> Responsibilities {
    let (n, k) = (lj.n(), lj.k());
    if k == 1 {
        return gamma_t.clone();
    }
    let lambda = cfg.lambda;
    let pi_t = empirical_mass(gamma_t).0;
    let nf = n as f64;
    let c = balance_gradient(&pi_t, lambda);

    let candidate = if lambda == 0.0 {
        h.iter_mut().for_each(|v| *v = 0.0);
        lj.posterior()
    } else {
        let shift = |h: &[f64]| -> Vec<f64> { c.iter().zip(h).map(|(c, h)| (c + h) / nf).collect() };
        let dual = |h: &[f64]| -> f64 {
            let s = shift(h);
            let lse = ordered_sum(n, |i| {
                let row: Vec<f64> = lj.row(i).iter().zip(&s).map(|(a, s)| a + s).collect();
                log_sum_exp(&row)
            });
            lse - dot(h, &pi_t) + dot(h, h) / (2.0 * lambda)
        };

        let mut g = rows_with_shift(lj, &shift(h));
        for _ in 1..cfg.estep_sweeps {
            let pi = empirical_mass(&g).0;
            let grad: Vec<f64> = (0..k).map(|j| pi[j] - pi_t[j] + h[j] / lambda).collect();
            if grad.iter().all(|v| v.abs() < 1e-15) {
                break;
            }
            let hess = dual_hessian(&g, &pi, lambda);
            let step = match hess.cholesky() {
                Some(ch) => ch.solve(&DVector::from_column_slice(&grad)),
                None => DVector::from_column_slice(&grad) * lambda,
            };
            let dir: Vec<f64> = step.iter().map(|v| -v).collect();
            let slope = dot(&grad, &dir);
            let d0 = dual(h);
            let mut t = cfg.estep_step;
            let mut moved = false;
            for _ in 0..MAX_HALVINGS {
                let trial: Vec<f64> = h.iter().zip(&dir).map(|(h, d)| h + t * d).collect();
                if dual(&trial) <= d0 + ARMIJO * t * slope {
                    h.copy_from_slice(&trial);
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
            g = rows_with_shift(lj, &shift(h));
        }
        g
    };

    let before = surrogate_from(lj, gamma_t, &pi_t, lambda);
    let after = surrogate_from(lj, &candidate, &pi_t, lambda);
    if after >= before {
        candidate
    } else {
        log::debug!("E-step candidate rejected ({after} < {before})");
        gamma_t.clone()
    }
}

/// `(1/N²) Σ_i (diag p_i - p_i p_iᵀ) + I/λ`.
fn dual_hessian(g: &Responsibilities, pi: &[f64], lambda: f64) -> DMatrix<f64> {
    let (n, k) = (g.n(), g.k());
    let nf = n as f64;
    let partials: Vec<Vec<f64>> = g
        .as_flat()
        .par_chunks(HESSIAN_CHUNK * k)
        .map(|chunk| {
            let mut outer = vec![0.0; k * k];
            for p in chunk.chunks_exact(k) {
                for a in 0..k {
                    for b in 0..=a {
                        outer[a * k + b] += p[a] * p[b];
                    }
                }
            }
            outer
        })
        .collect();
    let mut outer = vec![0.0; k * k];
    for part in &partials {
        outer.iter_mut().zip(part).for_each(|(o, p)| *o += p);
    }
    DMatrix::from_fn(k, k, |a, b| {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let diag = if a == b { pi[a] / nf + 1.0 / lambda } else { 0.0 };
        diag - outer[hi * k + lo] / (nf * nf)
    })
}

/// Weighted resultants `r_k = Σ_i γ_ik x_i` and masses `N_k = Σ_i γ_ik`.
fn resultants(g: &Responsibilities, x: &EmbeddingSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = x.d();
    let out: Vec<(Vec<f64>, f64)> = (0..g.k())
        .into_par_iter()
        .map(|j| {
            let mut r = vec![0.0; d];
            let mut mass = 0.0;
            for (i, xi) in x.rows().enumerate() {
                let w = g.row(i)[j];
                if w != 0.0 {
                    mass += w;
                    r.iter_mut().zip(xi).for_each(|(r, v)| *r += w * v);
                }
            }
            (r, mass)
        })
        .collect();
    out.into_iter().unzip()
}

fn check_pair(g: &Responsibilities, x: &EmbeddingSet) -> Result<()> {
    if g.n() != x.n() {
        return Err(GemError::SizeMismatch {
            left: g.n(),
            right: x.n(),
        });
    }
    Ok(())
}

fn mu_from_resultant(r: &[f64], eps: f64) -> Option<UnitVector> {
    let nrm = dot(r, r).sqrt();
    let scaled: Vec<f64> = r.iter().map(|v| v / (nrm + eps)).collect();
    normalize(&scaled).ok()
}

/// Mean directions `r_k / (‖r_k‖ + ε)`, renormalized. `None` where the
/// resultant vanishes and the direction is undefined.
pub fn m_step_mu(g: &Responsibilities, x: &EmbeddingSet, eps: f64) -> Result<Vec<Option<UnitVector>>> {
    check_pair(g, x)?;
    let (r, _) = resultants(g, x);
    Ok(r.iter().map(|r| mu_from_resultant(r, eps)).collect())
}

/// `κ(R̄) = (R̄ d - R̄³) / (1 - R̄²)` with `R̄` clamped to `[0, 1 - 1e-6]`
/// and the result clamped to `[0, KAPPA_MAX]`.
pub fn kappa_from_rbar(rbar: f64, d: usize) -> f64 {
    let r = if rbar.is_nan() { 0.0 } else { rbar.clamp(0.0, RBAR_MAX) };
    let k = (r * d as f64 - r.powi(3)) / (1.0 - r * r);
    k.clamp(0.0, KAPPA_MAX)
}

/// Concentrations from weighted mean resultant lengths.
pub fn m_step_kappa(g: &Responsibilities, x: &EmbeddingSet, eps: f64) -> Result<Vec<f64>> {
    check_pair(g, x)?;
    let (r, mass) = resultants(g, x);
    Ok(r.iter()
        .zip(&mass)
        .map(|(r, m)| kappa_from_rbar(dot(r, r).sqrt() / (m + eps), x.d()))
        .collect())
}

/// The part of the objective that depends on component `k`'s parameters.
fn component_score(d: usize, mass: f64, r: &[f64], mu: &UnitVector, kappa: f64) -> f64 {
    mass * log_normalizer(d, kappa) + kappa * dot(mu.as_slice(), r)
}

struct MStep {
    theta: ModelParams,
    rejections: usize,
    reseeds: usize,
}

/// Closed-form update with per-component ascent guard and empty-cluster reseed.
fn m_step(theta_t: &ModelParams, g: &Responsibilities, x: &EmbeddingSet, lj_t: &LogJoint, cfg: &GemConfig) -> MStep {
    let d = x.d();
    let (r, mass) = resultants(g, x);
    let empty_floor = 10.0 * cfg.eps * x.n() as f64;
    let mut components = theta_t.components.clone();
    let mut rejections = 0;
    let mut reseeds = 0;

    let empty: Vec<usize> = (0..theta_t.k()).filter(|&j| mass[j] < empty_floor).collect();
    let mut worst = Vec::new();
    if !empty.is_empty() {
        let marg: Vec<f64> = (0..x.n()).map(|i| log_sum_exp(lj_t.row(i))).collect();
        let mut idx: Vec<usize> = (0..x.n()).collect();
        idx.sort_by(|&a, &b| marg[a].total_cmp(&marg[b]).then(a.cmp(&b)));
        worst = idx;
    }

    let mut next_worst = 0;
    for j in 0..theta_t.k() {
        let old = &theta_t.components[j];
        let old_score = component_score(d, mass[j], &r[j], &old.mu, old.kappa);
        if mass[j] < empty_floor {
            // Reseed from the worst-explained point not already claimed.
            let Some(&i) = worst.get(next_worst) else { continue };
            next_worst += 1;
            let mu = normalize(x.row(i)).expect("embedding rows are unit");
            if component_score(d, mass[j], &r[j], &mu, cfg.kappa_init) >= old_score {
                components[j] = VmfParams { mu, kappa: cfg.kappa_init };
                reseeds += 1;
            }
            continue;
        }
        let Some(mu) = mu_from_resultant(&r[j], cfg.eps) else {
            continue;
        };
        let kappa = kappa_from_rbar(dot(&r[j], &r[j]).sqrt() / (mass[j] + cfg.eps), d);
        if component_score(d, mass[j], &r[j], &mu, kappa) >= old_score {
            components[j] = VmfParams { mu, kappa };
        } else {
            rejections += 1;
            if component_score(d, mass[j], &r[j], &mu, old.kappa) >= old_score {
                components[j] = VmfParams { mu, kappa: old.kappa };
            }
        }
    }
    MStep {
        theta: ModelParams { components },
        rejections,
        reseeds,
    }
}

/// Runs the full loop from a spherical k-means start.
pub fn fit(x: &EmbeddingSet, cfg: &GemConfig) -> Result<FitResult> {
    cfg.validate()?;
    if x.n() < cfg.k {
        return Err(GemError::TooFewPoints { n: x.n(), k: cfg.k });
    }
    let (theta, gamma) = init_spherical_kmeans(x, cfg.k, cfg.kappa_init, cfg.seed)?;
    fit_from(x, cfg, theta, gamma)
}

/// Runs the loop from a given starting point.
pub fn fit_from(x: &EmbeddingSet, cfg: &GemConfig, mut theta: ModelParams, mut gamma: Responsibilities) -> Result<FitResult> {
    cfg.validate()?;
    theta.check_dim(x.d())?;
    if gamma.n() != x.n() || gamma.k() != theta.k() || theta.k() != cfg.k {
        return Err(GemError::SizeMismatch {
            left: gamma.n() * gamma.k(),
            right: x.n() * cfg.k,
        });
    }
    let tol = cfg.stop_tol_for(x.n());
    let mut h = vec![0.0; cfg.k];
    let mut lj = LogJoint::compute(&theta, x)?;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut rejections = 0;
    let mut reseeds = 0;

    for t in 0..cfg.max_iters {
        gamma = e_step(&lj, &gamma, cfg, &mut h);
        let f_e = objective_from(&lj, &gamma, cfg.lambda);

        let step = m_step(&theta, &gamma, x, &lj, cfg);
        let lj_new = LogJoint::compute(&step.theta, x)?;
        let f_m = objective_from(&lj_new, &gamma, cfg.lambda);
        let f = if f_m >= f_e {
            theta = step.theta;
            lj = lj_new;
            rejections += step.rejections;
            reseeds += step.reseeds;
            f_m
        } else {
            // rounding-level loss across components; keep the previous parameters
            log::debug!("iteration {t}: M-step reverted ({f_m} < {f_e})");
            rejections += cfg.k;
            f_e
        };
        log::debug!("iteration {t}: F = {f}");
        let prev = trace.last().copied();
        trace.push(f);
        if let Some(p) = prev {
            if (f - p).abs() <= tol {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult {
        theta,
        gamma,
        iters_run: trace.len(),
        objective_trace: trace,
        converged,
        mstep_rejections: rejections,
        reseeds,
    })
}

/// Posterior responsibilities of one point and its hard cluster.
pub fn assign(theta: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, usize)> {
    if x.len() != theta.d() {
        return Err(GemError::DimensionMismatch {
            expected: theta.d(),
            got: x.len(),
        });
    }
    let log_alpha = theta.alpha().ln();
    let mut row: Vec<f64> = theta
        .components
        .iter()
        .map(|c| log_alpha + c.log_normalizer() + c.kappa * dot(x, c.mu.as_slice()))
        .collect();
    softmax_in_place(&mut row);
    let k = argmax(&row);
    Ok((row, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_vmf, uniform_sphere};
    use crate::metrics::{hungarian_match, HardPartition};
    use crate::objective::{objective, surrogate};

    fn small_cfg(k: usize, lambda: f64) -> GemConfig {
        GemConfig {
            k,
            lambda,
            max_iters: 100,
            ..GemConfig::default()
        }
    }

    fn mixture(mus: &[Vec<f64>], kappa: f64, per: usize, seed: u64) -> (EmbeddingSet, Vec<usize>) {
        let mut acc: Option<EmbeddingSet> = None;
        let mut labels = Vec::new();
        for (j, m) in mus.iter().enumerate() {
            let p = VmfParams::new(normalize(m).unwrap(), kappa).unwrap();
            let s = sample_vmf(&p, per, seed * 31 + j as u64).unwrap();
            acc = Some(match acc {
                None => s,
                Some(a) => a.concat(&s).unwrap(),
            });
            labels.extend(std::iter::repeat_n(j, per));
        }
        (acc.unwrap(), labels)
    }

    #[test]
    fn defaults() {
        let c = GemConfig::default();
        assert_eq!((c.k, c.lambda, c.max_iters), (24, 5000.0, 200));
        assert_eq!(c.stop_tol_for(1000), 0.1);
        assert!(c.validate().is_ok());
        assert!(GemConfig { eps: 1e-2, ..c.clone() }.validate().is_err());
        assert!(GemConfig { k: 0, ..c }.validate().is_err());
    }

    #[test]
    fn init_antipodal_caps() {
        let (x, _) = mixture(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, -1.0]], 300.0, 100, 4);
        let (theta, g) = init_spherical_kmeans(&x, 2, 1.0, 3).unwrap();
        let mut zs: Vec<f64> = theta.components.iter().map(|c| c.mu.as_slice()[2]).collect();
        zs.sort_by(f64::total_cmp);
        assert!(zs[0] < -(0.1f64).cos() && zs[1] > (0.1f64).cos());
        assert_eq!(g.row(17), &[0.5, 0.5]);
        assert!(theta.kappas().iter().all(|&k| k == 1.0));
        let (again, _) = init_spherical_kmeans(&x, 2, 1.0, 3).unwrap();
        assert_eq!(theta, again);
        assert!(matches!(
            init_spherical_kmeans(&x.subset(&[0]).unwrap(), 2, 1.0, 0),
            Err(GemError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn estep_zero_lambda_is_posterior() {
        let x = uniform_sphere(5, 40, 2).unwrap();
        let (theta, g0) = init_spherical_kmeans(&x, 3, 4.0, 1).unwrap();
        let g = mm_e_step(&theta, &g0, &x, &small_cfg(3, 0.0)).unwrap();
        let post = LogJoint::compute(&theta, &x).unwrap().posterior();
        for (a, b) in g.as_flat().iter().zip(post.as_flat()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn estep_single_point_single_cluster() {
        let x = EmbeddingSet::from_rows(&[[0.0, 1.0]]).unwrap();
        let theta = ModelParams::new(vec![VmfParams::new(UnitVector::basis(2, 0), 3.0).unwrap()]).unwrap();
        let g0 = Responsibilities::uniform(1, 1);
        assert_eq!(mm_e_step(&theta, &g0, &x, &small_cfg(1, 10.0)).unwrap(), g0);
    }

    #[test]
    fn estep_beats_grid_search() {
        // N=4, K=2: a row is one number γ_i0 ∈ [0,1]; 10 grid values per row.
        let x = EmbeddingSet::from_rows(&[[1.0, 0.2, 0.0], [0.9, -0.3, 0.1], [0.2, 1.0, 0.3], [-0.5, 0.1, 1.0]]).unwrap();
        let theta = ModelParams::new(vec![
            VmfParams::new(normalize(&[1.0, 0.0, 0.0]).unwrap(), 6.0).unwrap(),
            VmfParams::new(normalize(&[0.0, 1.0, 0.5]).unwrap(), 2.0).unwrap(),
        ])
        .unwrap();
        let g0 = Responsibilities::from_rows(&[[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.95, 0.05]]).unwrap();
        let pi_t = empirical_mass(&g0);
        let cfg = small_cfg(2, 10.0);
        let g = mm_e_step(&theta, &g0, &x, &cfg).unwrap();
        let got = surrogate(&theta, &g, &pi_t, &x, 10.0).unwrap();
        let grid: Vec<f64> = (0..10).map(|v| v as f64 / 9.0).collect();
        let mut best = f64::NEG_INFINITY;
        for a in &grid {
            for b in &grid {
                for c in &grid {
                    for e in &grid {
                        let probe = Responsibilities::from_rows(&[[*a, 1.0 - a], [*b, 1.0 - b], [*c, 1.0 - c], [*e, 1.0 - e]])
                            .unwrap();
                        best = best.max(surrogate(&theta, &probe, &pi_t, &x, 10.0).unwrap());
                    }
                }
            }
        }
        assert!(got >= best - 1e-3, "{got} < {best}");
        assert!(got >= surrogate(&theta, &g0, &pi_t, &x, 10.0).unwrap());
    }

    #[test]
    fn estep_never_lowers_surrogate_with_huge_lambda() {
        let x = uniform_sphere(6, 300, 9).unwrap();
        let (theta, _) = init_spherical_kmeans(&x, 4, 20.0, 2).unwrap();
        let g0 = LogJoint::compute(&theta, &x).unwrap().posterior();
        let pi_t = empirical_mass(&g0);
        for lambda in [1e2, 1e5, 1e8] {
            let g = mm_e_step(&theta, &g0, &x, &small_cfg(4, lambda)).unwrap();
            for row in g.rows() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let before = surrogate(&theta, &g0, &pi_t, &x, lambda).unwrap();
            let after = surrogate(&theta, &g, &pi_t, &x, lambda).unwrap();
            assert!(after >= before);
        }
    }

    #[test]
    fn mu_examples() {
        let x = EmbeddingSet::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let g = Responsibilities::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let mu = m_step_mu(&g, &x, 1e-8).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m0 = mu[0].as_ref().unwrap().as_slice();
        assert!((m0[0] - s).abs() < 1e-12 && (m0[1] - s).abs() < 1e-12 && m0[2] == 0.0);
        assert!(mu[1].is_none());

        let one = EmbeddingSet::from_rows(&[[0.6, 0.8]]).unwrap();
        let mu = m_step_mu(&Responsibilities::uniform(1, 1), &one, 1e-8).unwrap();
        let m = mu[0].as_ref().unwrap().as_slice();
        assert!((m[0] - 0.6).abs() < 1e-12 && (m[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(kappa_from_rbar(0.0, 16), 0.0);
        assert!((kappa_from_rbar(0.5, 4) - 2.5).abs() < 1e-12);
        assert_eq!(kappa_from_rbar(1.0, 3), kappa_from_rbar(RBAR_MAX, 3));
        assert!(kappa_from_rbar(1.0, 4096) <= KAPPA_MAX);
    }

    #[test]
    fn kappa_recovered_from_samples() {
        let p = VmfParams::new(UnitVector::basis(16, 3), 50.0).unwrap();
        let x = sample_vmf(&p, 100_000, 8).unwrap();
        let k = m_step_kappa(&Responsibilities::uniform(x.n(), 1), &x, 1e-8).unwrap()[0];
        assert!((k - 50.0).abs() / 50.0 < 0.05, "{k}");
    }

    #[test]
    fn recovers_separated_mixture() {
        let mus = [
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            UnitVector::basis(16, 5).into_inner(),
            UnitVector::basis(16, 11).into_inner(),
        ];
        let (x, truth) = mixture(&mus, 100.0, 1000, 2);
        let res = fit(&x, &small_cfg(3, 5000.0)).unwrap();
        let pred = HardPartition::new(res.gamma.hard_labels(), 3).unwrap();
        let truth = HardPartition::new(truth, 3).unwrap();
        assert!(hungarian_match(&pred, &truth).unwrap().matched_accuracy >= 0.95);
        for w in res.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6);
        }
    }

    #[test]
    fn single_cluster() {
        let x = uniform_sphere(4, 50, 5).unwrap();
        let res = fit(&x, &small_cfg(1, 10.0)).unwrap();
        assert!(res.iters_run <= 2 && res.converged);
        assert!(res.gamma.as_flat().iter().all(|&g| g == 1.0));
        let mut r = vec![0.0; 4];
        x.rows().for_each(|row| r.iter_mut().zip(row).for_each(|(a, b)| *a += b));
        let want = normalize(&r).unwrap();
        for (a, b) in res.theta.components[0].mu.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_lambda_balances_imbalanced_data() {
        let mut mus = vec![vec![0.0; 8]; 3];
        mus[0][0] = 1.0;
        mus[1][0] = 0.8;
        mus[1][1] = 0.6;
        mus[2][3] = 1.0;
        let (big, _) = mixture(&mus[..1], 20.0, 500, 1);
        let (rest, _) = mixture(&mus[1..], 20.0, 50, 2);
        let x = big.concat(&rest).unwrap();
        let free = fit(&x, &small_cfg(3, 0.0)).unwrap();
        let tight = fit(&x, &small_cfg(3, 1e8)).unwrap();
        let dfree = empirical_mass(&free.gamma).distance_to_uniform();
        let dtight = empirical_mass(&tight.gamma).distance_to_uniform();
        assert!(dtight < dfree, "{dtight} vs {dfree}");
    }

    #[test]
    fn fit_is_deterministic() {
        let x = uniform_sphere(8, 400, 12).unwrap();
        let a = fit(&x, &small_cfg(4, 50.0)).unwrap();
        let b = fit(&x, &small_cfg(4, 50.0)).unwrap();
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn trace_matches_objective() {
        let x = uniform_sphere(5, 200, 3).unwrap();
        let cfg = small_cfg(3, 100.0);
        let res = fit(&x, &cfg).unwrap();
        let f = objective(&res.theta, &res.gamma, &x, cfg.lambda).unwrap();
        assert!((f - res.final_objective()).abs() < 1e-9 * f.abs().max(1.0));
    }

    #[test]
    fn assign_examples() {
        let theta = ModelParams::new(vec![
            VmfParams::new(UnitVector::basis(3, 0), 1.0).unwrap(),
            VmfParams::new(UnitVector::basis(3, 1), 500.0).unwrap(),
        ])
        .unwrap();
        let (p, k) = assign(&theta, UnitVector::basis(3, 1).as_slice()).unwrap();
        assert_eq!(k, 1);
        assert!(p[1] > 0.99);

        let c = VmfParams::new(UnitVector::basis(3, 2), 4.0).unwrap();
        let same = ModelParams::new(vec![c.clone(), c.clone(), c]).unwrap();
        let (p, k) = assign(&same, &[0.6, 0.0, 0.8]).unwrap();
        assert_eq!(k, 0);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));

        let single = ModelParams::new(vec![VmfParams::new(UnitVector::basis(3, 2), 4.0).unwrap()]).unwrap();
        assert_eq!(assign(&single, &[1.0, 0.0, 0.0]).unwrap(), (vec![1.0], 0));
        assert!(matches!(assign(&single, &[1.0, 0.0]), Err(GemError::DimensionMismatch { .. })));
    }
}
