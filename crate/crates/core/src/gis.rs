//! Representative selection by geometric influence score and taxonomy
//! prompt export.
//!
//! The score of point `i` in its hard cluster `k` adds three log terms:
//! assignment certainty `log(γ_ik + ε)`, the component log density and
//! `β log(ρ + ε)` where `ρ` is the mean cosine to the `M` nearest members of
//! the same cluster.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::geometry::{dot, EmbeddingSet};
use crate::io::write_atomic;
use crate::metrics::HardPartition;
use crate::objective::{ModelParams, Responsibilities};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GisConfig {
    pub beta: f64,
    pub eps: f64,
    /// Neighbors averaged in the local density.
    pub m: usize,
    /// Representatives kept per cluster.
    pub s: usize,
}

impl Default for GisConfig {
    fn default() -> Self {
        GisConfig {
            beta: 1.0,
            eps: 1e-8,
            m: 16,
            s: 5,
        }
    }
}

impl GisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(GemError::InvalidConfig("GIS beta must be >= 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(GemError::InvalidConfig("GIS eps must be > 0".into()));
        }
        if self.m == 0 || self.s == 0 {
            return Err(GemError::InvalidConfig("GIS M and S must be >= 1".into()));
        }
        Ok(())
    }
}

/// Local density of a point within its cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Density {
    pub rho: f64,
    /// The point is alone in its cluster; `rho` is then 0.
    pub singleton: bool,
}

/// Mean of the `m` largest values (all of them if fewer).
fn top_mean(mut sims: Vec<f64>, m: usize) -> f64 {
    let m = m.min(sims.len());
    if m < sims.len() {
        sims.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
        sims.truncate(m);
    }
    sims.sort_by(|a, b| b.total_cmp(a));
    sims.iter().sum::<f64>() / m as f64
}

fn density_among(x: &EmbeddingSet, i: usize, members: &[usize], m: usize) -> Density {
    let xi = x.row(i);
    let sims: Vec<f64> = members.iter().filter(|&&j| j != i).map(|&j| dot(xi, x.row(j))).collect();
    if sims.is_empty() {
        return Density {
            rho: 0.0,
            singleton: true,
        };
    }
    Density {
        rho: top_mean(sims, m).clamp(-1.0, 1.0),
        singleton: false,
    }
}

/// Mean cosine from `x_i` to its `m` nearest neighbors inside cluster `k`.
pub fn local_density(i: usize, k: usize, x: &EmbeddingSet, labels: &HardPartition, m: usize) -> Result<Density> {
    if labels.len() != x.n() {
        return Err(GemError::SizeMismatch {
            left: labels.len(),
            right: x.n(),
        });
    }
    if i >= x.n() || labels.labels()[i] != k {
        return Err(GemError::InvalidInput(format!("sample {i} is not a member of cluster {k}")));
    }
    if m == 0 {
        return Err(GemError::InvalidConfig("M must be >= 1".into()));
    }
    Ok(density_among(x, i, &labels.members()[k], m))
}

/// `log(γ_ik + ε) + log f(x_i | μ_k, κ_k) + β log(ρ + ε)`.
///
/// The density term is `-inf` when `ρ + ε <= 0` and vanishes when `β = 0`.
pub fn gis_score(
    x: &EmbeddingSet,
    i: usize,
    k: usize,
    gamma: &Responsibilities,
    theta: &ModelParams,
    rho: f64,
    cfg: &GisConfig,
) -> f64 {
    let c = &theta.components[k];
    let certainty = (gamma.row(i)[k] + cfg.eps).ln();
    let coherence = c.log_normalizer() + c.kappa * dot(x.row(i), c.mu.as_slice());
    let support = if cfg.beta == 0.0 {
        0.0
    } else if rho + cfg.eps <= 0.0 {
        f64::NEG_INFINITY
    } else {
        cfg.beta * (rho + cfg.eps).ln()
    };
    certainty + coherence + support
}

/// Top-scoring members of each cluster, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeSet {
    pub per_cluster: Vec<Vec<(usize, f64)>>,
    /// Clusters with no hard-assigned members.
    pub empty: Vec<usize>,
}

impl RepresentativeSet {
    pub fn k(&self) -> usize {
        self.per_cluster.len()
    }
}

/// Descending by score, lower index first on ties.
pub(crate) fn rank(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// GIS scores of every member of every cluster, unsorted.
pub(crate) fn score_all(
    x: &EmbeddingSet,
    gamma: &Responsibilities,
    theta: &ModelParams,
    cfg: &GisConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    cfg.validate()?;
    theta.check_dim(x.d())?;
    if gamma.n() != x.n() || gamma.k() != theta.k() {
        return Err(GemError::SizeMismatch {
            left: gamma.n() * gamma.k(),
            right: x.n() * theta.k(),
        });
    }
    let labels = HardPartition::new(gamma.hard_labels(), theta.k())?;
    Ok(labels
        .members()
        .into_par_iter()
        .enumerate()
        .map(|(k, members)| {
            members
                .par_iter()
                .map(|&i| {
                    let rho = density_among(x, i, &members, cfg.m).rho;
                    (i, gis_score(x, i, k, gamma, theta, rho, cfg))
                })
                .collect()
        })
        .collect())
}

/// Ranks each cluster's hard-assigned members by GIS and keeps the top `S`.
pub fn select_representatives(
    x: &EmbeddingSet,
    gamma: &Responsibilities,
    theta: &ModelParams,
    cfg: &GisConfig,
) -> Result<RepresentativeSet> {
    top_by_gis(x, gamma, theta, cfg, cfg.s)
}

pub(crate) fn top_by_gis(
    x: &EmbeddingSet,
    gamma: &Responsibilities,
    theta: &ModelParams,
    cfg: &GisConfig,
    keep: usize,
) -> Result<RepresentativeSet> {
    let mut scored = score_all(x, gamma, theta, cfg)?;
    let mut empty = Vec::new();
    for (k, list) in scored.iter_mut().enumerate() {
        if list.is_empty() {
            empty.push(k);
        }
        rank(list);
        list.truncate(keep);
    }
    Ok(RepresentativeSet {
        per_cluster: scored,
        empty,
    })
}

const DOC_OPEN: &str = "<<<DOC ";
const DOC_CLOSE: &str = "<<<END DOC>>>";
const DOCS_HEADER: &str = "Documents:\n";
const FORMAT_FOOTER: &str = "Please strictly follow the output format:";

/// Fills the taxonomy prompt with the given `(sample index, text)` pairs.
///
/// Each document is framed by a header carrying its byte length so that
/// [`parse_prompt`] recovers it exactly whatever it contains.
pub fn render_prompt(docs: &[(usize, &str)]) -> String {
    let mut body = String::new();
    for (n, (idx, text)) in docs.iter().enumerate() {
        body.push_str(&format!("{DOC_OPEN}{} sample={idx} bytes={}>>>\n", n + 1, text.len()));
        body.push_str(text);
        body.push('\n');
        body.push_str(DOC_CLOSE);
        body.push('\n');
    }
    format!(
        "You are an expert data taxonomist.\n\
         I will provide you with {} documents that belong to the same semantic cluster.\n\
         Your task is to:\n\
         1. Summarize the common theme and content of these documents in 2-3 sentences.\n\
         2. Based on the summary, assign a single, concise, and high-quality 'Topic Label' (2-5 words) that best describes this cluster.\n\
         3. Describe the topic in a sentence.\n\
         \n\
         {DOCS_HEADER}\
         {body}\
         \n\
         {FORMAT_FOOTER}\n\
         Summary: {{summary content}}\n\
         Topic: {{topic label}}\n\
         Description: {{topic description}}\n",
        docs.len()
    )
}

/// Recovers `(sample index, text)` pairs from a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Result<Vec<(usize, String)>> {
    let bad = |m: &str| GemError::Parse(format!("prompt: {m}"));
    let start = prompt.find(DOCS_HEADER).ok_or_else(|| bad("no documents section"))? + DOCS_HEADER.len();
    let mut rest = &prompt[start..];
    let mut out = Vec::new();
    while let Some(after) = rest.strip_prefix(DOC_OPEN) {
        let eol = after.find('\n').ok_or_else(|| bad("unterminated header"))?;
        let header = after[..eol].strip_suffix(">>>").ok_or_else(|| bad("malformed header"))?;
        let mut sample = None;
        let mut bytes = None;
        for field in header.split(' ') {
            if let Some(v) = field.strip_prefix("sample=") {
                sample = v.parse::<usize>().ok();
            } else if let Some(v) = field.strip_prefix("bytes=") {
                bytes = v.parse::<usize>().ok();
            }
        }
        let (sample, bytes) = sample.zip(bytes).ok_or_else(|| bad("header fields"))?;
        let payload = &after[eol + 1..];
        let text = payload.get(..bytes).ok_or_else(|| bad("truncated document"))?;
        rest = payload[bytes..]
            .strip_prefix('\n')
            .and_then(|r| r.strip_prefix(DOC_CLOSE))
            .and_then(|r| r.strip_prefix('\n'))
            .ok_or_else(|| bad("missing document terminator"))?;
        out.push((sample, text.to_string()));
    }
    if !rest.starts_with('\n') || !rest[1..].starts_with(FORMAT_FOOTER) {
        return Err(bad("trailing content after documents"));
    }
    Ok(out)
}

pub fn prompt_file_name(k: usize) -> String {
    format!("cluster_{k:03}.prompt.txt")
}

/// Writes one prompt per non-empty cluster into `dir`, returning the paths.
pub fn export_taxonomy_prompts<S: AsRef<str>>(reps: &RepresentativeSet, texts: &[S], dir: &Path) -> Result<Vec<PathBuf>> {
    // resolve everything first so a missing document writes nothing
    let mut rendered = Vec::new();
    for (k, list) in reps.per_cluster.iter().enumerate() {
        if list.is_empty() {
            log::warn!("cluster {k} has no representatives; no prompt written");
            continue;
        }
        let docs = list
            .iter()
            .map(|&(i, _)| texts.get(i).map(|t| (i, t.as_ref())).ok_or(GemError::MissingDocument(i)))
            .collect::<Result<Vec<_>>>()?;
        rendered.push((dir.join(prompt_file_name(k)), render_prompt(&docs)));
    }
    std::fs::create_dir_all(dir).map_err(|e| GemError::io(dir, e))?;
    for (path, text) in &rendered {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, uniform_sphere, UnitVector, VmfParams};
    use crate::inference::{fit, GemConfig};
    use proptest::prelude::*;

    fn set(rows: &[[f64; 3]]) -> EmbeddingSet {
        EmbeddingSet::from_rows(rows).unwrap()
    }

    #[test]
    fn density_examples() {
        let x = set(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let labels = HardPartition::new(vec![0, 0, 1], 2).unwrap();
        let d = local_density(0, 0, &x, &labels, 1).unwrap();
        assert_eq!(d.rho, 1.0);
        assert!(!d.singleton);
        let lonely = local_density(2, 1, &x, &labels, 4).unwrap();
        assert_eq!(lonely, Density { rho: 0.0, singleton: true });
        assert!(local_density(2, 0, &x, &labels, 1).is_err());
    }

    #[test]
    fn density_hand_mean() {
        // cosines 0.9 and 0.7 to the anchor, plus a far member
        let c = |v: f64| [v, (1.0 - v * v).sqrt(), 0.0];
        let x = set(&[[1.0, 0.0, 0.0], c(0.9), c(0.7), c(-0.5)]);
        let labels = HardPartition::new(vec![0; 4], 1).unwrap();
        let d = local_density(0, 0, &x, &labels, 2).unwrap();
        assert!((d.rho - 0.8).abs() < 1e-12);
        let all = local_density(0, 0, &x, &labels, 10).unwrap();
        assert!((all.rho - (0.9 + 0.7 - 0.5) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn density_ignores_other_clusters() {
        let x = set(&[[1.0, 0.0, 0.0], [0.99, 0.141, 0.0], [0.0, 0.0, 1.0]]);
        let labels = HardPartition::new(vec![0, 1, 0], 2).unwrap();
        let d = local_density(0, 0, &x, &labels, 1).unwrap();
        assert!(d.rho.abs() < 1e-12);
    }

    fn two_component_theta() -> ModelParams {
        ModelParams::new(vec![
            VmfParams::new(UnitVector::basis(3, 0), 5.0).unwrap(),
            VmfParams::new(UnitVector::basis(3, 1), 2.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn score_certainty_difference() {
        let x = set(&[[1.0, 0.2, 0.0], [1.0, 0.2, 0.0]]);
        let g = Responsibilities::from_rows(&[[0.9, 0.1], [0.5, 0.5]]).unwrap();
        let theta = two_component_theta();
        let cfg = GisConfig::default();
        let a = gis_score(&x, 0, 0, &g, &theta, 0.7, &cfg);
        let b = gis_score(&x, 1, 0, &g, &theta, 0.7, &cfg);
        assert!((a - b - ((0.9f64 + 1e-8).ln() - (0.5f64 + 1e-8).ln())).abs() < 1e-12);
    }

    #[test]
    fn score_beta_behaviour() {
        let x = set(&[[1.0, 0.2, 0.0]]);
        let g = Responsibilities::from_rows(&[[0.9, 0.1]]).unwrap();
        let theta = two_component_theta();
        let one = GisConfig::default();
        let two = GisConfig { beta: 2.0, ..one.clone() };
        assert!(gis_score(&x, 0, 0, &g, &theta, 0.6, &two) < gis_score(&x, 0, 0, &g, &theta, 0.6, &one));
        assert_eq!(gis_score(&x, 0, 0, &g, &theta, -0.3, &one), f64::NEG_INFINITY);
        let zero = GisConfig { beta: 0.0, ..one };
        assert!(gis_score(&x, 0, 0, &g, &theta, -0.3, &zero).is_finite());
    }

    #[test]
    fn beta_zero_ranks_by_alignment() {
        let x = uniform_sphere(3, 60, 4).unwrap();
        let theta = two_component_theta();
        let g = Responsibilities::one_hot(&vec![0; 60], 2).unwrap();
        let cfg = GisConfig { beta: 0.0, s: 60, ..GisConfig::default() };
        let reps = select_representatives(&x, &g, &theta, &cfg).unwrap();
        let mut want: Vec<usize> = (0..60).collect();
        want.sort_by(|&a, &b| x.row(b)[0].total_cmp(&x.row(a)[0]).then(a.cmp(&b)));
        let got: Vec<usize> = reps.per_cluster[0].iter().map(|r| r.0).collect();
        assert_eq!(got, want);
        assert_eq!(reps.empty, vec![1]);
        assert!(reps.per_cluster[1].is_empty());
    }

    #[test]
    fn whole_cluster_when_s_is_large() {
        let x = uniform_sphere(4, 30, 1).unwrap();
        let res = fit(&x, &GemConfig { k: 3, max_iters: 20, ..GemConfig::default() }).unwrap();
        let cfg = GisConfig { s: 100, ..GisConfig::default() };
        let reps = select_representatives(&x, &res.gamma, &res.theta, &cfg).unwrap();
        let total: usize = reps.per_cluster.iter().map(Vec::len).sum();
        assert_eq!(total, 30);
        for list in &reps.per_cluster {
            assert!(list.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }

    #[test]
    fn five_point_top_two() {
        let x = set(&[
            [1.0, 0.0, 0.0],
            [0.9, 0.3, 0.0],
            [0.8, 0.0, 0.5],
            [0.7, -0.6, 0.1],
            [0.95, 0.1, 0.1],
        ]);
        let g = Responsibilities::from_rows(&[[0.9, 0.1], [0.8, 0.2], [0.99, 0.01], [0.6, 0.4], [0.7, 0.3]]).unwrap();
        let theta = two_component_theta();
        let cfg = GisConfig { m: 2, s: 2, ..GisConfig::default() };
        let reps = select_representatives(&x, &g, &theta, &cfg).unwrap();
        // hand table: cosines to the two nearest others, then the three terms
        let mut table: Vec<(usize, f64)> = (0..5)
            .map(|i| {
                let mut c: Vec<f64> = (0..5).filter(|&j| j != i).map(|j| dot(x.row(i), x.row(j))).collect();
                c.sort_by(|a, b| b.total_cmp(a));
                let rho = (c[0] + c[1]) / 2.0;
                let comp = &theta.components[0];
                let s = (g.row(i)[0] + 1e-8).ln()
                    + crate::geometry::vmf_log_density(x.row(i), comp, 3).unwrap()
                    + (rho + 1e-8).ln();
                (i, s)
            })
            .collect();
        table.sort_by(|a, b| b.1.total_cmp(&a.1));
        assert_eq!(reps.per_cluster[0].len(), 2);
        for (got, want) in reps.per_cluster[0].iter().zip(&table) {
            assert_eq!(got.0, want.0);
            assert!((got.1 - want.1).abs() < 1e-12);
        }
    }

    #[test]
    fn prompt_contents() {
        let p = render_prompt(&[(3, "first doc"), (9, "second\ndoc")]);
        assert!(p.contains("2 documents"));
        assert!(p.contains("first doc") && p.contains("second\ndoc"));
        assert!(p.contains("Summary: {summary content}"));
        assert!(p.ends_with("Description: {topic description}\n"));
    }

    #[test]
    fn export_writes_one_file_per_nonempty_cluster() {
        let dir = tempfile::tempdir().unwrap();
        let reps = RepresentativeSet {
            per_cluster: vec![vec![(1, 0.0), (0, -1.0)], vec![]],
            empty: vec![1],
        };
        let texts = ["zero", "one"];
        let paths = export_taxonomy_prompts(&reps, &texts, dir.path()).unwrap();
        assert_eq!(paths, vec![dir.path().join("cluster_000.prompt.txt")]);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(parse_prompt(&text).unwrap(), vec![(1, "one".into()), (0, "zero".into())]);
        assert!(!dir.path().join("cluster_001.prompt.txt").exists());

        let short = ["zero"];
        let other = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_taxonomy_prompts(&reps, &short, other.path()),
            Err(GemError::MissingDocument(1))
        ));
        assert_eq!(std::fs::read_dir(other.path()).unwrap().count(), 0);
    }

    proptest! {
        #[test]
        fn prompt_round_trip(docs in proptest::collection::vec((0usize..10_000, "\\PC*"), 0..6)) {
            let refs: Vec<(usize, &str)> = docs.iter().map(|(i, t)| (*i, t.as_str())).collect();
            let parsed = parse_prompt(&render_prompt(&refs)).unwrap();
            prop_assert_eq!(parsed, docs);
        }

        #[test]
        fn ranking_ignores_per_cluster_constants(seed in 0u64..500, shift in -50.0f64..50.0) {
            let x = uniform_sphere(4, 40, seed).unwrap();
            let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
            let g = Responsibilities::one_hot(&labels, 2).unwrap();
            let mu = normalize(&[1.0, 1.0, 0.0, 0.0]).unwrap();
            let theta = ModelParams::new(vec![
                VmfParams::new(mu.clone(), 3.0).unwrap(),
                VmfParams::new(UnitVector::basis(4, 2), 7.0).unwrap(),
            ]).unwrap();
            let cfg = GisConfig { s: 40, ..GisConfig::default() };
            let mut base = score_all(&x, &g, &theta, &cfg).unwrap();
            let mut moved = base.clone();
            for (k, list) in moved.iter_mut().enumerate() {
                list.iter_mut().for_each(|e| e.1 += shift * (k as f64 + 1.0));
            }
            for (a, b) in base.iter_mut().zip(moved.iter_mut()) {
                rank(a);
                rank(b);
                let ia: Vec<usize> = a.iter().map(|e| e.0).collect();
                let ib: Vec<usize> = b.iter().map(|e| e.0).collect();
                prop_assert_eq!(ia, ib);
            }
        }
    }
}
