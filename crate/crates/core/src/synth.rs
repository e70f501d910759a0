//! Synthetic corpora with known structure for tests, benchmarks and the
//! `synth` command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::distill::{PseudoLabeledSet, Record};
use crate::error::{GemError, Result};
use crate::geometry::{normalize, EmbeddingSet, UnitVector, VmfParams};
use crate::geometry::{sample_vmf_with, uniform_sphere_with};

/// Samples `count` points from each component, labelled by component index,
/// then shuffles the rows.
pub fn vmf_mixture(components: &[(VmfParams, usize)], seed: u64) -> Result<(EmbeddingSet, Vec<usize>)> {
    if components.is_empty() {
        return Err(GemError::InvalidInput("mixture needs at least one component".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = components[0].0.dim();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (j, (p, count)) in components.iter().enumerate() {
        if p.dim() != d {
            return Err(GemError::DimensionMismatch {
                expected: d,
                got: p.dim(),
            });
        }
        if *count == 0 {
            continue;
        }
        let s = sample_vmf_with(p, *count, &mut rng)?;
        rows.extend(s.rows().map(|r| (r.to_vec(), j)));
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|r| r.1).collect();
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    Ok((EmbeddingSet::from_flat(flat.len() / d, d, flat)?, labels))
}

/// `k` components with mutually orthogonal means (basis vectors after a
/// seeded random rotation), equal weights and a shared concentration.
pub fn separated_mixture(k: usize, d: usize, kappa: f64, n: usize, seed: u64) -> Result<(EmbeddingSet, Vec<usize>)> {
    if k == 0 || k > d {
        return Err(GemError::InvalidInput(format!("need 1 <= K <= d, got K={k}, d={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let axes = random_orthonormal(d, k, &mut rng);
    let comps = axes
        .into_iter()
        .enumerate()
        .map(|(j, mu)| Ok((VmfParams::new(mu, kappa)?, n / k + usize::from(j < n % k))))
        .collect::<Result<Vec<_>>>()?;
    vmf_mixture(&comps, seed)
}

/// `k` orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn random_orthonormal<R: Rng>(d: usize, k: usize, rng: &mut R) -> Vec<UnitVector> {
    let mut out: Vec<UnitVector> = Vec::with_capacity(k);
    while out.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &out {
            let proj = crate::geometry::dot(&v, u.as_slice());
            v.iter_mut().zip(u.as_slice()).for_each(|(a, b)| *a -= proj * b);
        }
        if let Ok(u) = normalize(&v) {
            out.push(u);
        }
    }
    out
}

/// Layout of the collapse-stress corpus: one large cap holding
/// `giant_share` of the points plus `small_caps` small caps, all tilted
/// toward a common axis so they crowd into a narrow cone.
#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropicConfig {
    pub n: usize,
    pub d: usize,
    pub small_caps: usize,
    pub giant_share: f64,
    pub giant_kappa: f64,
    pub small_kappa: f64,
    /// Weight of the shared cone axis in every component mean.
    pub cone: f64,
}

impl Default for AnisotropicConfig {
    fn default() -> Self {
        AnisotropicConfig {
            n: 3000,
            d: 16,
            small_caps: 7,
            giant_share: 0.7,
            giant_kappa: 100.0,
            small_kappa: 100.0,
            cone: 3.0,
        }
    }
}

pub fn anisotropic_corpus(cfg: &AnisotropicConfig, seed: u64) -> Result<(EmbeddingSet, Vec<usize>)> {
    let caps = cfg.small_caps + 1;
    if caps + 1 > cfg.d {
        return Err(GemError::InvalidInput("dimension too small for the cap layout".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa150);
    let axes = random_orthonormal(cfg.d, caps + 1, &mut rng);
    let cone = axes[0].as_slice();
    let giant = (cfg.n as f64 * cfg.giant_share).round() as usize;
    let rest = cfg.n - giant;
    let mut comps = Vec::with_capacity(caps);
    for (j, axis) in axes[1..].iter().enumerate() {
        let mean: Vec<f64> = cone.iter().zip(axis.as_slice()).map(|(c, a)| cfg.cone * c + a).collect();
        let mu = normalize(&mean)?;
        let (kappa, count) = if j == 0 {
            (cfg.giant_kappa, giant)
        } else {
            let s = j - 1;
            (cfg.small_kappa, rest / cfg.small_caps + usize::from(s < rest % cfg.small_caps))
        };
        comps.push((VmfParams::new(mu, kappa)?, count));
    }
    vmf_mixture(&comps, seed)
}

/// Appends `count` uniform points, labelled `noise_label`, and shuffles.
pub fn with_uniform_noise(
    x: &EmbeddingSet,
    labels: &[usize],
    count: usize,
    noise_label: usize,
    seed: u64,
) -> Result<(EmbeddingSet, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = uniform_sphere_with(x.d(), count.max(1), &mut rng)?;
    let mut rows: Vec<(Vec<f64>, usize)> = x.rows().map(|r| r.to_vec()).zip(labels.iter().copied()).collect();
    rows.extend(noise.rows().take(count).map(|r| (r.to_vec(), noise_label)));
    rows.shuffle(&mut rng);
    let d = x.d();
    let labels = rows.iter().map(|r| r.1).collect();
    let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    Ok((EmbeddingSet::from_flat(flat.len() / d, d, flat)?, labels))
}

/// Documents drawn from topic vocabularies with shared noise words, and a
/// bag-of-word-vectors embedding for each.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCorpusConfig {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub words_per_topic: usize,
    pub shared_words: usize,
    /// Probability that a token comes from the shared vocabulary.
    pub noise_rate: f64,
    pub doc_len: usize,
    pub d: usize,
    /// Spread of word vectors around their topic direction, per topic
    /// (cycled when shorter than `topics`).
    pub word_spread: Vec<f64>,
    /// Weight of a common direction added to every embedding.
    pub cone: f64,
}

impl Default for TextCorpusConfig {
    fn default() -> Self {
        TextCorpusConfig {
            topics: 6,
            docs_per_topic: 200,
            words_per_topic: 40,
            shared_words: 60,
            noise_rate: 0.6,
            doc_len: 30,
            d: 32,
            word_spread: vec![0.3, 1.5],
            cone: 3.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextCorpus {
    pub docs: Vec<String>,
    pub topics: Vec<usize>,
    pub k: usize,
    pub embeddings: EmbeddingSet,
}

fn word(prefix: &str, t: usize, w: usize) -> String {
    format!("{prefix}{t}w{w}")
}

pub fn topic_texts(cfg: &TextCorpusConfig, seed: u64) -> Result<TextCorpus> {
    if cfg.topics == 0 || cfg.words_per_topic == 0 || cfg.doc_len == 0 || cfg.docs_per_topic == 0 {
        return Err(GemError::InvalidInput("text corpus needs topics, words and documents".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) || (cfg.noise_rate > 0.0 && cfg.shared_words == 0) {
        return Err(GemError::InvalidInput("noise rate needs a shared vocabulary".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d;
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
    let cone = normalize(&gauss(&mut rng))?;
    let spread = |t: usize| cfg.word_spread.get(t % cfg.word_spread.len().max(1)).copied().unwrap_or(0.5);

    let mut topic_vecs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.topics);
    for t in 0..cfg.topics {
        let dir = normalize(&gauss(&mut rng))?;
        let s = spread(t) / (d as f64).sqrt();
        topic_vecs.push(
            (0..cfg.words_per_topic)
                .map(|_| dir.as_slice().iter().zip(gauss(&mut rng)).map(|(m, g)| m + s * g).collect())
                .collect(),
        );
    }
    let shared_vecs: Vec<Vec<f64>> = (0..cfg.shared_words)
        .map(|_| gauss(&mut rng).into_iter().map(|g| g / (d as f64).sqrt()).collect())
        .collect();

    let mut items: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for t in 0..cfg.topics {
        for _ in 0..cfg.docs_per_topic {
            let mut tokens = Vec::with_capacity(cfg.doc_len);
            let mut emb: Vec<f64> = cone.as_slice().iter().map(|c| cfg.cone * c).collect();
            for _ in 0..cfg.doc_len {
                let (tok, v) = if rng.random::<f64>() < cfg.noise_rate {
                    let w = rng.random_range(0..cfg.shared_words);
                    (word("s", 0, w), &shared_vecs[w])
                } else {
                    let w = rng.random_range(0..cfg.words_per_topic);
                    (word("t", t, w), &topic_vecs[t][w])
                };
                tokens.push(tok);
                emb.iter_mut().zip(v).for_each(|(e, v)| *e += v / cfg.doc_len as f64);
            }
            items.push((tokens.join(" "), t, emb));
        }
    }
    items.shuffle(&mut rng);
    let n = items.len();
    let mut docs = Vec::with_capacity(n);
    let mut topics = Vec::with_capacity(n);
    let mut flat = Vec::with_capacity(n * d);
    for (doc, t, e) in items {
        docs.push(doc);
        topics.push(t);
        flat.extend(e);
    }
    Ok(TextCorpus {
        docs,
        topics,
        k: cfg.topics,
        embeddings: EmbeddingSet::from_flat(n, d, flat)?,
    })
}

/// Two classes with disjoint vocabularies ("alpha…" and "beta…" words).
pub fn separable_toy(n: usize, seed: u64) -> PseudoLabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|doc| {
            let label = doc % 2;
            let stem = if label == 0 { "alpha" } else { "beta" };
            let len = rng.random_range(3..10);
            let text: Vec<String> = (0..len).map(|_| format!("{stem}{}", rng.random_range(0..20))).collect();
            Record {
                doc,
                text: text.join(" "),
                label,
            }
        })
        .collect();
    PseudoLabeledSet { records, k: 2 }
}
