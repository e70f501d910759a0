//! Distilling a partition into a hashed n-gram linear text classifier.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::error::{GemError, Result};
use crate::geometry::EmbeddingSet;
use crate::gis::{top_by_gis, GisConfig};
use crate::io::{escape_field, unescape_field, write_atomic};
use crate::metrics::HardPartition;
use crate::objective::{argmax, softmax_in_place, ModelParams, Responsibilities};

pub const STUDENT_MAGIC: &[u8; 7] = b"GEMSTU1";
pub const DEFAULT_BUCKETS: u32 = 1 << 21;

/// How text is turned into hashed features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub buckets: u32,
    /// Longest word n-gram emitted (2 = unigrams and bigrams).
    pub ngram_max: u32,
    pub hash_seed: u32,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            buckets: DEFAULT_BUCKETS,
            ngram_max: 2,
            hash_seed: 0,
        }
    }
}

/// Sparse ℓ₂-normalized feature vector with sorted, distinct indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Lowercased whitespace tokens, word n-grams up to `ngram_max`, hashed
/// into `buckets` with counts as values, then ℓ₂-normalized.
pub fn featurize(text: &str, spec: &FeatureSpec) -> SparseVec {
    let lower = text.to_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    let mut hashed: Vec<u32> = Vec::new();
    let seed = spec.hash_seed as u64;
    for n in 1..=spec.ngram_max as usize {
        for gram in tokens.windows(n) {
            let key = gram.join(" ");
            hashed.push((xxh3_64_with_seed(key.as_bytes(), seed) % spec.buckets as u64) as u32);
        }
    }
    if hashed.is_empty() {
        return SparseVec::default();
    }
    hashed.sort_unstable();
    let mut out = SparseVec::default();
    for h in hashed {
        if out.indices.last() == Some(&h) {
            *out.values.last_mut().unwrap() += 1.0;
        } else {
            out.indices.push(h);
            out.values.push(1.0);
        }
    }
    let nrm = out.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    out.values.iter_mut().for_each(|v| *v /= nrm);
    out
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Index of the source document in the corpus.
    pub doc: usize,
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub records: Vec<Record>,
    pub k: usize,
}

impl PseudoLabeledSet {
    pub fn new(records: Vec<Record>, k: usize) -> Result<Self> {
        if let Some(r) = records.iter().find(|r| r.label >= k) {
            return Err(GemError::InvalidInput(format!("label {} >= K={k}", r.label)));
        }
        Ok(PseudoLabeledSet { records, k })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for r in &self.records {
            c[r.label] += 1;
        }
        c
    }

    /// Train / validation / test by `ratio`, in the current record order.
    pub fn split(&self, ratio: [usize; 3]) -> (Self, Self, Self) {
        let total: usize = ratio.iter().sum();
        let n = self.records.len();
        let a = n * ratio[0] / total;
        let b = a + n * ratio[1] / total;
        let part = |r: &[Record]| PseudoLabeledSet {
            records: r.to_vec(),
            k: self.k,
        };
        (part(&self.records[..a]), part(&self.records[a..b]), part(&self.records[b..]))
    }

    /// Writes `label<TAB>text` lines with escaped text.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&format!("{}\t{}\n", r.label, escape_field(&r.text)));
        }
        write_atomic(path, s.as_bytes())
    }

    /// Reads a TSV dataset; `k = None` takes `max(label) + 1`.
    pub fn read_tsv(path: &Path, k: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GemError::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in text.split_terminator('\n').enumerate() {
            let (label, body) = line
                .split_once('\t')
                .ok_or_else(|| GemError::Parse(format!("{}:{}: missing tab", path.display(), n + 1)))?;
            let label = label
                .parse()
                .map_err(|_| GemError::Parse(format!("{}:{}: bad label {label:?}", path.display(), n + 1)))?;
            records.push(Record {
                doc: n,
                text: unescape_field(body)?,
                label,
            });
        }
        let k = k.unwrap_or_else(|| records.iter().map(|r| r.label + 1).max().unwrap_or(1));
        Self::new(records, k)
    }
}

fn gather<S: AsRef<str>>(picks: Vec<(usize, usize)>, texts: &[S], k: usize, seed: u64) -> Result<PseudoLabeledSet> {
    let mut records = picks
        .into_iter()
        .map(|(doc, label)| {
            let text = texts.get(doc).ok_or(GemError::MissingDocument(doc))?.as_ref().to_string();
            Ok(Record { doc, text, label })
        })
        .collect::<Result<Vec<_>>>()?;
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    PseudoLabeledSet::new(records, k)
}

/// The `m_distill` highest-GIS members of every cluster, shuffled by `seed`.
pub fn build_pseudo_labeled<S: AsRef<str>>(
    theta: &ModelParams,
    gamma: &Responsibilities,
    x: &EmbeddingSet,
    texts: &[S],
    m_distill: usize,
    gis: &GisConfig,
    seed: u64,
) -> Result<PseudoLabeledSet> {
    if m_distill == 0 {
        return Err(GemError::InvalidConfig("M_distill must be >= 1".into()));
    }
    let reps = top_by_gis(x, gamma, theta, gis, m_distill)?;
    let picks = reps
        .per_cluster
        .iter()
        .enumerate()
        .flat_map(|(k, list)| list.iter().map(move |&(i, _)| (i, k)))
        .collect();
    gather(picks, texts, theta.k(), seed)
}

/// Up to `per_class` uniformly drawn members of every cluster.
pub fn balanced_sample<S: AsRef<str>>(labels: &HardPartition, texts: &[S], per_class: usize, seed: u64) -> Result<PseudoLabeledSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = Vec::new();
    for (k, mut members) in labels.members().into_iter().enumerate() {
        members.shuffle(&mut rng);
        members.truncate(per_class);
        members.sort_unstable();
        picks.extend(members.into_iter().map(|i| (i, k)));
    }
    gather(picks, texts, labels.k(), seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Hashed-feature multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub spec: FeatureSpec,
    pub k: usize,
    pub bias: Vec<f32>,
    /// `buckets × k`, row-major.
    pub weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set after each epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.1,
            seed: 0,
        }
    }
}

impl StudentModel {
    fn zeros(spec: FeatureSpec, k: usize) -> Self {
        StudentModel {
            spec,
            k,
            bias: vec![0.0; k],
            weights: vec![0.0; spec.buckets as usize * k],
        }
    }

    fn scores(&self, f: &SparseVec) -> Vec<f64> {
        let k = self.k;
        let mut s: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for (&i, &v) in f.indices.iter().zip(&f.values) {
            let row = &self.weights[i as usize * k..(i as usize + 1) * k];
            s.iter_mut().zip(row).for_each(|(s, &w)| *s += v * w as f64);
        }
        s
    }

    fn proba(&self, f: &SparseVec) -> Vec<f64> {
        let mut s = self.scores(f);
        softmax_in_place(&mut s);
        s
    }

    /// Class distribution and argmax for one document.
    pub fn predict(&self, text: &str) -> (Vec<f64>, usize) {
        let p = self.proba(&featurize(text, &self.spec));
        let k = argmax(&p);
        (p, k)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(7 + 16 + 4 * (self.bias.len() + self.weights.len()));
        out.extend_from_slice(STUDENT_MAGIC);
        for v in [self.spec.buckets, self.k as u32, self.spec.ngram_max, self.spec.hash_seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.bias.iter().chain(&self.weights) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..7] != STUDENT_MAGIC {
            return Err(GemError::BadMagic(origin.to_string()));
        }
        if bytes.len() < 23 {
            return Err(GemError::TruncatedPayload {
                expected: 23,
                found: bytes.len() as u64,
            });
        }
        let u = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let spec = FeatureSpec {
            buckets: u(7),
            ngram_max: u(15),
            hash_seed: u(19),
        };
        let k = u(11) as usize;
        if spec.buckets == 0 || k == 0 {
            return Err(GemError::Parse(format!("{origin}: empty model shape")));
        }
        let floats = k as u64 * (spec.buckets as u64 + 1);
        let expected = 23 + 4 * floats;
        if bytes.len() as u64 != expected {
            return Err(GemError::TruncatedPayload {
                expected,
                found: bytes.len() as u64,
            });
        }
        let mut vals = bytes[23..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let bias: Vec<f32> = vals.by_ref().take(k).collect();
        let weights: Vec<f32> = vals.collect();
        Ok(StudentModel { spec, k, bias, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GemError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn mean_loss(m: &StudentModel, feats: &[SparseVec], labels: &[usize]) -> f64 {
    let parts: Vec<f64> = feats
        .par_iter()
        .zip(labels)
        .map(|(f, &y)| -m.proba(f)[y].max(f64::MIN_POSITIVE).ln())
        .collect();
    parts.iter().sum::<f64>() / feats.len() as f64
}

/// Plain SGD on cross-entropy with a linearly decaying learning rate.
pub fn train_student(ds: &PseudoLabeledSet, spec: FeatureSpec, cfg: &TrainConfig) -> Result<(StudentModel, TrainReport)> {
    if spec.buckets == 0 || spec.ngram_max == 0 {
        return Err(GemError::InvalidConfig("buckets and n-gram order must be >= 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || cfg.epochs == 0 {
        return Err(GemError::InvalidConfig("lr must be > 0 and epochs >= 1".into()));
    }
    if ds.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(GemError::SingleClass);
    }
    let feats: Vec<SparseVec> = ds.records.par_iter().map(|r| featurize(&r.text, &spec)).collect();
    let labels: Vec<usize> = ds.records.iter().map(|r| r.label).collect();
    let k = ds.k;
    let mut model = StudentModel::zeros(spec, k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let total = (cfg.epochs * feats.len()) as f64;
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let lr = cfg.lr * (1.0 - step as f64 / total);
            step += 1;
            let f = &feats[i];
            let mut g = model.proba(f);
            g[labels[i]] -= 1.0;
            for (b, gk) in model.bias.iter_mut().zip(&g) {
                *b = (*b as f64 - lr * gk) as f32;
            }
            for (&idx, &v) in f.indices.iter().zip(&f.values) {
                let row = &mut model.weights[idx as usize * k..(idx as usize + 1) * k];
                for (w, gk) in row.iter_mut().zip(&g) {
                    *w = (*w as f64 - lr * v * gk) as f32;
                }
            }
        }
        trace.push(mean_loss(&model, &feats, &labels));
    }
    Ok((model, TrainReport { loss_trace: trace }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_student(m: &StudentModel, held_out: &PseudoLabeledSet) -> Result<Evaluation> {
    if held_out.is_empty() {
        return Err(GemError::EmptySet);
    }
    if held_out.k > m.k {
        return Err(GemError::SizeMismatch {
            left: held_out.k,
            right: m.k,
        });
    }
    let preds: Vec<usize> = held_out.records.par_iter().map(|r| m.predict(&r.text).1).collect();
    let mut confusion = vec![vec![0; m.k]; m.k];
    let mut hits = 0;
    for (r, &p) in held_out.records.iter().zip(&preds) {
        confusion[r.label][p] += 1;
        hits += (r.label == p) as usize;
    }
    Ok(Evaluation {
        accuracy: hits as f64 / held_out.len() as f64,
        confusion,
    })
}
