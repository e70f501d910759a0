//! On-disk formats: binary embeddings, JSON models, label and document files.
//!
//! Every writer goes through [`write_atomic`], so a failed command never
//! leaves a partial file behind.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GemError, Result};
use crate::geometry::{norm, EmbeddingSet};
use crate::inference::{FitResult, GemConfig};
use crate::objective::{ModelParams, Responsibilities};

pub const EMBEDDING_MAGIC: &[u8; 7] = b"GEMEMB1";
pub const EMBEDDING_VERSION: u32 = 1;
const HEADER_LEN: usize = 7 + 4 + 8 + 4 + 1;
const NORM_TOL: f64 = 1e-5;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| GemError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| GemError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| GemError::io(path, e))?;
    tmp.persist(path).map_err(|e| GemError::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GemError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| GemError::Parse(format!("{} is not valid UTF-8", path.display())))
}

/// Raw contents of an embedding file, exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub n: u64,
    pub d: u32,
    pub normalized: bool,
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    pub fn from_set(x: &EmbeddingSet) -> Self {
        EmbeddingFile {
            n: x.n() as u64,
            d: x.d() as u32,
            normalized: true,
            data: x.as_flat().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.push(self.normalized as u8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses and validates a file image.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..7] != EMBEDDING_MAGIC {
            return Err(GemError::BadMagic(origin.to_string()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(GemError::TruncatedPayload {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(7);
        if version != EMBEDDING_VERSION {
            return Err(GemError::Parse(format!("{origin}: unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[11..19].try_into().unwrap());
        let d = u32_at(19);
        let normalized = match bytes[23] {
            0 => false,
            1 => true,
            f => return Err(GemError::Parse(format!("{origin}: bad normalized flag {f}"))),
        };
        let expected = n
            .checked_mul(d as u64)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| GemError::Parse(format!("{origin}: header size overflow")))?;
        let found = (bytes.len() - HEADER_LEN) as u64;
        if found != expected {
            return Err(GemError::TruncatedPayload { expected, found });
        }
        let data: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let file = EmbeddingFile { n, d, normalized, data };
        if normalized {
            file.check_norms()?;
        }
        Ok(file)
    }

    fn check_norms(&self) -> Result<()> {
        if self.d == 0 {
            return Ok(());
        }
        for (row, chunk) in self.data.chunks_exact(self.d as usize).enumerate() {
            let v: Vec<f64> = chunk.iter().map(|&x| x as f64).collect();
            let nrm = norm(&v);
            if !((nrm - 1.0).abs() <= NORM_TOL) {
                return Err(GemError::NormFlagViolation { row, norm: nrm });
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    /// Widens to f64 and normalizes every row.
    pub fn to_set(&self) -> Result<EmbeddingSet> {
        EmbeddingSet::from_flat(self.n as usize, self.d as usize, self.data.iter().map(|&v| v as f64).collect())
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    EmbeddingFile::read(path)?.to_set()
}

pub fn write_embeddings(x: &EmbeddingSet, path: &Path) -> Result<()> {
    EmbeddingFile::from_set(x).write(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iters_run: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub mstep_rejections: usize,
    pub reseeds: usize,
}

/// A fitted model as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
    pub seed: u64,
    pub theta: ModelParams,
    pub fit: FitSummary,
    pub config: GemConfig,
}

impl ModelFile {
    pub const FORMAT: &'static str = "gem-model";

    pub fn new(result: &FitResult, config: &GemConfig) -> Self {
        ModelFile {
            format: Self::FORMAT.into(),
            version: 1,
            k: result.theta.k(),
            d: result.theta.d(),
            lambda: config.lambda,
            seed: config.seed,
            theta: result.theta.clone(),
            fit: FitSummary {
                iters_run: result.iters_run,
                converged: result.converged,
                final_objective: result.final_objective(),
                mstep_rejections: result.mstep_rejections,
                reseeds: result.reseeds,
            },
            config: config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text).map_err(|e| GemError::Parse(format!("model: {e}")))?;
        if m.format != Self::FORMAT || m.version != 1 {
            return Err(GemError::Parse(format!("unsupported model format {} v{}", m.format, m.version)));
        }
        let theta = ModelParams::new(m.theta.components.clone())?;
        if theta.k() != m.k || theta.d() != m.d {
            return Err(GemError::Parse("model header disagrees with its components".into()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// One hard label per line.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse()
                .map_err(|_| GemError::Parse(format!("{}:{}: bad label {l:?}", path.display(), n + 1)))
        })
        .collect()
}

/// TSV of the hard cluster followed by the K responsibilities per point.
pub fn write_assignments(gamma: &Responsibilities, path: &Path) -> Result<()> {
    let mut s = String::from("cluster");
    for k in 0..gamma.k() {
        s.push_str(&format!("\tp{k}"));
    }
    s.push('\n');
    for (row, label) in gamma.rows().zip(gamma.hard_labels()) {
        s.push_str(&label.to_string());
        for p in row {
            s.push('\t');
            s.push_str(&p.to_string());
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

/// Reads the responsibilities back from [`write_assignments`] output.
pub fn read_assignments(path: &Path) -> Result<Responsibilities> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| GemError::Parse(format!("{}: empty", path.display())))?;
    let k = header.split('\t').count().saturating_sub(1);
    let mut data = Vec::new();
    let mut n = 0;
    for (no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != k + 1 {
            return Err(GemError::Parse(format!("{}:{}: expected {} columns", path.display(), no + 2, k + 1)));
        }
        for f in &fields[1..] {
            data.push(
                f.parse::<f64>()
                    .map_err(|_| GemError::Parse(format!("{}:{}: bad value {f:?}", path.display(), no + 2)))?,
            );
        }
        n += 1;
    }
    Responsibilities::from_flat(n, k, data)
}

/// Escapes backslash, tab, newline and carriage return.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_field(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(GemError::Parse(format!("bad escape \\{}", other.map(String::from).unwrap_or_default()))),
        }
    }
    Ok(out)
}

/// Documents, one escaped document per line, aligned with embedding rows.
pub fn write_documents<S: AsRef<str>>(docs: &[S], path: &Path) -> Result<()> {
    let mut s = String::new();
    for d in docs {
        s.push_str(&escape_field(d.as_ref()));
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_documents(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    text.split_terminator('\n').map(unescape_field).collect()
}
