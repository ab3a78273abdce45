//! Frozen word-embedding table keyed by vocabulary id.
//!
//! The table is the external semantic reference: it drives the capped reward
//! `gamma` during training and the pooled-embedding similarity metric.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Upper bound applied to cosine similarity when it is used as a reward.
pub const GAMMA_CAP: f64 = 0.85;

/// Standard deviation of the seeded rows given to tokens without a vector.
pub const FALLBACK_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::invalid("embedding table needs at least one non-empty row"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::RaggedEmbeddings {
                    line: i + 1,
                    found: r.len(),
                    expected: dim,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            dim,
            rows: rows.len(),
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Parses "token f1 ... fm" lines. Returns the dimension (if any row exists)
/// and the first vector seen for each token.
fn parse_embedding_text(text: &str) -> Result<(Option<usize>, HashMap<&str, Vec<f64>>)> {
    let mut dim = None;
    let mut vectors = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad float {p:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected || expected == 0 {
            return Err(Error::RaggedEmbeddings {
                line: lineno + 1,
                found: values.len(),
                expected,
            });
        }
        vectors.entry(token).or_insert(values);
    }
    Ok((dim, vectors))
}

/// Builds a table from embedding-file text. Specials and tokens absent from
/// the text get seeded N(0, 0.01²) rows, drawn in id order. `fallback_dim` is
/// used only when the text holds no vectors.
pub fn embeddings_from_text(
    text: &str,
    vocab: &Vocabulary,
    fallback_dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let (file_dim, vectors) = parse_embedding_text(text)?;
    let dim = file_dim.unwrap_or(fallback_dim);
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, FALLBACK_SCALE).expect("valid normal");
    let mut data = Vec::with_capacity(vocab.size() * dim);
    let mut missing = 0usize;
    for (id, tok) in vocab.tokens().iter().enumerate() {
        match vectors.get(tok.as_str()) {
            Some(v) if id >= NUM_SPECIALS => data.extend_from_slice(v),
            _ => {
                if id >= NUM_SPECIALS {
                    missing += 1;
                }
                data.extend((0..dim).map(|_| normal.sample(&mut rng)));
            }
        }
    }
    if missing > 0 {
        log::debug!("{missing} vocabulary tokens have no embedding; using seeded fallback rows");
    }
    Ok(EmbeddingTable {
        dim,
        rows: vocab.size(),
        data,
    })
}

pub fn load_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    fallback_dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path)?;
    embeddings_from_text(&text, vocab, fallback_dim, seed)
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dims(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(cosine_unchecked(u, v))
}

pub(crate) fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// Reward for proposing `v` in place of `w`: `min(cosine, 0.85)`.
pub fn gamma(w: u32, v: u32, table: &EmbeddingTable) -> f64 {
    cosine_unchecked(table.row(w), table.row(v)).min(GAMMA_CAP)
}

/// The `n` ids most similar to `w`, by descending cosine then ascending id.
pub fn top_similar(w: u32, n: usize, table: &EmbeddingTable) -> Vec<(u32, f64)> {
    let target = table.row(w);
    let mut scored: Vec<(u32, f64)> = (0..table.len() as u32)
        .map(|v| (v, cosine_unchecked(target, table.row(v))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(n);
    scored
}
