//! Dense retrieval over edit statements by exact dot-product scan.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::RetrievalError;
use crate::knowledge::EditMemory;

pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError>;

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop().ok_or_else(|| RetrievalError::Embedder {
            name: self.name().to_string(),
            reason: "no vector returned".into(),
        })
    }
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "have", "in", "into",
    "is", "it", "its", "of", "on", "or", "that", "the", "to", "was", "were", "which", "who",
    "with",
];

/// Squared weight of identifier-like tokens (containing a digit or `_`).
pub const IDENTIFIER_WEIGHT_SQ: f64 = 0.45;
/// Squared weight of other non-stopword tokens.
pub const WORD_WEIGHT_SQ: f64 = 0.7;

/// Deterministic hashed bag-of-words embedder.
///
/// Text is lowercased and split into runs of alphanumerics and underscores;
/// stopwords are dropped. Each remaining token is spread over `probes`
/// distinct signed buckets with magnitude `w / sqrt(probes)`, so a token's
/// self dot product is exactly `w²` and cross-token collisions add small
/// zero-mean noise. Vectors are not normalized: scores grow with the number
/// of shared tokens.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    probes: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 1024;
    pub const DEFAULT_PROBES: usize = 8;

    pub fn new(dim: usize, probes: usize) -> Self {
        assert!(dim > 0 && probes > 0 && probes <= dim, "invalid hash embedder shape");
        HashEmbedder { dim, probes }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !STOPWORDS.contains(&t.as_str()))
    }

    fn weight(token: &str) -> f64 {
        if token.chars().any(|c| c.is_ascii_digit() || c == '_') {
            IDENTIFIER_WEIGHT_SQ.sqrt()
        } else {
            WORD_WEIGHT_SQ.sqrt()
        }
    }

    fn buckets(&self, token: &str) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.probes);
        let mut round = 0u32;
        while out.len() < self.probes {
            let digest = Sha256::new()
                .chain_update(token.as_bytes())
                .chain_update(round.to_le_bytes())
                .finalize();
            for chunk in digest.chunks_exact(4) {
                let v = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                let bucket = (v >> 1) as usize % self.dim;
                if out.len() < self.probes && !out.iter().any(|(b, _)| *b == bucket) {
                    out.push((bucket, if v & 1 == 0 { 1.0 } else { -1.0 }));
                }
            }
            round += 1;
        }
        out
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let scale = (self.probes as f64).sqrt();
        for token in Self::tokens(text) {
            let w = Self::weight(&token) / scale;
            for (bucket, sign) in self.buckets(&token) {
                v[bucket] += sign * w;
            }
        }
        v
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(Self::DEFAULT_DIM, Self::DEFAULT_PROBES)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Embeddings from an HTTP endpoint: `POST {input: [texts]}` answered by
/// `{vectors: [[..]]}` (an OpenAI-style `{data: [{embedding}]}` also parses).
pub struct RemoteEmbedder {
    url: String,
    dim: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, api_key: Option<String>) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| RetrievalError::Embedder {
                name: "remote".into(),
                reason: e.to_string(),
            })?;
        Ok(RemoteEmbedder {
            url: url.into(),
            dim,
            api_key,
            client,
        })
    }

    fn fail(reason: impl ToString) -> RetrievalError {
        RetrievalError::Embedder {
            name: "remote".into(),
            reason: reason.to_string(),
        }
    }
}

pub fn parse_vectors(body: &Value) -> Option<Vec<Vec<f64>>> {
    let rows: Vec<&Value> = if let Some(v) = body.get("vectors").and_then(Value::as_array) {
        v.iter().collect()
    } else {
        body.get("data")?
            .as_array()?
            .iter()
            .map(|d| d.get("embedding"))
            .collect::<Option<Vec<_>>>()?
    };
    rows.into_iter()
        .map(|row| row.as_array()?.iter().map(Value::as_f64).collect())
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &str {
        "remote"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        let mut req = self.client.post(&self.url).json(&json!({ "input": texts }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(Self::fail)?;
        if !resp.status().is_success() {
            return Err(Self::fail(format!("HTTP {}", resp.status())));
        }
        let body: Value = resp.json().map_err(Self::fail)?;
        let vectors = parse_vectors(&body).ok_or_else(|| Self::fail("malformed reply"))?;
        if vectors.len() != texts.len() {
            return Err(Self::fail(format!(
                "{} vectors for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != self.dim) {
            return Err(RetrievalError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(vectors)
    }
}

/// Vectors looked up from a fixture map keyed by whitespace-normalized text.
/// Unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedEmbedder {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

fn norm_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ScriptedEmbedder {
    pub fn new(dim: usize) -> Self {
        ScriptedEmbedder {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<(), RetrievalError> {
        if vector.len() != self.dim {
            return Err(RetrievalError::Dimension {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.vectors.insert(norm_key(text), vector);
        Ok(())
    }

    /// Reads a `{text: vector}` JSON map; all vectors must share one length.
    pub fn from_json(json: &str) -> Result<Self, RetrievalError> {
        let map: HashMap<String, Vec<f64>> = serde_json::from_str(json).map_err(|e| RetrievalError::Embedder {
            name: "scripted".into(),
            reason: e.to_string(),
        })?;
        let dim = map.values().next().map_or(0, Vec::len);
        let mut out = ScriptedEmbedder::new(dim);
        for (text, v) in map {
            out.insert(&text, v)?;
        }
        Ok(out)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path).map_err(|e| RetrievalError::Embedder {
            name: "scripted".into(),
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }
}

impl Embedder for ScriptedEmbedder {
    fn name(&self) -> &str {
        "scripted"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, RetrievalError> {
        texts
            .iter()
            .map(|t| {
                self.vectors.get(&norm_key(t)).cloned().ok_or_else(|| RetrievalError::Embedder {
                    name: "scripted".into(),
                    reason: format!("no vector for {t:?}"),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub edit_index: usize,
    pub score: f64,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One vector per memory statement, in memory order.
#[derive(Debug, Clone, Default)]
pub struct EditIndex {
    vectors: Vec<Vec<f64>>,
}

impl EditIndex {
    pub fn build(memory: &EditMemory, embedder: &dyn Embedder) -> Result<Self, RetrievalError> {
        if memory.is_empty() {
            return Ok(EditIndex::default());
        }
        let statements: Vec<String> = memory.statements().map(str::to_string).collect();
        Ok(EditIndex {
            vectors: embedder.embed_batch(&statements)?,
        })
    }

    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Self {
        EditIndex { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Top-`k` statements by dot product, ties broken by ascending index.
    pub fn search_vector(&self, query: &[f64], k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k < 2 {
            return Err(RetrievalError::KTooSmall(k));
        }
        if let Some(first) = self.vectors.first() {
            if first.len() != query.len() {
                return Err(RetrievalError::Dimension {
                    expected: first.len(),
                    got: query.len(),
                });
            }
        }
        let mut hits: Vec<RetrievalHit> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(edit_index, v)| RetrievalHit {
                edit_index,
                score: dot(query, v),
            })
            .collect();
        hits.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.edit_index.cmp(&b.edit_index))
        });
        hits.truncate(k);
        Ok(hits)
    }

    pub fn search(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if query.trim().is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        if k < 2 {
            return Err(RetrievalError::KTooSmall(k));
        }
        if self.is_empty() {
            return Ok(Vec::new());
        }
        self.search_vector(&embedder.embed(query)?, k)
    }
}

/// Prepends the most recently filled entity to a tag-stripped step.
pub fn build_query(step_text_stripped: &str, prev_entity: Option<&str>) -> Result<String, RetrievalError> {
    let step = step_text_stripped.trim();
    if step.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    Ok(match prev_entity.map(str::trim).filter(|e| !e.is_empty()) {
        Some(entity) => format!("{entity} {step}"),
        None => step.to_string(),
    })
}
