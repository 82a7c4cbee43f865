//! Exact cosine-similarity search over passage embeddings.
//!
//! Vectors come from an [`Embedder`]: the HTTP embedding service, a
//! precomputed vector file, or the hashing embedder used for hermetic runs.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::http::{post_json, Backoff};
use crate::persist::{ByteReader, ByteWriter, TextHeader};
use crate::sparse_index::top_k;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    fn dot(&self, other: &[f32]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(v: Vec<f32>) -> Self {
        EmbeddingVector(v)
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::Input("cosine similarity of a zero vector".into()));
    }
    Ok((a.dot(&b.0) / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    backend: String,
    chunk_size: usize,
    store: PassageStore,
    vectors: Vec<f32>,
    norms: Vec<f64>,
}

impl VectorStore {
    /// Pairs are reordered into canonical passage order.
    pub fn build(
        entries: Vec<(Passage, EmbeddingVector)>,
        backend: impl Into<String>,
        chunk_size: usize,
    ) -> Result<Self> {
        let dim = entries.first().map(|e| e.1.dim()).unwrap_or(0);
        if entries.is_empty() || dim == 0 {
            return Err(Error::Input("vector store needs at least one non-empty vector".into()));
        }
        let mut entries = entries;
        entries.sort_by(|a, b| a.0.passage_id.cmp(&b.0.passage_id));
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        let mut norms = Vec::with_capacity(entries.len());
        let mut passages = Vec::with_capacity(entries.len());
        for (p, v) in entries {
            if v.dim() != dim {
                return Err(Error::Input(format!(
                    "passage {} has dimension {}, expected {dim}",
                    p.passage_id,
                    v.dim()
                )));
            }
            if v.is_zero() {
                return Err(Error::Input(format!("passage {} has a zero vector", p.passage_id)));
            }
            norms.push(v.norm());
            vectors.extend_from_slice(&v.0);
            passages.push(p);
        }
        Ok(VectorStore {
            dim,
            backend: backend.into(),
            chunk_size,
            store: PassageStore::new(passages)?,
            vectors,
            norms,
        })
    }

    /// Embeds every passage with `embedder`.
    pub fn embed_passages(
        passages: Vec<Passage>,
        embedder: &dyn Embedder,
        chunk_size: usize,
    ) -> Result<Self> {
        let texts: Vec<String> = passages.iter().map(|p| p.text.clone()).collect();
        let vectors = embedder.embed(&texts)?;
        Self::build(passages.into_iter().zip(vectors).collect(), embedder.label(), chunk_size)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn store(&self) -> &PassageStore {
        &self.store
    }

    pub fn vector(&self, ord: usize) -> Option<EmbeddingVector> {
        (ord < self.len()).then(|| EmbeddingVector(self.row(ord).to_vec()))
    }

    fn row(&self, ord: usize) -> &[f32] {
        &self.vectors[ord * self.dim..(ord + 1) * self.dim]
    }

    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<(usize, f64)>> {
        if query.dim() != self.dim {
            return Err(Error::Input(format!(
                "query dimension {} does not match store dimension {}",
                query.dim(),
                self.dim
            )));
        }
        if query.is_zero() {
            return Err(Error::Input("query vector is all zeros".into()));
        }
        let qn = query.norm();
        let hits = (0..self.len())
            .map(|i| {
                let sim = query.dot(self.row(i)) / (qn * self.norms[i]);
                (i, sim.clamp(-1.0, 1.0))
            })
            .collect();
        Ok(top_k(hits, k))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut h = TextHeader::new(VECTOR_MAGIC, VECTOR_VERSION);
        h.set("dim", self.dim);
        h.set("count", self.len());
        h.set("backend", &self.backend);
        h.set("chunk_size", self.chunk_size);
        let mut w = ByteWriter::with_header(&h);
        for (i, p) in self.store.passages().iter().enumerate() {
            w.bytes(serde_json::to_string(p).expect("passage serializes").as_bytes());
            for &v in self.row(i) {
                w.u32(v.to_bits());
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, mut r) = ByteReader::with_header(bytes, VECTOR_MAGIC, VECTOR_VERSION)?;
        let dim: usize = h.get("dim")?;
        let count: usize = h.get("count")?;
        let backend: String = h.get("backend")?;
        let chunk_size: usize = h.get("chunk_size")?;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let p: Passage = serde_json::from_slice(r.bytes()?)
                .map_err(|e| Error::Format(format!("bad passage record: {e}")))?;
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(f32::from_bits(r.u32()?));
            }
            entries.push((p, EmbeddingVector(v)));
        }
        r.finish()?;
        Self::build(entries, backend, chunk_size).map_err(|e| Error::Format(e.to_string()))
    }
}

const VECTOR_MAGIC: &str = "MUSERAG-VEC";
const VECTOR_VERSION: u32 = 1;

/// Turns texts into vectors, one per input, order preserved.
pub trait Embedder: Send + Sync {
    fn label(&self) -> &str;
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingClientConfig {
    /// Base URL; requests go to `{endpoint}/embeddings`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_batch")]
    pub max_batch_size: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_batch() -> usize {
    32
}
fn default_parallelism() -> usize {
    4
}
fn default_retries() -> u32 {
    2
}
fn default_backoff_ms() -> u64 {
    250
}

impl EmbeddingClientConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        EmbeddingClientConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout_secs: default_timeout_secs(),
            max_batch_size: default_batch(),
            parallelism: default_parallelism(),
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_batch_size == 0 {
            return Err(Error::Config("embedding max_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Client for the embedding service: `{model, input: [..]}` in,
/// `{vectors: [[..]]}` out.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    cfg: EmbeddingClientConfig,
}

impl HttpEmbedder {
    pub fn new(cfg: EmbeddingClientConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HttpEmbedder { cfg })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({ "model": self.cfg.model, "input": texts });
        let backoff = Backoff {
            max_retries: self.cfg.max_retries,
            base_delay: Duration::from_millis(self.cfg.backoff_base_ms),
            ..Backoff::default()
        };
        let resp = backoff
            .run(|| {
                post_json(
                    &url,
                    self.cfg.api_key.as_deref(),
                    &body,
                    Duration::from_secs(self.cfg.timeout_secs),
                )
            })
            .map_err(|(e, _)| e)?;
        parse_vectors(&resp, texts.len())
    }
}

fn parse_vectors(resp: &Value, expected: usize) -> Result<Vec<EmbeddingVector>> {
    let rows = resp
        .get("vectors")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Protocol("embedding response lacks a `vectors` array".into()))?;
    if rows.len() != expected {
        return Err(Error::Protocol(format!(
            "embedding service returned {} vectors for {expected} texts",
            rows.len()
        )));
    }
    rows.iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| Error::Protocol("vector is not an array".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .map(|f| f as f32)
                        .ok_or_else(|| Error::Protocol("vector component is not a number".into()))
                })
                .collect::<Result<Vec<f32>>>()
                .map(EmbeddingVector)
        })
        .collect()
}

impl Embedder for HttpEmbedder {
    fn label(&self) -> &str {
        &self.cfg.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Input("no texts to embed".into()));
        }
        let batches: Vec<&[String]> = texts.chunks(self.cfg.max_batch_size).collect();
        let workers = self.cfg.parallelism.max(1);
        let mut results: Vec<Option<Result<Vec<EmbeddingVector>>>> =
            (0..batches.len()).map(|_| None).collect();
        for (wave_idx, wave) in batches.chunks(workers).enumerate() {
            std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|b| s.spawn(move || self.embed_batch(b)))
                    .collect();
                for (j, h) in handles.into_iter().enumerate() {
                    results[wave_idx * workers + j] =
                        Some(h.join().unwrap_or_else(|_| Err(Error::Protocol("embedding worker panicked".into()))));
                }
            });
        }
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r.expect("every batch ran")?);
        }
        if let Some(first) = out.first() {
            let dim = first.dim();
            if out.iter().any(|v| v.dim() != dim) {
                return Err(Error::Protocol("embedding service returned mixed dimensions".into()));
            }
        }
        Ok(out)
    }
}

/// `embed_texts` entry point for a configured service.
pub fn embed_texts(cfg: &EmbeddingClientConfig, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    HttpEmbedder::new(cfg.clone())?.embed(texts)
}

/// Signed feature hashing of lowercased terms into `dim` buckets. Not a
/// semantic model; it gives the dense backend a deterministic offline
/// stand-in.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    tokenizer: Tokenizer,
    label: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize, tokenizer: Tokenizer) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hashing embedder needs dim >= 1".into()));
        }
        Ok(HashingEmbedder {
            dim,
            tokenizer,
            label: format!("hashing-{dim}"),
        })
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0f32; self.dim];
        for term in self.tokenizer.terms(text) {
            let h = fnv1a(term.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        EmbeddingVector(v)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Embedder for HashingEmbedder {
    fn label(&self) -> &str {
        &self.label
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Input("no texts to embed".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
