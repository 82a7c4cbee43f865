//! Budgeted top-k retrieval over either index backend, and retrieval
//! latency measurement.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::dense_index::{Embedder, VectorStore};
use crate::error::{Error, Result};
use crate::sparse_index::SparseIndex;

pub const DEFAULT_TOKEN_BUDGET: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub total_token_budget: usize,
    pub chunk_size: usize,
}

impl BudgetPolicy {
    pub fn new(total_token_budget: usize, chunk_size: usize) -> Self {
        BudgetPolicy {
            total_token_budget,
            chunk_size,
        }
    }
}

/// Number of passages that fit the budget: `floor(budget / chunk_size)`.
pub fn budget_topk(policy: BudgetPolicy) -> Result<usize> {
    if policy.chunk_size == 0 {
        return Err(Error::Config("chunk_size must be positive".into()));
    }
    if policy.total_token_budget < policy.chunk_size {
        return Err(Error::Config(format!(
            "token budget {} is smaller than chunk size {}",
            policy.total_token_budget, policy.chunk_size
        )));
    }
    Ok(policy.total_token_budget / policy.chunk_size)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[serde(alias = "bm25")]
    SparseBm25,
    Dense,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::SparseBm25 => "bm25",
            Backend::Dense => "dense",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" | "sparse" | "sparse_bm25" => Ok(Backend::SparseBm25),
            "dense" => Ok(Backend::Dense),
            other => Err(Error::Config(format!("unknown retrieval backend {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub backend: Backend,
    pub budget: BudgetPolicy,
    #[serde(default)]
    pub explicit_k: Option<usize>,
    /// Append the answer options to the question when forming the query.
    #[serde(default)]
    pub include_options: bool,
}

impl RetrievalConfig {
    pub fn new(backend: Backend, budget: BudgetPolicy) -> Self {
        RetrievalConfig {
            backend,
            budget,
            explicit_k: None,
            include_options: false,
        }
    }

    pub fn k(&self) -> Result<usize> {
        match self.explicit_k {
            Some(0) => Err(Error::Config("explicit k must be >= 1".into())),
            Some(k) => Ok(k),
            None => budget_topk(self.budget),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub passage: Passage,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub query: String,
    pub items: Vec<RetrievedItem>,
    pub total_tokens: usize,
}

impl RetrievedContext {
    pub fn new(query: impl Into<String>, items: Vec<RetrievedItem>) -> Self {
        let total_tokens = items.iter().map(|i| i.passage.token_count).sum();
        RetrievedContext {
            query: query.into(),
            items,
            total_tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn passage_ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.passage.passage_id.clone()).collect()
    }
}

/// An index the retriever can query.
#[derive(Clone, Copy)]
pub enum IndexHandle<'a> {
    Sparse(&'a SparseIndex),
    Dense {
        store: &'a VectorStore,
        embedder: &'a dyn Embedder,
    },
}

impl<'a> IndexHandle<'a> {
    pub fn backend(&self) -> Backend {
        match self {
            IndexHandle::Sparse(_) => Backend::SparseBm25,
            IndexHandle::Dense { .. } => Backend::Dense,
        }
    }

    pub fn chunk_size(&self) -> usize {
        match self {
            IndexHandle::Sparse(ix) => ix.chunk_size(),
            IndexHandle::Dense { store, .. } => store.chunk_size(),
        }
    }

    pub fn passages(&self) -> &'a PassageStore {
        match self {
            IndexHandle::Sparse(ix) => ix.store(),
            IndexHandle::Dense { store, .. } => store.store(),
        }
    }
}

/// Retrieves the top-k passages for `query`. An empty result is not an
/// error.
pub fn retrieve(query: &str, config: &RetrievalConfig, index: IndexHandle<'_>) -> Result<RetrievedContext> {
    if config.backend != index.backend() {
        return Err(Error::Config(format!(
            "retrieval configured for {} but index is {}",
            config.backend,
            index.backend()
        )));
    }
    if config.budget.chunk_size != index.chunk_size() {
        return Err(Error::Config(format!(
            "index was built with chunk size {} but the budget policy assumes {}",
            index.chunk_size(),
            config.budget.chunk_size
        )));
    }
    let k = config.k()?;
    let hits = match index {
        IndexHandle::Sparse(ix) => ix.search(query, k),
        IndexHandle::Dense { store, embedder } => {
            let q = embedder
                .embed(&[query.to_string()])?
                .pop()
                .ok_or_else(|| Error::Protocol("embedder returned no vector".into()))?;
            // A query with no features has no direction to compare.
            if q.is_zero() {
                Vec::new()
            } else {
                store.search(&q, k)?
            }
        }
    };
    let passages = index.passages();
    let items = hits
        .into_iter()
        .map(|(ord, score)| RetrievedItem {
            passage: passages.get(ord).expect("hit ordinal within store").clone(),
            score,
        })
        .collect();
    Ok(RetrievedContext::new(query, items))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub queries: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub queries_per_second: f64,
}

impl LatencyReport {
    /// Summarizes per-query wall-clock durations in milliseconds.
    /// Percentiles use the nearest-rank method.
    pub fn from_samples(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut sorted = samples_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        let total: f64 = sorted.iter().sum();
        let mean = total / n as f64;
        Some(LatencyReport {
            queries: n,
            mean_ms: mean,
            p50_ms: if n == 1 { mean } else { rank(0.50) },
            p95_ms: rank(0.95),
            queries_per_second: n as f64 * 1000.0 / total.max(1e-6),
        })
    }
}

/// Times `retrieve` alone for each query.
pub fn measure_retrieval_latency(
    queries: &[String],
    config: &RetrievalConfig,
    index: IndexHandle<'_>,
) -> Result<LatencyReport> {
    if queries.is_empty() {
        return Err(Error::Input("latency measurement needs at least one query".into()));
    }
    let mut samples = Vec::with_capacity(queries.len());
    for q in queries {
        let start = Instant::now();
        let ctx = retrieve(q, config, index)?;
        samples.push(start.elapsed().as_secs_f64() * 1000.0);
        std::hint::black_box(ctx);
    }
    Ok(LatencyReport::from_samples(&samples).expect("non-empty samples"))
}
