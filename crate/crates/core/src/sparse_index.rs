//! Okapi BM25 over an inverted index of passages.
//!
//! Scoring is exhaustive over the posting lists of the query terms:
//!
//! ```text
//! score(q, p) = Σ_{t ∈ q} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·len/avgdl))
//! IDF(t)      = ln((N − df + 0.5) / (df + 0.5) + 1)
//! ```
//!
//! Repeated query terms contribute once per occurrence.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::persist::{ByteReader, ByteWriter, TextHeader};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }

    pub fn idf(&self, n: usize, df: usize) -> f64 {
        let (n, df) = (n as f64, df as f64);
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    pub fn term_weight(&self, tf: u32, len: u32, avgdl: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * len as f64 / avgdl;
        tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub passage_ord: u32,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub passage_count: usize,
    pub avgdl: f64,
    pub vocab_size: usize,
    pub chunk_size: usize,
    pub k1: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseIndex {
    params: Bm25Params,
    tokenizer: Tokenizer,
    chunk_size: usize,
    store: PassageStore,
    lengths: Vec<u32>,
    avgdl: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl SparseIndex {
    /// Builds the index in canonical form: passages are ordered by id, so
    /// the input order does not affect ordinals, scores or the saved bytes.
    pub fn build(
        passages: Vec<Passage>,
        params: Bm25Params,
        tokenizer: Tokenizer,
        chunk_size: usize,
    ) -> Result<Self> {
        params.validate()?;
        if passages.is_empty() {
            return Err(Error::Config("cannot build an index over zero passages".into()));
        }
        let store = PassageStore::new(passages)?;

        let counted: Vec<(u32, HashMap<String, u32>)> = store
            .passages()
            .par_iter()
            .map(|p| {
                let terms = tokenizer.terms(&p.text);
                let mut tf: HashMap<String, u32> = HashMap::new();
                for t in &terms {
                    *tf.entry(t.clone()).or_default() += 1;
                }
                (terms.len() as u32, tf)
            })
            .collect();

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut lengths = Vec::with_capacity(counted.len());
        for (ord, (len, tf)) in counted.into_iter().enumerate() {
            lengths.push(len);
            for (term, term_frequency) in tf {
                postings.entry(term).or_default().push(Posting {
                    passage_ord: ord as u32,
                    term_frequency,
                });
            }
        }
        let avgdl = mean_length(&lengths);
        Ok(SparseIndex {
            params,
            tokenizer,
            chunk_size,
            store,
            lengths,
            avgdl,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn store(&self) -> &PassageStore {
        &self.store
    }

    pub fn passage_length(&self, ord: usize) -> Option<u32> {
        self.lengths.get(ord).copied()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn term_frequency(&self, term: &str, ord: usize) -> u32 {
        let p = self.postings(term);
        p.binary_search_by_key(&(ord as u32), |x| x.passage_ord)
            .map(|i| p[i].term_frequency)
            .unwrap_or(0)
    }

    pub fn stats(&self) -> IndexStats {
        IndexStats {
            passage_count: self.len(),
            avgdl: self.avgdl,
            vocab_size: self.postings.len(),
            chunk_size: self.chunk_size,
            k1: self.params.k1,
            b: self.params.b,
        }
    }

    /// BM25 score of one passage for already-normalized query terms.
    pub fn bm25_score(&self, query_terms: &[String], passage_ord: usize) -> Result<f64> {
        let len = self.passage_length(passage_ord).ok_or_else(|| {
            Error::Lookup(format!(
                "passage ordinal {passage_ord} out of range (N = {})",
                self.len()
            ))
        })?;
        let mut score = 0.0;
        for term in query_terms {
            let tf = self.term_frequency(term, passage_ord);
            if tf > 0 {
                score += self.params.idf(self.len(), self.document_frequency(term))
                    * self.params.term_weight(tf, len, self.avgdl);
            }
        }
        Ok(score)
    }

    /// Top-`k` passages with positive score, by score descending then
    /// ordinal ascending.
    pub fn search(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let terms = self.tokenizer.terms(query);
        self.search_terms(&terms, k)
    }

    pub fn search_terms(&self, query_terms: &[String], k: usize) -> Vec<(usize, f64)> {
        let n = self.len();
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in query_terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.params.idf(n, list.len());
            for p in list {
                let len = self.lengths[p.passage_ord as usize];
                *acc.entry(p.passage_ord).or_default() +=
                    idf * self.params.term_weight(p.term_frequency, len, self.avgdl);
            }
        }
        let hits: Vec<(usize, f64)> = acc
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(o, s)| (o as usize, s))
            .collect();
        top_k(hits, k)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, tokenizer: Tokenizer) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, tokenizer)
            .map_err(|e| match e {
                Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
                other => other,
            })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = TextHeader::new(INDEX_MAGIC, INDEX_VERSION);
        header.set("k1", self.params.k1);
        header.set("b", self.params.b);
        header.set("tokenizer", self.tokenizer);
        header.set("fingerprint", self.tokenizer.fingerprint());
        header.set("chunk_size", self.chunk_size);
        let mut w = ByteWriter::with_header(&header);
        w.u64(self.len() as u64);
        for (p, len) in self.store.passages().iter().zip(&self.lengths) {
            w.u32(*len);
            w.bytes(serde_json::to_string(p).expect("passage serializes").as_bytes());
        }
        w.u64(self.postings.len() as u64);
        for (term, list) in &self.postings {
            w.bytes(term.as_bytes());
            w.u32(list.len() as u32);
            for p in list {
                w.u32(p.passage_ord);
                w.u32(p.term_frequency);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8], tokenizer: Tokenizer) -> Result<Self> {
        let (header, mut r) = ByteReader::with_header(bytes, INDEX_MAGIC, INDEX_VERSION)?;
        let fingerprint: String = header.get("fingerprint")?;
        if fingerprint != tokenizer.fingerprint() {
            return Err(Error::Format(format!(
                "tokenizer fingerprint mismatch: index has {fingerprint:?}, configured {:?}",
                tokenizer.fingerprint()
            )));
        }
        let params = Bm25Params {
            k1: header.get("k1")?,
            b: header.get("b")?,
        };
        params.validate()?;
        let chunk_size: usize = header.get("chunk_size")?;

        let n = r.u64()? as usize;
        let mut passages = Vec::with_capacity(n.min(1 << 20));
        let mut lengths = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            lengths.push(r.u32()?);
            let p: Passage = serde_json::from_slice(r.bytes()?)
                .map_err(|e| Error::Format(format!("bad passage record: {e}")))?;
            if passages.last().is_some_and(|q: &Passage| q.passage_id >= p.passage_id) {
                return Err(Error::Format("passages not in canonical order".into()));
            }
            passages.push(p);
        }
        let store = PassageStore::new(passages)?;
        let vocab = r.u64()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..vocab {
            let term = String::from_utf8(r.bytes()?.to_vec())
                .map_err(|_| Error::Format("term is not utf-8".into()))?;
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(n));
            for _ in 0..count {
                let p = Posting {
                    passage_ord: r.u32()?,
                    term_frequency: r.u32()?,
                };
                if p.passage_ord as usize >= n || p.term_frequency == 0 {
                    return Err(Error::Format(format!("corrupt posting for term {term:?}")));
                }
                if list.last().is_some_and(|q: &Posting| q.passage_ord >= p.passage_ord) {
                    return Err(Error::Format(format!("unsorted postings for term {term:?}")));
                }
                list.push(p);
            }
            postings.insert(term, list);
        }
        r.finish()?;
        let avgdl = mean_length(&lengths);
        Ok(SparseIndex {
            params,
            tokenizer,
            chunk_size,
            store,
            lengths,
            avgdl,
            postings,
        })
    }
}

const INDEX_MAGIC: &str = "MUSERAG-BM25";
const INDEX_VERSION: u32 = 1;

fn mean_length(lengths: &[u32]) -> f64 {
    if lengths.is_empty() {
        return 0.0;
    }
    lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
}

/// Sorts by score descending with ordinal as tie-break and keeps `k`.
pub(crate) fn top_k(mut hits: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k == 0 {
        return Vec::new();
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, cmp);
        hits.truncate(k);
    }
    hits.sort_unstable_by(cmp);
    hits
}
