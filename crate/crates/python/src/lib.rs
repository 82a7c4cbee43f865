//! Python bindings for the `muserag` core crate.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use muserag::corpus::{self, ChunkConfig, Chunker, PassageFileHeader, PassageStore};
use muserag::dense_index::{HashingEmbedder, VectorStore};
use muserag::evaluation::{self, EvalMode, EvalSetup};
use muserag::finetune_export::{self, ExportStyle};
use muserag::generation::{self, MockGenerator, PromptTemplate};
use muserag::retrieval::{self, Backend, BudgetPolicy, IndexHandle, RetrievalConfig};
use muserag::sparse_index::{Bm25Params, SparseIndex};
use muserag::tokenizer::Tokenizer;
use muserag::{benchgen, Error};

create_exception!(muserag_py, MuseragError, PyException);

fn err(e: Error) -> PyErr {
    MuseragError::new_err(format!("{}: {e}", e.code()))
}

fn tokenizer(name: &str) -> PyResult<Tokenizer> {
    name.parse().map_err(err)
}

/// A passage as returned by searches.
#[pyclass(frozen, get_all, skip_from_py_object, module = "muserag_py")]
#[derive(Clone)]
pub struct Passage {
    passage_id: String,
    doc_id: String,
    title: String,
    section_heading: String,
    text: String,
    token_count: usize,
    token_offset: usize,
}

impl From<&corpus::Passage> for Passage {
    fn from(p: &corpus::Passage) -> Self {
        Passage {
            passage_id: p.passage_id.clone(),
            doc_id: p.doc_id.clone(),
            title: p.title.clone(),
            section_heading: p.section_heading.clone(),
            text: p.text.clone(),
            token_count: p.token_count,
            token_offset: p.token_offset,
        }
    }
}

#[pymethods]
impl Passage {
    fn __repr__(&self) -> String {
        format!("Passage({:?}, {} tokens)", self.passage_id, self.token_count)
    }
}

/// BM25 index over a passage file.
#[pyclass(frozen, name = "SparseIndex", module = "muserag_py")]
pub struct PySparseIndex {
    inner: SparseIndex,
}

#[pymethods]
impl PySparseIndex {
    #[staticmethod]
    #[pyo3(signature = (passages, k1 = 1.2, b = 0.75))]
    fn build(passages: PathBuf, k1: f64, b: f64) -> PyResult<Self> {
        let (h, ps) = corpus::read_passages(&passages).map_err(err)?;
        let inner = SparseIndex::build(ps, Bm25Params { k1, b }, h.tokenizer, h.chunk_size).map_err(err)?;
        Ok(PySparseIndex { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, tokenizer = "unicode_word"))]
    fn load(path: PathBuf, tokenizer: &str) -> PyResult<Self> {
        let inner = SparseIndex::load(&path, self::tokenizer(tokenizer)?).map_err(err)?;
        Ok(PySparseIndex { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn avgdl(&self) -> f64 {
        self.inner.avgdl()
    }

    #[getter]
    fn chunk_size(&self) -> usize {
        self.inner.chunk_size()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.stats().vocab_size
    }

    /// Top-k `(passage_id, score)` pairs.
    fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        let store = self.inner.store();
        self.inner
            .search(query, k)
            .into_iter()
            .map(|(ord, s)| (store.get(ord).expect("hit in store").passage_id.clone(), s))
            .collect()
    }

    fn score(&self, query: &str, passage_id: &str) -> PyResult<f64> {
        let ord = self
            .inner
            .store()
            .ord_of(passage_id)
            .ok_or_else(|| err(Error::Lookup(format!("unknown passage {passage_id:?}"))))?;
        self.inner
            .bm25_score(&self.inner.tokenizer().terms(query), ord)
            .map_err(err)
    }

    fn passage(&self, passage_id: &str) -> Option<Passage> {
        self.inner.store().by_id(passage_id).map(Passage::from)
    }

    /// Budgeted retrieval: `k = budget // chunk_size` passages.
    #[pyo3(signature = (query, budget = 1024))]
    fn retrieve(&self, query: &str, budget: usize) -> PyResult<Vec<(Passage, f64)>> {
        let cfg = RetrievalConfig::new(Backend::SparseBm25, BudgetPolicy::new(budget, self.inner.chunk_size()));
        let ctx = retrieval::retrieve(query, &cfg, IndexHandle::Sparse(&self.inner)).map_err(err)?;
        Ok(ctx.items.iter().map(|i| (Passage::from(&i.passage), i.score)).collect())
    }
}

/// Exact cosine vector store embedded with the offline hashing embedder.
#[pyclass(frozen, name = "HashingVectorStore", module = "muserag_py")]
pub struct PyVectorStore {
    inner: VectorStore,
    embedder: HashingEmbedder,
}

#[pymethods]
impl PyVectorStore {
    #[staticmethod]
    #[pyo3(signature = (passages, dim = 256))]
    fn build(passages: PathBuf, dim: usize) -> PyResult<Self> {
        let (h, ps) = corpus::read_passages(&passages).map_err(err)?;
        let embedder = HashingEmbedder::new(dim, h.tokenizer).map_err(err)?;
        let inner = VectorStore::embed_passages(ps, &embedder, h.chunk_size).map_err(err)?;
        Ok(PyVectorStore { inner, embedder })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn search(&self, query: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        let q = self.embedder.embed_one(query);
        if q.is_zero() {
            return Ok(Vec::new());
        }
        let store = self.inner.store();
        Ok(self
            .inner
            .search(&q, k)
            .map_err(err)?
            .into_iter()
            .map(|(ord, s)| (store.get(ord).expect("hit in store").passage_id.clone(), s))
            .collect())
    }
}

/// Chunks a corpus JSONL file into a passage file; returns the passage count.
#[pyfunction]
#[pyo3(signature = (corpus_path, out, chunk_size = 128, overlap = 0.10, min_section_tokens = 60, tokenizer = "unicode_word"))]
fn ingest(
    corpus_path: PathBuf,
    out: PathBuf,
    chunk_size: usize,
    overlap: f64,
    min_section_tokens: usize,
    tokenizer: &str,
) -> PyResult<usize> {
    let tok = self::tokenizer(tokenizer)?;
    let chunk = ChunkConfig::new(chunk_size, overlap).map_err(err)?;
    let docs = corpus::ingest_documents(&corpus_path, tok).map_err(err)?;
    let passages = Chunker::new(tok, chunk).map_err(err)?.chunk_corpus(&docs, min_section_tokens);
    corpus::write_passages(&out, &PassageFileHeader::new(tok, chunk, min_section_tokens), &passages)
        .map_err(err)?;
    Ok(passages.len())
}

#[pyfunction]
#[pyo3(signature = (text, tokenizer = "unicode_word"))]
fn tokenize(text: &str, tokenizer: &str) -> PyResult<Vec<String>> {
    Ok(self::tokenizer(tokenizer)?
        .tokens(text)
        .into_iter()
        .map(|t| t.text.to_string())
        .collect())
}

#[pyfunction]
fn budget_topk(total_token_budget: usize, chunk_size: usize) -> PyResult<usize> {
    retrieval::budget_topk(BudgetPolicy::new(total_token_budget, chunk_size)).map_err(err)
}

/// The option letter in a model reply, or `None` on a format deviation.
#[pyfunction]
fn parse_choice(text: &str) -> Option<String> {
    generation::parse_choice(text).parsed.map(|l| l.to_string())
}

#[pyfunction]
fn normalize_genre(raw: &str) -> String {
    benchgen::normalize_genre(raw)
}

/// Scores a benchmark with a constant-answer or scripted mock generator and
/// returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (benchmark, mode, response = None, script = None, index = None, budget = 1024, passages = None, workers = 1))]
#[allow(clippy::too_many_arguments)]
fn evaluate_mock(
    benchmark: PathBuf,
    mode: &str,
    response: Option<String>,
    script: Option<PathBuf>,
    index: Option<PathBuf>,
    budget: usize,
    passages: Option<PathBuf>,
    workers: usize,
) -> PyResult<String> {
    let mode: EvalMode = mode.parse().map_err(err)?;
    let generator = match (response, script) {
        (_, Some(p)) => MockGenerator::load_script(&p).map_err(err)?,
        (Some(r), None) => MockGenerator::constant(r),
        (None, None) => return Err(err(Error::Config("pass response= or script=".into()))),
    };
    let items = evaluation::load_benchmark(&benchmark).map_err(err)?;
    let template = PromptTemplate::default();
    let mut setup = EvalSetup::new(mode, &generator, &template);
    setup.workers = workers;
    let ix = index
        .map(|p| SparseIndex::load(&p, Tokenizer::UnicodeWord))
        .transpose()
        .map_err(err)?;
    let store = passages
        .map(|p| corpus::read_passages(&p).and_then(|(_, ps)| PassageStore::new(ps)))
        .transpose()
        .map_err(err)?;
    if let Some(ix) = &ix {
        let cfg = RetrievalConfig::new(Backend::SparseBm25, BudgetPolicy::new(budget, ix.chunk_size()));
        setup.retrieval = Some((cfg, IndexHandle::Sparse(ix)));
    }
    setup.passages = store.as_ref();
    Ok(evaluation::evaluate(&items, &setup).map_err(err)?.to_json())
}

/// Writes fine-tuning records and returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (benchmark, style, out, passages = None))]
fn export_finetune(benchmark: PathBuf, style: &str, out: PathBuf, passages: Option<PathBuf>) -> PyResult<String> {
    let style: ExportStyle = style.parse().map_err(err)?;
    let items = evaluation::load_benchmark(&benchmark).map_err(err)?;
    let template = PromptTemplate::default();
    let manifest = match style {
        ExportStyle::Qa => finetune_export::export_qa(&items, &template, &out),
        ExportStyle::Rag => {
            let p = passages.ok_or_else(|| err(Error::Config("rag export needs passages".into())))?;
            let store = corpus::read_passages(&p)
                .and_then(|(_, ps)| PassageStore::new(ps))
                .map_err(err)?;
            finetune_export::export_rag(&items, &store, &template, &out)
        }
    }
    .map_err(err)?;
    Ok(manifest.to_json())
}

#[pymodule]
fn muserag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MuseragError", m.py().get_type::<MuseragError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Passage>()?;
    m.add_class::<PySparseIndex>()?;
    m.add_class::<PyVectorStore>()?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(budget_topk, m)?)?;
    m.add_function(wrap_pyfunction!(parse_choice, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_genre, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_mock, m)?)?;
    m.add_function(wrap_pyfunction!(export_finetune, m)?)?;
    Ok(())
}
