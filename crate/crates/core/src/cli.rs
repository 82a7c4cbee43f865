//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::benchgen::{self, BenchBuildConfig, FrequencyTable, GenreTable};
use crate::config::RunConfig;
use crate::corpus::{
    self, corpus_stats, ChunkConfig, Chunker, PassageFileHeader, PassageStore,
    DEFAULT_CHUNK_SIZE, DEFAULT_MIN_SECTION_TOKENS, DEFAULT_OVERLAP_RATIO,
};
use crate::dense_index::{Embedder, VectorStore};
use crate::error::{Error, Result};
use crate::evaluation::{self, AblationEnv, AblationGrid, EvalMode, EvalSetup};
use crate::finetune_export::{self, ExportStyle};
use crate::generation::PromptTemplate;
use crate::retrieval::{
    measure_retrieval_latency, retrieve, Backend, BudgetPolicy, IndexHandle, RetrievalConfig,
    DEFAULT_TOKEN_BUDGET,
};
use crate::sparse_index::{Bm25Params, SparseIndex};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Parser)]
#[command(name = "muserag", version, about = "Retrieval-augmented music question answering toolkit")]
pub struct Cli {
    /// Profiles file (defaults to $MUSERAG_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = Tokenizer::UnicodeWord)]
    pub tokenizer: Tokenizer,
    /// Repeat for more detail on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk a document corpus into a passage file.
    Ingest(IngestArgs),
    #[command(subcommand)]
    Index(IndexCommand),
    /// Retrieve passages for one query.
    Query(QueryArgs),
    /// Time retrieval over a query file.
    BenchLatency(LatencyArgs),
    /// Score a benchmark.
    Eval(EvalArgs),
    /// Evaluate a grid of retriever configurations.
    Ablate(AblateArgs),
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Write supervised fine-tuning records.
    ExportFinetune(ExportArgs),
    /// Corpus statistics for a passage file.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SECTION_TOKENS)]
    pub min_section_tokens: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    pub chunk_size: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP_RATIO)]
    pub overlap: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Build a BM25 index from a passage file.
    Build {
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Build a dense vector store from a passage file.
    Embed {
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Embedding profile name.
        #[arg(long)]
        embedding: String,
    },
    /// Print index statistics.
    Stats {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Inferred from the index file when omitted.
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long, default_value_t = DEFAULT_TOKEN_BUDGET)]
    pub budget: usize,
    /// Must match the index; taken from it when omitted.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Fixed k instead of the budget rule.
    #[arg(long)]
    pub k: Option<usize>,
    /// Embedding profile for dense queries; hashing stores infer it.
    #[arg(long)]
    pub embedding: Option<String>,
    /// Append the answer options to retrieval queries.
    #[arg(long)]
    pub include_options: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long)]
    pub q: String,
}

#[derive(Debug, Args)]
pub struct LatencyArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// One query per line, or benchmark JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long, default_value = "rag")]
    pub mode: EvalMode,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Passage file for gold mode when no index is given.
    #[arg(long)]
    pub passages: Option<PathBuf>,
    #[arg(long)]
    pub generator: String,
    /// Prompt template JSON.
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub generator: String,
    #[arg(long)]
    pub embedding: Option<String>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Generate a benchmark from artist pages.
    Build(BenchBuildArgs),
}

#[derive(Debug, Args)]
pub struct BenchBuildArgs {
    /// Passage file of the artist corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Artist records JSONL.
    #[arg(long)]
    pub artists: PathBuf,
    #[arg(long, default_value_t = benchgen::DEFAULT_ARTIST_COUNT)]
    pub n: usize,
    #[arg(long)]
    pub generator: String,
    /// Genre table JSON; the bundled table otherwise.
    #[arg(long)]
    pub genre_map: Option<PathBuf>,
    /// Genre frequency JSON; counted from the artists otherwise.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    #[arg(long, default_value_t = benchgen::DEFAULT_TOP_GENRES)]
    pub top_genres: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub review_queue: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub style: ExportStyle,
    /// Passage file or index holding the gold passages.
    #[arg(long)]
    pub passages: Option<PathBuf>,
    #[arg(long)]
    pub template: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub passages: PathBuf,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Index(IndexCommand::Build { .. }) => "index build",
            Command::Index(IndexCommand::Embed { .. }) => "index embed",
            Command::Index(IndexCommand::Stats { .. }) => "index stats",
            Command::Query(_) => "query",
            Command::BenchLatency(_) => "bench-latency",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Bench(_) => "bench build",
            Command::ExportFinetune(_) => "export-finetune",
            Command::Stats(_) => "stats",
        }
    }
}

/// Parses `argv`, runs the command and returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            1
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = RunConfig::discover(cli.config.as_deref())?;
    let run_hash = {
        let mut h = Sha256::new();
        h.update(config.config_hash.as_bytes());
        h.update(format!("{:?}", cli.command).as_bytes());
        hex::encode(h.finalize())[..16].to_string()
    };
    let _ = writeln!(
        err,
        "# muserag {} command={} config={} run={} seed={} workers={}",
        env!("CARGO_PKG_VERSION"),
        cli.command.name(),
        config.config_hash,
        run_hash,
        cli.seed,
        cli.workers
    );
    let ctx = Ctx { cli, config: &config };
    let started = Instant::now();
    let r = match &cli.command {
        Command::Ingest(a) => ctx.ingest(a, out),
        Command::Index(c) => ctx.index(c, out),
        Command::Query(a) => ctx.query(a, out),
        Command::BenchLatency(a) => ctx.bench_latency(a, out),
        Command::Eval(a) => ctx.eval(a, out),
        Command::Ablate(a) => ctx.ablate(a, out),
        Command::Bench(BenchCommand::Build(a)) => ctx.bench_build(a, out),
        Command::ExportFinetune(a) => ctx.export(a, out),
        Command::Stats(a) => ctx.stats(a, out),
    };
    if cli.verbose > 0 {
        let _ = writeln!(err, "# elapsed {:.3}s", started.elapsed().as_secs_f64());
    }
    r
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: &'a RunConfig,
}

enum LoadedIndex {
    Sparse(SparseIndex),
    Dense(VectorStore),
}

fn put(out: &mut dyn Write, text: impl AsRef<str>) -> Result<()> {
    out.write_all(text.as_ref().as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn template(path: Option<&Path>) -> Result<PromptTemplate> {
    path.map(PromptTemplate::load).transpose().map(Option::unwrap_or_default)
}

fn load_queries(path: &Path) -> Result<Vec<String>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l)
                .ok()
                .and_then(|v| v.get("question").and_then(|q| q.as_str()).map(String::from))
                .unwrap_or_else(|| l.to_string())
        })
        .collect())
}

impl Ctx<'_> {
    fn tokenizer(&self) -> Tokenizer {
        self.cli.tokenizer
    }

    fn open_index(&self, path: &Path) -> Result<LoadedIndex> {
        if !path.exists() {
            return Err(Error::Config(format!("index {} does not exist", path.display())));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"MUSERAG-BM25 ") {
            Ok(LoadedIndex::Sparse(SparseIndex::from_bytes(&bytes, self.tokenizer())?))
        } else if bytes.starts_with(b"MUSERAG-VEC ") {
            Ok(LoadedIndex::Dense(VectorStore::from_bytes(&bytes)?))
        } else {
            Err(Error::Format(format!("{} is not a muserag index", path.display())))
        }
    }

    fn embedder_for(&self, store: &VectorStore, name: Option<&str>) -> Result<Box<dyn Embedder>> {
        let name = match name {
            Some(n) => n.to_string(),
            None => match store.backend().strip_prefix("hashing-") {
                Some(dim) => format!("hash:{dim}"),
                None => {
                    return Err(Error::Config(format!(
                        "dense index was built with {:?}; pass --embedding",
                        store.backend()
                    )))
                }
            },
        };
        let e = self.config.embedder(&name, self.tokenizer())?;
        if e.label() != store.backend() {
            return Err(Error::Config(format!(
                "embedding profile {name:?} produces {:?} vectors but the index holds {:?}",
                e.label(),
                store.backend()
            )));
        }
        Ok(e)
    }

    /// Loads the index and calls `f` with a handle and retrieval config.
    fn with_retrieval<R>(
        &self,
        a: &RetrievalArgs,
        f: impl FnOnce(RetrievalConfig, IndexHandle<'_>) -> Result<R>,
    ) -> Result<R> {
        let path = a
            .index
            .as_deref()
            .ok_or_else(|| Error::Config("--index is required".into()))?;
        let loaded = self.open_index(path)?;
        let embedder;
        let handle = match &loaded {
            LoadedIndex::Sparse(ix) => IndexHandle::Sparse(ix),
            LoadedIndex::Dense(store) => {
                embedder = self.embedder_for(store, a.embedding.as_deref())?;
                IndexHandle::Dense {
                    store,
                    embedder: embedder.as_ref(),
                }
            }
        };
        if let Some(b) = a.backend {
            if b != handle.backend() {
                return Err(Error::Config(format!(
                    "--backend {b} but {} is a {} index",
                    path.display(),
                    handle.backend()
                )));
            }
        }
        let chunk_size = a.chunk_size.unwrap_or(handle.chunk_size());
        let mut cfg = RetrievalConfig::new(handle.backend(), BudgetPolicy::new(a.budget, chunk_size));
        cfg.explicit_k = a.k;
        cfg.include_options = a.include_options;
        f(cfg, handle)
    }

    fn ingest(&self, a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
        let chunk = ChunkConfig::new(a.chunk_size, a.overlap)?;
        let docs = corpus::ingest_documents(&a.corpus, self.tokenizer())?;
        let chunker = Chunker::new(self.tokenizer(), chunk)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cli.workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let passages = pool.install(|| chunker.chunk_corpus(&docs, a.min_section_tokens));
        let header = PassageFileHeader::new(self.tokenizer(), chunk, a.min_section_tokens);
        corpus::write_passages(&a.out, &header, &passages)?;
        put(
            out,
            format!(
                "ingested {} documents into {} passages -> {}\n",
                docs.len(),
                passages.len(),
                a.out.display()
            ),
        )
    }

    fn read_passage_file(&self, path: &Path) -> Result<(PassageFileHeader, Vec<corpus::Passage>)> {
        let (h, p) = corpus::read_passages(path)?;
        if h.tokenizer != self.tokenizer() {
            return Err(Error::Format(format!(
                "{} was chunked with tokenizer {} but --tokenizer is {}",
                path.display(),
                h.tokenizer,
                self.tokenizer()
            )));
        }
        Ok((h, p))
    }

    fn index(&self, c: &IndexCommand, out: &mut dyn Write) -> Result<()> {
        match c {
            IndexCommand::Build { passages, out: dest, k1, b } => {
                let (h, ps) = self.read_passage_file(passages)?;
                let params = Bm25Params { k1: *k1, b: *b };
                let ix = SparseIndex::build(ps, params, h.tokenizer, h.chunk_size)?;
                ix.save(dest)?;
                let s = ix.stats();
                put(
                    out,
                    format!(
                        "built bm25 index: {} passages, vocab {}, avgdl {:.4} -> {}\n",
                        s.passage_count,
                        s.vocab_size,
                        s.avgdl,
                        dest.display()
                    ),
                )
            }
            IndexCommand::Embed { passages, out: dest, embedding } => {
                let (h, ps) = self.read_passage_file(passages)?;
                let embedder = self.config.embedder(embedding, h.tokenizer)?;
                let store = VectorStore::embed_passages(ps, embedder.as_ref(), h.chunk_size)?;
                store.save(dest)?;
                put(
                    out,
                    format!(
                        "built dense store: {} vectors of dim {} ({}) -> {}\n",
                        store.len(),
                        store.dim(),
                        store.backend(),
                        dest.display()
                    ),
                )
            }
            IndexCommand::Stats { index } => match self.open_index(index)? {
                LoadedIndex::Sparse(ix) => {
                    let s = ix.stats();
                    put(
                        out,
                        format!(
                            "backend: bm25\nN: {}\navgdl: {:.4}\nvocab_size: {}\nchunk_size: {}\nk1: {}\nb: {}\n",
                            s.passage_count,
                            s.avgdl,
                            s.vocab_size,
                            ix.chunk_size(),
                            ix.params().k1,
                            ix.params().b
                        ),
                    )
                }
                LoadedIndex::Dense(st) => put(
                    out,
                    format!(
                        "backend: dense\nN: {}\ndim: {}\nembedder: {}\nchunk_size: {}\n",
                        st.len(),
                        st.dim(),
                        st.backend(),
                        st.chunk_size()
                    ),
                ),
            },
        }
    }

    fn query(&self, a: &QueryArgs, out: &mut dyn Write) -> Result<()> {
        let ctx = self.with_retrieval(&a.retrieval, |cfg, h| retrieve(&a.q, &cfg, h))?;
        let mut s = String::new();
        for (i, item) in ctx.items.iter().enumerate() {
            s.push_str(&format!(
                "{:>3}. {:.6}  {}  [{}]\n     {}\n",
                i + 1,
                item.score,
                item.passage.passage_id,
                item.passage.title,
                item.passage.text.replace('\n', " ")
            ));
        }
        s.push_str(&format!("{} passages, {} tokens\n", ctx.items.len(), ctx.total_tokens));
        put(out, s)
    }

    fn bench_latency(&self, a: &LatencyArgs, out: &mut dyn Write) -> Result<()> {
        let queries = load_queries(&a.queries)?;
        let (report, n) = self.with_retrieval(&a.retrieval, |cfg, h| {
            Ok((measure_retrieval_latency(&queries, &cfg, h)?, h.passages().len()))
        })?;
        let json = serde_json::json!({ "index_passages": n, "latency": report });
        let text = serde_json::to_string_pretty(&json).expect("latency serializes") + "\n";
        if let Some(p) = &a.out {
            write_file(p, &text)?;
        }
        put(out, text)
    }

    fn eval(&self, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
        let items = evaluation::load_benchmark(&a.benchmark)?;
        let generator = self.config.generator(&a.generator)?;
        let template = template(a.template.as_deref())?;
        let mut setup = EvalSetup::new(a.mode, generator.as_ref(), &template);
        setup.workers = self.cli.workers;

        let report = match a.mode {
            EvalMode::ZeroShot => evaluation::evaluate(&items, &setup)?,
            EvalMode::GoldContext if a.retrieval.index.is_none() => {
                let path = a.passages.as_deref().ok_or_else(|| {
                    Error::Config("gold mode needs --passages or --index".into())
                })?;
                let store = PassageStore::new(self.read_passage_file(path)?.1)?;
                setup.passages = Some(&store);
                evaluation::evaluate(&items, &setup)?
            }
            EvalMode::GoldContext | EvalMode::Rag => {
                if a.retrieval.index.is_none() {
                    return Err(Error::Config(format!("{} mode needs --index", a.mode)));
                }
                self.with_retrieval(&a.retrieval, |cfg, h| {
                    let mut s = setup;
                    s.retrieval = Some((cfg, h));
                    evaluation::evaluate(&items, &s)
                })?
            }
        };
        if let Some(p) = &a.out {
            write_file(p, &(report.to_json() + "\n"))?;
            if let Some(l) = &report.retrieval_latency {
                let mut lp = p.as_os_str().to_owned();
                lp.push(".latency.json");
                let text = serde_json::to_string_pretty(l).expect("latency serializes") + "\n";
                write_file(Path::new(&lp), &text)?;
            }
        }
        put(out, report.render_table())
    }

    fn ablate(&self, a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
        let grid = AblationGrid::load(&a.grid)?;
        let items = evaluation::load_benchmark(&a.benchmark)?;
        let generator = self.config.generator(&a.generator)?;
        let template = template(a.template.as_deref())?;
        let embedder = a
            .embedding
            .as_deref()
            .map(|n| self.config.embedder(n, self.tokenizer()))
            .transpose()?;
        let env = AblationEnv {
            generator: generator.as_ref(),
            template: &template,
            tokenizer: self.tokenizer(),
            workers: self.cli.workers,
            embedder: embedder.as_deref(),
        };
        let result = evaluation::run_ablation(&grid, &items, &env)?;
        if let Some(p) = &a.out {
            let cells: Vec<_> = result
                .cells
                .iter()
                .map(|(c, k, r)| serde_json::json!({ "cell": c, "k": k, "report": r }))
                .collect();
            let json = serde_json::json!({ "budget": result.budget, "cells": cells });
            write_file(p, &(serde_json::to_string_pretty(&json).expect("serializes") + "\n"))?;
        }
        put(out, result.render_table())
    }

    fn bench_build(&self, a: &BenchBuildArgs, out: &mut dyn Write) -> Result<()> {
        let store = PassageStore::new(self.read_passage_file(&a.corpus)?.1)?;
        let sources = benchgen::load_artist_sources(&a.artists)?;
        let genre_table = match &a.genre_map {
            Some(p) => GenreTable::load(p)?,
            None => GenreTable::bundled(),
        };
        let frequencies = a
            .frequencies
            .as_deref()
            .map(|p| -> Result<FrequencyTable> {
                let raw = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&raw).map_err(|e| Error::parse(p, e.line(), e.to_string()))
            })
            .transpose()?;
        let cfg = BenchBuildConfig {
            n: a.n,
            seed: self.cli.seed,
            top_genres: a.top_genres,
            genre_table,
            frequencies,
            tokenizer: self.tokenizer(),
            workers: self.cli.workers,
        };
        let generator = self.config.generator(&a.generator)?;
        let built = benchgen::build_benchmark(&sources, &store, &cfg, generator.as_ref())?;
        evaluation::write_benchmark(&a.out, &built.items)?;
        benchgen::write_review_queue(&a.review_queue, &built.review_queue)?;
        put(
            out,
            format!(
                "selected {} artists, kept {} items ({} review entries) -> {}\n",
                built.selected.len(),
                built.items.len(),
                built.review_queue.len(),
                a.out.display()
            ),
        )
    }

    fn export(&self, a: &ExportArgs, out: &mut dyn Write) -> Result<()> {
        let items = evaluation::load_benchmark(&a.benchmark)?;
        let template = template(a.template.as_deref())?;
        let manifest = match a.style {
            ExportStyle::Qa => finetune_export::export_qa(&items, &template, &a.out)?,
            ExportStyle::Rag => {
                let path = a
                    .passages
                    .as_deref()
                    .ok_or_else(|| Error::Config("rag export needs --passages".into()))?;
                let store = self.passage_store(path)?;
                finetune_export::export_rag(&items, &store, &template, &a.out)?
            }
        };
        put(
            out,
            format!(
                "wrote {} {} records ({} errors), sha256 {} -> {}\n",
                manifest.record_count,
                manifest.style,
                manifest.errors.len(),
                manifest.checksum,
                a.out.display()
            ),
        )
    }

    /// Passages from a passage file or from either index kind.
    fn passage_store(&self, path: &Path) -> Result<PassageStore> {
        let mut head = [0u8; 12];
        let n = std::fs::File::open(path)
            .and_then(|mut f| std::io::Read::read(&mut f, &mut head))
            .map_err(|e| Error::io(path, e))?;
        if head[..n].starts_with(b"MUSERAG-") {
            Ok(match self.open_index(path)? {
                LoadedIndex::Sparse(ix) => ix.store().clone(),
                LoadedIndex::Dense(st) => st.store().clone(),
            })
        } else {
            PassageStore::new(self.read_passage_file(path)?.1)
        }
    }

    fn stats(&self, a: &StatsArgs, out: &mut dyn Write) -> Result<()> {
        let (_, ps) = self.read_passage_file(&a.passages)?;
        let s = corpus_stats(&ps, self.tokenizer());
        put(
            out,
            format!(
                "pages: {}\npassages: {}\ntokens: {}\nvocab_size: {}\n",
                s.page_count, s.passage_count, s.total_tokens, s.vocab_size
            ),
        )
    }
}
