//! Multiple-choice benchmark evaluation: zero-shot, RAG and gold-context
//! modes, accuracy breakdowns and the retriever ablation grid.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::PassageStore;
use crate::dense_index::{Embedder, VectorStore};
use crate::error::{Error, Result};
use crate::generation::{assemble_prompt, parse_choice, Generator, Letter, PromptTemplate};
use crate::retrieval::{
    retrieve, Backend, BudgetPolicy, IndexHandle, LatencyReport, RetrievalConfig, RetrievedContext,
    RetrievedItem,
};
use crate::sparse_index::SparseIndex;
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Factual,
    Contextual,
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionType::Factual => "factual",
            QuestionType::Contextual => "contextual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: String,
    pub question: String,
    pub options: [String; 4],
    pub answer_key: Letter,
    pub question_type: QuestionType,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seen: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_passage_ids: Option<Vec<String>>,
    /// Document id of the artist the item was generated from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artist_id: Option<String>,
}

impl BenchmarkItem {
    pub fn answer_text(&self) -> &str {
        &self.options[self.answer_key.index()]
    }

    /// Query text for retrieval: the stem, optionally followed by options.
    pub fn retrieval_query(&self, include_options: bool) -> String {
        if include_options {
            format!("{} {}", self.question, self.options.join(" "))
        } else {
            self.question.clone()
        }
    }
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkItem>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: BenchmarkItem =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !ids.insert(item.item_id.clone()) {
            return Err(Error::parse(
                path,
                i + 1,
                format!("duplicate item_id {:?}", item.item_id),
            ));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn write_benchmark(path: &Path, items: &[BenchmarkItem]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("item serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ZeroShot,
    Rag,
    GoldContext,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::ZeroShot => "zero-shot",
            EvalMode::Rag => "rag",
            EvalMode::GoldContext => "gold",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-shot" | "zero_shot" => Ok(EvalMode::ZeroShot),
            "rag" => Ok(EvalMode::Rag),
            "gold" | "gold-context" | "gold_context" => Ok(EvalMode::GoldContext),
            other => Err(Error::Config(format!("unknown eval mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Incorrect,
    /// Response did not match the answer grammar; scored incorrect.
    FormatDeviation,
    /// Generation or context construction failed; not scored.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub item_id: String,
    pub outcome: Outcome,
    pub predicted: Option<Letter>,
    pub answer_key: Letter,
    pub raw_response: Option<String>,
    pub error: Option<String>,
    pub question_type: QuestionType,
    pub category: String,
    pub seen: Option<bool>,
    pub context_ids: Vec<String>,
}

impl ItemVerdict {
    pub fn is_scored(&self) -> bool {
        self.outcome != Outcome::Error
    }

    pub fn is_correct(&self) -> bool {
        self.outcome == Outcome::Correct
    }
}

/// Exact accuracy as a fraction; `percent` is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 * 100.0 / self.total as f64
        }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}", self.percent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Type,
    Category,
    Seen,
}

/// Evaluation result. Retrieval latency is kept out of the serialized form
/// so reports are reproducible byte-for-byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub total_items: usize,
    pub accuracy: Accuracy,
    pub accuracy_percent: f64,
    pub format_deviations: usize,
    pub generation_errors: usize,
    /// Set when any item errored; errored items are then excluded from the
    /// accuracy denominator.
    pub partial: bool,
    pub by_type: Vec<Bucket>,
    pub by_category: Vec<Bucket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_seen: Option<Vec<Bucket>>,
    pub verdicts: Vec<ItemVerdict>,
    #[serde(skip)]
    pub retrieval_latency: Option<LatencyReport>,
}

impl EvalReport {
    fn from_verdicts(mode: EvalMode, verdicts: Vec<ItemVerdict>, latency: Option<LatencyReport>) -> Self {
        let scored = verdicts.iter().filter(|v| v.is_scored()).count();
        let correct = verdicts.iter().filter(|v| v.is_correct()).count();
        let errors = verdicts.len() - scored;
        let accuracy = Accuracy {
            correct,
            total: scored,
        };
        let mut report = EvalReport {
            mode,
            total_items: verdicts.len(),
            accuracy,
            accuracy_percent: accuracy.percent(),
            format_deviations: verdicts
                .iter()
                .filter(|v| v.outcome == Outcome::FormatDeviation)
                .count(),
            generation_errors: errors,
            partial: errors > 0,
            by_type: Vec::new(),
            by_category: Vec::new(),
            by_seen: None,
            verdicts,
            retrieval_latency: latency,
        };
        report.by_type = breakdown(&report, Axis::Type).expect("type always present");
        report.by_category = breakdown(&report, Axis::Category).expect("category always present");
        report.by_seen = breakdown(&report, Axis::Seen).ok();
        report
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary table, accuracies to one decimal place.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "mode: {}  items: {}  accuracy: {}%  ({}/{})\n",
            self.mode, self.total_items, self.accuracy, self.accuracy.correct, self.accuracy.total
        );
        s.push_str(&format!(
            "format deviations: {}  generation errors: {}{}\n",
            self.format_deviations,
            self.generation_errors,
            if self.partial { "  [PARTIAL RUN]" } else { "" }
        ));
        let mut section = |name: &str, buckets: &[Bucket]| {
            s.push_str(&format!("\n{name:<28} {:>6} {:>8}\n", "n", "acc %"));
            for b in buckets {
                s.push_str(&format!("  {:<26} {:>6} {:>8.1}\n", b.bucket, b.n, b.accuracy_percent));
            }
        };
        section("question type", &self.by_type);
        section("category", &self.by_category);
        if let Some(seen) = &self.by_seen {
            section("seen", seen);
        }
        if let Some(l) = &self.retrieval_latency {
            s.push_str(&format!(
                "\nretrieval latency: mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms  ({:.1} q/s)\n",
                l.mean_ms, l.p50_ms, l.p95_ms, l.queries_per_second
            ));
        }
        s
    }
}

/// Partitions scored items along `axis`. Buckets are sorted by name.
pub fn breakdown(report: &EvalReport, axis: Axis) -> Result<Vec<Bucket>> {
    let mut acc: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for v in report.verdicts.iter() {
        let key = match axis {
            Axis::Type => v.question_type.to_string(),
            Axis::Category => v.category.clone(),
            Axis::Seen => match v.seen {
                Some(true) => "seen".into(),
                Some(false) => "unseen".into(),
                None => {
                    return Err(Error::Input(format!(
                        "item {:?} has no seen flag",
                        v.item_id
                    )))
                }
            },
        };
        let e = acc.entry(key).or_default();
        if v.is_scored() {
            e.0 += 1;
            e.1 += v.is_correct() as usize;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(bucket, (n, correct))| Bucket {
            bucket,
            n,
            correct,
            accuracy_percent: Accuracy { correct, total: n }.percent(),
        })
        .collect())
}

/// Everything `evaluate` needs besides the items.
pub struct EvalSetup<'a> {
    pub mode: EvalMode,
    /// Required for [`EvalMode::Rag`].
    pub retrieval: Option<(RetrievalConfig, IndexHandle<'a>)>,
    /// Passage lookup for gold contexts; defaults to the index's passages.
    pub passages: Option<&'a PassageStore>,
    pub generator: &'a dyn Generator,
    pub template: &'a PromptTemplate,
    pub workers: usize,
}

impl<'a> EvalSetup<'a> {
    pub fn new(mode: EvalMode, generator: &'a dyn Generator, template: &'a PromptTemplate) -> Self {
        EvalSetup {
            mode,
            retrieval: None,
            passages: None,
            generator,
            template,
            workers: 1,
        }
    }

    fn gold_store(&self) -> Option<&'a PassageStore> {
        self.passages
            .or_else(|| self.retrieval.as_ref().map(|(_, h)| h.passages()))
    }
}

/// Context block for an item in gold mode: its gold passages verbatim, in
/// the order listed on the item.
pub fn gold_context(item: &BenchmarkItem, store: &PassageStore) -> Result<RetrievedContext> {
    let ids = item.gold_passage_ids.as_deref().ok_or_else(|| {
        Error::Input(format!("item {:?} has no gold_passage_ids", item.item_id))
    })?;
    let items = ids
        .iter()
        .map(|id| {
            store
                .by_id(id)
                .cloned()
                .map(|passage| RetrievedItem { passage, score: 1.0 })
                .ok_or_else(|| Error::Lookup(format!("gold passage {id:?} not in store")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievedContext::new(item.question.clone(), items))
}

pub fn evaluate(items: &[BenchmarkItem], setup: &EvalSetup<'_>) -> Result<EvalReport> {
    match setup.mode {
        EvalMode::ZeroShot => {}
        EvalMode::Rag => {
            if setup.retrieval.is_none() {
                return Err(Error::Config("rag mode needs an index".into()));
            }
        }
        EvalMode::GoldContext => {
            if setup.gold_store().is_none() {
                return Err(Error::Config("gold mode needs a passage store".into()));
            }
            if let Some(bad) = items.iter().find(|i| i.gold_passage_ids.is_none()) {
                return Err(Error::Input(format!(
                    "gold mode requires gold_passage_ids; item {:?} has none",
                    bad.item_id
                )));
            }
        }
    }

    let mut ordered: Vec<&BenchmarkItem> = items.iter().collect();
    ordered.sort_by(|a, b| a.item_id.cmp(&b.item_id));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(setup.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<(ItemVerdict, Option<f64>)> =
        pool.install(|| ordered.par_iter().map(|item| evaluate_item(item, setup)).collect());

    let samples: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
    let verdicts = results.into_iter().map(|r| r.0).collect();
    let latency = if setup.mode == EvalMode::Rag {
        LatencyReport::from_samples(&samples)
    } else {
        None
    };
    Ok(EvalReport::from_verdicts(setup.mode, verdicts, latency))
}

fn evaluate_item(item: &BenchmarkItem, setup: &EvalSetup<'_>) -> (ItemVerdict, Option<f64>) {
    let mut verdict = ItemVerdict {
        item_id: item.item_id.clone(),
        outcome: Outcome::Error,
        predicted: None,
        answer_key: item.answer_key,
        raw_response: None,
        error: None,
        question_type: item.question_type,
        category: item.category.clone(),
        seen: item.seen,
        context_ids: Vec::new(),
    };
    let mut latency = None;
    let context = match setup.mode {
        EvalMode::ZeroShot => Ok(None),
        EvalMode::Rag => {
            let (cfg, handle) = setup.retrieval.as_ref().expect("checked in evaluate");
            let start = Instant::now();
            let r = retrieve(&item.retrieval_query(cfg.include_options), cfg, *handle);
            latency = Some(start.elapsed().as_secs_f64() * 1000.0);
            r.map(Some)
        }
        EvalMode::GoldContext => {
            gold_context(item, setup.gold_store().expect("checked in evaluate")).map(Some)
        }
    };
    let context = match context {
        Ok(c) => c,
        Err(e) => {
            verdict.error = Some(format!("{}: {e}", e.code()));
            return (verdict, latency);
        }
    };
    if let Some(c) = &context {
        verdict.context_ids = c.passage_ids();
    }
    let prompt = match assemble_prompt(&item.question, &item.options, context.as_ref(), setup.template) {
        Ok(p) => p,
        Err(e) => {
            verdict.error = Some(format!("{}: {e}", e.code()));
            return (verdict, latency);
        }
    };
    match setup.generator.generate(&setup.template.system_text, &prompt) {
        Ok(raw) => {
            let choice = parse_choice(&raw);
            verdict.predicted = choice.parsed;
            verdict.outcome = match choice.parsed {
                None => Outcome::FormatDeviation,
                Some(l) if l == item.answer_key => Outcome::Correct,
                Some(_) => Outcome::Incorrect,
            };
            verdict.raw_response = Some(raw);
        }
        Err(e) => verdict.error = Some(format!("{}: {e}", e.code())),
    }
    (verdict, latency)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationCell {
    pub backend: Backend,
    pub chunk_size: usize,
    pub index: PathBuf,
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{} ({})", self.backend, self.chunk_size, self.index.display())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub budget: usize,
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    /// Reads a grid file; relative index paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut grid: AblationGrid =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut grid.cells {
            if c.index.is_relative() {
                c.index = base.join(&c.index);
            }
        }
        Ok(grid)
    }
}

/// Shared inputs for every ablation cell.
pub struct AblationEnv<'a> {
    pub generator: &'a dyn Generator,
    pub template: &'a PromptTemplate,
    pub tokenizer: Tokenizer,
    pub workers: usize,
    /// Query embedder for dense cells.
    pub embedder: Option<&'a dyn Embedder>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub budget: usize,
    pub cells: Vec<(AblationCell, usize, EvalReport)>,
}

impl AblationResult {
    /// One row per cell: backend, passage size, k, then factual, contextual
    /// and overall accuracy.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>6} {:>4} {:>9} {:>11} {:>7}\n",
            "backend", "size", "k", "factual", "contextual", "all"
        );
        for (cell, k, report) in &self.cells {
            let get = |t: &str| {
                report
                    .by_type
                    .iter()
                    .find(|b| b.bucket == t)
                    .map(|b| format!("{:.1}", b.accuracy_percent))
                    .unwrap_or_else(|| "-".into())
            };
            s.push_str(&format!(
                "{:<8} {:>6} {:>4} {:>9} {:>11} {:>7}\n",
                cell.backend.to_string(),
                cell.chunk_size,
                k,
                get("factual"),
                get("contextual"),
                report.accuracy.to_string()
            ));
        }
        s
    }
}

/// Evaluates every cell in RAG mode with `k = floor(budget / chunk_size)`.
pub fn run_ablation(
    grid: &AblationGrid,
    items: &[BenchmarkItem],
    env: &AblationEnv<'_>,
) -> Result<AblationResult> {
    let missing: Vec<String> = grid
        .cells
        .iter()
        .filter(|c| !c.index.exists())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "missing index for cell(s): {}",
            missing.join(", ")
        )));
    }
    let mut cells = Vec::with_capacity(grid.cells.len());
    for cell in &grid.cells {
        let config = RetrievalConfig::new(cell.backend, BudgetPolicy::new(grid.budget, cell.chunk_size));
        let k = config.k()?;
        let report = match cell.backend {
            Backend::SparseBm25 => {
                let ix = SparseIndex::load(&cell.index, env.tokenizer)?;
                evaluate_cell(items, config, IndexHandle::Sparse(&ix), env)?
            }
            Backend::Dense => {
                let store = VectorStore::load(&cell.index)?;
                let embedder = env.embedder.ok_or_else(|| {
                    Error::Config(format!("cell {cell} needs an embedding profile"))
                })?;
                evaluate_cell(items, config, IndexHandle::Dense { store: &store, embedder }, env)?
            }
        };
        cells.push((cell.clone(), k, report));
    }
    Ok(AblationResult {
        budget: grid.budget,
        cells,
    })
}

fn evaluate_cell(
    items: &[BenchmarkItem],
    config: RetrievalConfig,
    handle: IndexHandle<'_>,
    env: &AblationEnv<'_>,
) -> Result<EvalReport> {
    let setup = EvalSetup {
        retrieval: Some((config, handle)),
        workers: env.workers,
        ..EvalSetup::new(EvalMode::Rag, env.generator, env.template)
    };
    evaluate(items, &setup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::MockGenerator;

    pub(crate) fn item(id: &str, key: Letter, qt: QuestionType) -> BenchmarkItem {
        BenchmarkItem {
            item_id: id.into(),
            question: format!("question {id}?"),
            options: ["w", "x", "y", "z"].map(String::from),
            answer_key: key,
            question_type: qt,
            category: "People".into(),
            seen: None,
            gold_passage_ids: None,
            artist_id: None,
        }
    }

    /// Answers per item id, keyed by the question text in the prompt.
    fn scripted(answers: &[(&str, &str)]) -> impl Fn(&str, &str) -> Result<String> + Send + Sync {
        let answers: Vec<(String, String)> = answers
            .iter()
            .map(|(id, a)| (format!("question {id}?"), a.to_string()))
            .collect();
        move |_: &str, user: &str| {
            Ok(answers
                .iter()
                .find(|(q, _)| user.contains(q.as_str()))
                .map(|(_, a)| a.clone())
                .unwrap_or_default())
        }
    }

    fn run(items: &[BenchmarkItem], g: &dyn Generator) -> EvalReport {
        let t = PromptTemplate::default();
        evaluate(items, &EvalSetup::new(EvalMode::ZeroShot, g, &t)).unwrap()
    }

    #[test]
    fn three_of_four_with_one_deviation() {
        use Letter::*;
        let items = vec![
            item("1", A, QuestionType::Factual),
            item("2", B, QuestionType::Factual),
            item("3", C, QuestionType::Factual),
            item("4", D, QuestionType::Contextual),
        ];
        let g = scripted(&[("1", "A"), ("2", "The answer is B"), ("3", "C."), ("4", "(D)")]);
        let r = run(&items, &g);
        assert_eq!(r.accuracy, Accuracy { correct: 3, total: 4 });
        assert_eq!(r.accuracy.to_string(), "75.0");
        assert_eq!(r.format_deviations, 1);
        assert!(!r.partial);

        let by_type = breakdown(&r, Axis::Type).unwrap();
        assert_eq!(by_type[0].bucket, "contextual");
        assert_eq!((by_type[0].n, by_type[0].accuracy_percent), (1, 100.0));
        assert_eq!(by_type[1].bucket, "factual");
        assert_eq!(format!("{:.1}", by_type[1].accuracy_percent), "66.7");
    }

    #[test]
    fn all_correct_is_hundred() {
        let items: Vec<_> = Letter::ALL
            .iter()
            .enumerate()
            .map(|(i, &l)| item(&i.to_string(), l, QuestionType::Factual))
            .collect();
        let answers: Vec<(String, String)> =
            items.iter().map(|i| (i.item_id.clone(), i.answer_key.to_string())).collect();
        let refs: Vec<(&str, &str)> = answers.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let r = run(&items, &scripted(&refs));
        assert_eq!(r.accuracy_percent, 100.0);
    }

    #[test]
    fn generation_errors_mark_partial() {
        let items = vec![item("1", Letter::A, QuestionType::Factual), item("2", Letter::A, QuestionType::Factual)];
        let g = |_: &str, user: &str| -> Result<String> {
            if user.contains("question 2?") {
                Err(Error::GenerationUnavailable { attempts: 3, last_error: "down".into() })
            } else {
                Ok("A".into())
            }
        };
        let r = run(&items, &g);
        assert!(r.partial);
        assert_eq!(r.generation_errors, 1);
        assert_eq!(r.accuracy, Accuracy { correct: 1, total: 1 });
        assert!(r.verdicts[1].error.as_deref().unwrap().starts_with("E_GENERATION_UNAVAILABLE"));
    }

    #[test]
    fn seen_axis_requires_flags() {
        let mut items = vec![item("1", Letter::A, QuestionType::Factual)];
        let r = run(&items, &MockGenerator::constant("A"));
        assert!(matches!(breakdown(&r, Axis::Seen), Err(Error::Input(m)) if m.contains("\"1\"")));
        assert!(r.by_seen.is_none());

        items[0].seen = Some(true);
        let r = run(&items, &MockGenerator::constant("A"));
        let seen = breakdown(&r, Axis::Seen).unwrap();
        assert_eq!(seen.len(), 1);
        assert_eq!(seen[0].accuracy_percent, r.accuracy_percent);
    }

    #[test]
    fn equal_buckets_average() {
        let mut a = item("1", Letter::A, QuestionType::Factual);
        a.seen = Some(true);
        let mut b = item("2", Letter::B, QuestionType::Factual);
        b.seen = Some(false);
        let r = run(&[a, b], &MockGenerator::constant("A"));
        assert_eq!(r.accuracy_percent, 50.0);
        let seen = r.by_seen.unwrap();
        assert_eq!((seen[0].accuracy_percent, seen[1].accuracy_percent), (100.0, 0.0));
    }

    #[test]
    fn gold_mode_requires_ids() {
        let items = vec![item("1", Letter::A, QuestionType::Factual)];
        let t = PromptTemplate::default();
        let g = MockGenerator::constant("A");
        let store = PassageStore::default();
        let setup = EvalSetup {
            passages: Some(&store),
            ..EvalSetup::new(EvalMode::GoldContext, &g, &t)
        };
        assert!(matches!(evaluate(&items, &setup), Err(Error::Input(_))));
    }

    #[test]
    fn missing_gold_passage_is_item_error() {
        let mut it = item("1", Letter::A, QuestionType::Factual);
        it.gold_passage_ids = Some(vec!["nope".into()]);
        let t = PromptTemplate::default();
        let g = MockGenerator::constant("A");
        let store = PassageStore::default();
        let setup = EvalSetup {
            passages: Some(&store),
            ..EvalSetup::new(EvalMode::GoldContext, &g, &t)
        };
        let r = evaluate(&[it], &setup).unwrap();
        assert_eq!(r.generation_errors, 1);
        assert!(r.verdicts[0].error.as_deref().unwrap().contains("nope"));
    }

    #[test]
    fn rag_mode_requires_index() {
        let t = PromptTemplate::default();
        let g = MockGenerator::constant("A");
        let r = evaluate(&[], &EvalSetup::new(EvalMode::Rag, &g, &t));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn verdicts_sorted_by_item_id() {
        let items = vec![
            item("b", Letter::A, QuestionType::Factual),
            item("a", Letter::A, QuestionType::Factual),
        ];
        let r = run(&items, &MockGenerator::constant("A"));
        let ids: Vec<_> = r.verdicts.iter().map(|v| v.item_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
    }

    #[test]
    fn ablation_reports_missing_cells() {
        let grid = AblationGrid {
            budget: 1024,
            cells: vec![AblationCell {
                backend: Backend::SparseBm25,
                chunk_size: 128,
                index: "/nonexistent/ix.bm25".into(),
            }],
        };
        let g = MockGenerator::constant("A");
        let t = PromptTemplate::default();
        let env = AblationEnv {
            generator: &g,
            template: &t,
            tokenizer: Tokenizer::UnicodeWord,
            workers: 1,
            embedder: None,
        };
        let err = run_ablation(&grid, &[], &env).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("bm25@128")));
    }

    #[test]
    fn loader_rejects_three_options_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let good = serde_json::to_string(&item("1", Letter::A, QuestionType::Factual)).unwrap();
        let p = dir.path().join("b.jsonl");
        std::fs::write(&p, format!("{good}\n")).unwrap();
        assert_eq!(load_benchmark(&p).unwrap().len(), 1);

        std::fs::write(&p, format!("{good}\n{good}\n")).unwrap();
        assert!(matches!(load_benchmark(&p), Err(Error::Parse { line: 2, .. })));

        let three = good.replace(r#""options":["w","x","y","z"]"#, r#""options":["w","x","y"]"#);
        std::fs::write(&p, format!("{three}\n")).unwrap();
        assert!(matches!(load_benchmark(&p), Err(Error::Parse { line: 1, .. })));
    }
}
