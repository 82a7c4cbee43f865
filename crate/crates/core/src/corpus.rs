//! Document ingestion, section filtering and overlapping passage chunking.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_MIN_SECTION_TOKENS: usize = 60;
pub const DEFAULT_CHUNK_SIZE: usize = 128;
pub const DEFAULT_OVERLAP_RATIO: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Artists,
    Genres,
    Instruments,
    History,
    Technology,
    Theory,
    Forms,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub text: String,
    /// Recomputed on ingest; any value in the source file is ignored.
    #[serde(default)]
    pub token_count: usize,
}

impl Section {
    pub fn new(heading: impl Into<String>, text: impl Into<String>, tokenizer: Tokenizer) -> Self {
        let text = text.into();
        let token_count = tokenizer.count(&text);
        Section {
            heading: heading.into(),
            text,
            token_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub category: Category,
    #[serde(default)]
    pub r#abstract: String,
    #[serde(default)]
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub section_heading: String,
    pub text: String,
    pub token_count: usize,
    /// Start of this chunk within its section's token sequence.
    pub token_offset: usize,
}

pub fn passage_id(doc_id: &str, section_ordinal: usize, chunk_ordinal: usize) -> String {
    format!("{doc_id}#s{section_ordinal:04}#c{chunk_ordinal:04}")
}

/// Reads a line-delimited document file. Blank lines are skipped.
pub fn ingest_documents(path: &Path, tokenizer: Tokenizer) -> Result<Vec<Document>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs: Vec<Document> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut doc: Document =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::Integrity(format!(
                "{}:{}: duplicate doc_id {:?}",
                path.display(),
                i + 1,
                doc.doc_id
            )));
        }
        for s in &mut doc.sections {
            s.token_count = tokenizer.count(&s.text);
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Keeps the sections with at least `min_tokens` tokens, in order.
pub fn filter_sections(doc: &Document, min_tokens: usize) -> Document {
    Document {
        sections: doc
            .sections
            .iter()
            .filter(|s| s.token_count >= min_tokens)
            .cloned()
            .collect(),
        ..doc.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap_ratio: f64,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap_ratio: DEFAULT_OVERLAP_RATIO,
        }
    }
}

impl ChunkConfig {
    pub fn new(chunk_size: usize, overlap_ratio: f64) -> Result<Self> {
        let cfg = ChunkConfig {
            chunk_size,
            overlap_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size < 2 {
            return Err(Error::Config(format!(
                "chunk_size must be at least 2, got {}",
                self.chunk_size
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::Config(format!(
                "overlap ratio must be in [0, 1), got {}",
                self.overlap_ratio
            )));
        }
        if self.overlap() >= self.chunk_size {
            return Err(Error::Config(format!(
                "overlap {} leaves no stride for chunk size {}",
                self.overlap(),
                self.chunk_size
            )));
        }
        Ok(())
    }

    pub fn overlap(&self) -> usize {
        (self.overlap_ratio * self.chunk_size as f64).floor() as usize
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap()
    }

    /// Token ranges of the chunks covering a sequence of `token_count` tokens.
    pub fn spans(&self, token_count: usize) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        if token_count == 0 {
            return out;
        }
        let stride = self.stride();
        let mut start = 0;
        loop {
            let end = (start + self.chunk_size).min(token_count);
            out.push(start..end);
            if end == token_count {
                break;
            }
            start += stride;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Chunker {
    pub tokenizer: Tokenizer,
    pub config: ChunkConfig,
}

impl Chunker {
    pub fn new(tokenizer: Tokenizer, config: ChunkConfig) -> Result<Self> {
        config.validate()?;
        Ok(Chunker { tokenizer, config })
    }

    /// Splits one section into passages. Passage text is the verbatim slice
    /// of the section text from the first to the last token of the chunk.
    pub fn chunk_section(
        &self,
        doc_id: &str,
        title: &str,
        section_ordinal: usize,
        section: &Section,
    ) -> Vec<Passage> {
        let tokens = self.tokenizer.tokens(&section.text);
        self.config
            .spans(tokens.len())
            .into_iter()
            .enumerate()
            .map(|(chunk_ordinal, span)| {
                let bytes = tokens[span.start].span.start..tokens[span.end - 1].span.end;
                Passage {
                    passage_id: passage_id(doc_id, section_ordinal, chunk_ordinal),
                    doc_id: doc_id.to_string(),
                    title: title.to_string(),
                    section_heading: section.heading.clone(),
                    text: section.text[bytes].to_string(),
                    token_count: span.len(),
                    token_offset: span.start,
                }
            })
            .collect()
    }

    pub fn chunk_document(&self, doc: &Document) -> Vec<Passage> {
        doc.sections
            .iter()
            .enumerate()
            .flat_map(|(i, s)| self.chunk_section(&doc.doc_id, &doc.title, i, s))
            .collect()
    }

    /// Filters and chunks every document. Output order matches a sequential
    /// pass over `docs`.
    pub fn chunk_corpus(&self, docs: &[Document], min_section_tokens: usize) -> Vec<Passage> {
        docs.par_iter()
            .map(|d| self.chunk_document(&filter_sections(d, min_section_tokens)))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }
}

/// First line of a passage file; records how the passages were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageFileHeader {
    pub format: String,
    pub version: u32,
    pub tokenizer: Tokenizer,
    pub chunk_size: usize,
    pub overlap_ratio: f64,
    pub min_section_tokens: usize,
}

impl PassageFileHeader {
    pub const FORMAT: &'static str = "muserag-passages";
    pub const VERSION: u32 = 1;

    pub fn new(tokenizer: Tokenizer, chunk: ChunkConfig, min_section_tokens: usize) -> Self {
        PassageFileHeader {
            format: Self::FORMAT.to_string(),
            version: Self::VERSION,
            tokenizer,
            chunk_size: chunk.chunk_size,
            overlap_ratio: chunk.overlap_ratio,
            min_section_tokens,
        }
    }
}

pub fn write_passages(path: &Path, header: &PassageFileHeader, passages: &[Passage]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |v: String| writeln!(w, "{v}").map_err(|e| Error::io(path, e));
    put(serde_json::to_string(header).expect("header serializes"))?;
    for p in passages {
        put(serde_json::to_string(p).expect("passage serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_passages(path: &Path) -> Result<(PassageFileHeader, Vec<Passage>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header: PassageFileHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, 1, format!("bad passage file header: {e}")))?
        }
        None => return Err(Error::parse(path, 1, "missing passage file header")),
    };
    if header.format != PassageFileHeader::FORMAT || header.version != PassageFileHeader::VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported passage file {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let mut passages = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        passages.push(
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?,
        );
    }
    Ok((header, passages))
}

/// Passages in canonical order (ascending `passage_id`); a passage's
/// position is its dense ordinal in every index built over the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassageStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl PassageStore {
    pub fn new(mut passages: Vec<Passage>) -> Result<Self> {
        passages.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
        if let Some(w) = passages
            .windows(2)
            .find(|w| w[0].passage_id == w[1].passage_id)
        {
            return Err(Error::Integrity(format!(
                "duplicate passage_id {:?}",
                w[0].passage_id
            )));
        }
        let by_id = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.passage_id.clone(), i))
            .collect();
        Ok(PassageStore { passages, by_id })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, ord: usize) -> Option<&Passage> {
        self.passages.get(ord)
    }

    pub fn ord_of(&self, passage_id: &str) -> Option<usize> {
        self.by_id.get(passage_id).copied()
    }

    pub fn by_id(&self, passage_id: &str) -> Option<&Passage> {
        self.ord_of(passage_id).map(|i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub page_count: usize,
    pub passage_count: usize,
    pub total_tokens: usize,
    pub vocab_size: usize,
}

pub fn corpus_stats(passages: &[Passage], tokenizer: Tokenizer) -> CorpusStats {
    let mut vocab = HashSet::new();
    let mut total_tokens = 0;
    for p in passages {
        let terms = tokenizer.terms(&p.text);
        total_tokens += terms.len();
        vocab.extend(terms);
    }
    CorpusStats {
        page_count: passages
            .iter()
            .map(|p| p.doc_id.as_str())
            .collect::<HashSet<_>>()
            .len(),
        passage_count: passages.len(),
        total_tokens,
        vocab_size: vocab.len(),
    }
}
