//! Supervised fine-tuning records: plain question/answer pairs and
//! gold-context RAG triples, rendered with the inference prompt builder.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::evaluation::{gold_context, BenchmarkItem};
use crate::generation::{assemble_prompt, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportStyle {
    Qa,
    Rag,
}

impl fmt::Display for ExportStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportStyle::Qa => "qa",
            ExportStyle::Rag => "rag",
        })
    }
}

impl FromStr for ExportStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa" => Ok(ExportStyle::Qa),
            "rag" => Ok(ExportStyle::Rag),
            other => Err(Error::Config(format!("unknown export style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub style: ExportStyle,
    pub system: String,
    pub user: String,
    /// Answer letter, `". "`, then the answer text.
    pub assistant: String,
    pub item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_passage_ids: Option<Vec<String>>,
}

/// Hyperparameters recorded in the manifest for downstream trainers.
/// Nothing here is used by this crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub method: String,
    pub quantization_bits: u32,
    pub epochs: u32,
    pub batch_size: u32,
    pub gradient_accumulation_steps: u32,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub lr_scheduler: String,
    pub optimizer: String,
    pub lora_r: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        TrainingSettings {
            method: "lora".into(),
            quantization_bits: 8,
            epochs: 1,
            batch_size: 2,
            gradient_accumulation_steps: 4,
            learning_rate: 3e-5,
            weight_decay: 0.005,
            warmup_ratio: 0.1,
            lr_scheduler: "cosine".into(),
            optimizer: "adamw".into(),
            lora_r: 16,
            lora_alpha: 16,
            lora_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportError {
    pub item_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub record_count: usize,
    pub style: ExportStyle,
    /// Sorted, deduplicated artist ids of the exported items.
    pub seen_artists: Vec<String>,
    /// SHA-256 of the records file, hex.
    pub checksum: String,
    pub errors: Vec<ExportError>,
    pub advisory_training_settings: TrainingSettings,
}

impl ExportManifest {
    pub fn path_for(out: &Path) -> std::path::PathBuf {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest.json");
        s.into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

fn assistant_target(item: &BenchmarkItem) -> String {
    format!("{}. {}", item.answer_key, item.answer_text())
}

pub fn qa_record(item: &BenchmarkItem, template: &PromptTemplate) -> Result<TrainingRecord> {
    Ok(TrainingRecord {
        style: ExportStyle::Qa,
        system: template.system_text.clone(),
        user: assemble_prompt(&item.question, &item.options, None, template)?,
        assistant: assistant_target(item),
        item_id: item.item_id.clone(),
        gold_passage_ids: None,
    })
}

pub fn rag_record(
    item: &BenchmarkItem,
    store: &PassageStore,
    template: &PromptTemplate,
) -> Result<TrainingRecord> {
    let context = gold_context(item, store)?;
    Ok(TrainingRecord {
        style: ExportStyle::Rag,
        system: template.system_text.clone(),
        user: assemble_prompt(&item.question, &item.options, Some(&context), template)?,
        assistant: assistant_target(item),
        item_id: item.item_id.clone(),
        gold_passage_ids: Some(context.passage_ids()),
    })
}

/// Builds records in item_id order; failed items are reported, not fatal.
pub fn build_records(
    items: &[BenchmarkItem],
    style: ExportStyle,
    store: Option<&PassageStore>,
    template: &PromptTemplate,
) -> Result<(Vec<TrainingRecord>, Vec<ExportError>)> {
    if style == ExportStyle::Rag && store.is_none() {
        return Err(Error::Config("rag export needs a passage store".into()));
    }
    let mut ordered: Vec<&BenchmarkItem> = items.iter().collect();
    ordered.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let results: Vec<Result<TrainingRecord>> = ordered
        .par_iter()
        .map(|item| match style {
            ExportStyle::Qa => qa_record(item, template),
            ExportStyle::Rag => rag_record(item, store.expect("checked"), template),
        })
        .collect();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (item, r) in ordered.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(ExportError {
                item_id: item.item_id.clone(),
                code: e.code().into(),
                message: e.to_string(),
            }),
        }
    }
    Ok((records, errors))
}

fn write_export(
    items: &[BenchmarkItem],
    style: ExportStyle,
    store: Option<&PassageStore>,
    template: &PromptTemplate,
    out: &Path,
) -> Result<ExportManifest> {
    let (records, errors) = build_records(items, style, store, template)?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(out, &body).map_err(|e| Error::io(out, e))?;

    let exported: BTreeSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
    let seen_artists: BTreeSet<String> = items
        .iter()
        .filter(|i| exported.contains(i.item_id.as_str()))
        .filter_map(|i| i.artist_id.clone())
        .collect();
    let manifest = ExportManifest {
        record_count: records.len(),
        style,
        seen_artists: seen_artists.into_iter().collect(),
        checksum: hex::encode(Sha256::digest(body.as_bytes())),
        errors,
        advisory_training_settings: TrainingSettings::default(),
    };
    let mpath = ExportManifest::path_for(out);
    std::fs::write(&mpath, manifest.to_json() + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Writes one QA record per item to `out` and the manifest beside it.
pub fn export_qa(items: &[BenchmarkItem], template: &PromptTemplate, out: &Path) -> Result<ExportManifest> {
    write_export(items, ExportStyle::Qa, None, template, out)
}

/// Writes one RAG record per item whose gold passages resolve in `store`.
pub fn export_rag(
    items: &[BenchmarkItem],
    store: &PassageStore,
    template: &PromptTemplate,
    out: &Path,
) -> Result<ExportManifest> {
    write_export(items, ExportStyle::Rag, Some(store), template, out)
}

pub fn read_records(path: &Path) -> Result<Vec<TrainingRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::evaluation::QuestionType;
    use crate::generation::Letter;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            passage_id: id.into(),
            doc_id: id.split('#').next().unwrap().into(),
            title: "Title".into(),
            section_heading: "Career".into(),
            text: text.into(),
            token_count: text.split_whitespace().count(),
            token_offset: 0,
        }
    }

    fn item(id: &str, gold: &[&str], artist: &str) -> BenchmarkItem {
        BenchmarkItem {
            item_id: id.into(),
            question: "Which label signed the band?".into(),
            options: ["Sub Pop", "Matador", "4AD", "Merge"].map(String::from),
            answer_key: Letter::C,
            question_type: QuestionType::Factual,
            category: "People".into(),
            seen: None,
            gold_passage_ids: Some(gold.iter().map(|s| s.to_string()).collect()),
            artist_id: Some(artist.into()),
        }
    }

    fn store() -> PassageStore {
        PassageStore::new(vec![
            passage("d1#s0000#c0000", "The band signed with 4AD in 1989."),
            passage("d2#s0000#c0000", "Unrelated text about pianos."),
        ])
        .unwrap()
    }

    #[test]
    fn qa_and_rag_differ_only_by_context() {
        let t = PromptTemplate::default();
        let it = item("i1", &["d1#s0000#c0000"], "d1");
        let qa = qa_record(&it, &t).unwrap();
        let rag = rag_record(&it, &store(), &t).unwrap();
        assert_eq!(qa.assistant, "C. 4AD");
        assert_eq!(qa.assistant, rag.assistant);
        assert!(!qa.user.contains("signed with 4AD"));
        assert!(rag.user.contains("The band signed with 4AD in 1989."));
        let prefix = rag.user.strip_suffix(qa.user.as_str()).expect("qa is a suffix of rag");
        assert!(prefix.starts_with("Context:\n[1] Title\n"));
        assert!(prefix.ends_with("\n\n"));
    }

    #[test]
    fn missing_gold_is_skipped_and_listed() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("rag.jsonl");
        let items = vec![item("i2", &["nope#s0000#c0000"], "d9"), item("i1", &["d1#s0000#c0000"], "d1")];
        let m = export_rag(&items, &store(), &PromptTemplate::default(), &out).unwrap();
        assert_eq!(m.record_count, 1);
        assert_eq!(m.errors.len(), 1);
        assert_eq!((m.errors[0].item_id.as_str(), m.errors[0].code.as_str()), ("i2", "E_LOOKUP"));
        assert_eq!(m.seen_artists, ["d1"]);
        let recs = read_records(&out).unwrap();
        assert_eq!(recs.len(), 1);
        let bytes = std::fs::read(&out).unwrap();
        assert_eq!(m.checksum, hex::encode(Sha256::digest(&bytes)));
        let on_disk: ExportManifest =
            serde_json::from_str(&std::fs::read_to_string(ExportManifest::path_for(&out)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
    }

    #[test]
    fn empty_export() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("qa.jsonl");
        let m = export_qa(&[], &PromptTemplate::default(), &out).unwrap();
        assert_eq!(m.record_count, 0);
        assert_eq!(std::fs::read(&out).unwrap(), b"");
        assert_eq!(m.checksum, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn records_round_trip_in_id_order() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("qa.jsonl");
        let items = vec![item("b", &[], "x"), item("a", &[], "y")];
        export_qa(&items, &PromptTemplate::default(), &out).unwrap();
        let recs = read_records(&out).unwrap();
        assert_eq!(recs.iter().map(|r| r.item_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(recs[0], qa_record(&items[1], &PromptTemplate::default()).unwrap());
    }
}
