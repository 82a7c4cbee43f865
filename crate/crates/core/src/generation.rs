//! Prompt assembly, generator clients and strict answer parsing.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::http::{post_json, Backoff};
use crate::retrieval::RetrievedContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
    D,
}

impl Letter {
    pub const ALL: [Letter; 4] = [Letter::A, Letter::B, Letter::C, Letter::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Letter> {
        Letter::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Letter> {
        match c {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            'D' => Some(Letter::D),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Letter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next().and_then(Letter::from_char), chars.next()) {
            (Some(l), None) => Ok(l),
            _ => Err(Error::Input(format!("not an option letter: {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub system_text: String,
    pub context_header: String,
    /// Placeholders: `{index}` (1-based rank), `{title}`, `{text}`.
    pub context_block_format: String,
    /// Placeholders: `{question}`, `{options}`.
    pub question_block_format: String,
    /// Placeholders: `{label}`, `{text}`.
    pub option_format: String,
    pub answer_instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            system_text: "You are a music expert answering multiple-choice questions. \
                          Answer with only the option letter."
                .into(),
            context_header: "Context:".into(),
            context_block_format: "[{index}] {title}\n{text}".into(),
            question_block_format: "Question: {question}\n{options}".into(),
            option_format: "{label}. {text}".into(),
            answer_instruction: "Answer with only the option letter (A, B, C, or D).".into(),
        }
    }
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// Single-pass `{name}` substitution; substituted values are not rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            vars.iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match hit {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Builds the user message. Context blocks, when present and non-empty,
/// precede the question in rank order; otherwise the prompt is the
/// zero-shot rendering of question and options.
pub fn assemble_prompt(
    question: &str,
    options: &[String],
    context: Option<&RetrievedContext>,
    template: &PromptTemplate,
) -> Result<String> {
    if options.len() != 4 {
        return Err(Error::Input(format!(
            "expected exactly 4 options, got {}",
            options.len()
        )));
    }
    let mut parts = Vec::with_capacity(3);
    if let Some(ctx) = context.filter(|c| !c.is_empty()) {
        let blocks: Vec<String> = ctx
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                render(
                    &template.context_block_format,
                    &[
                        ("index", &(i + 1).to_string()),
                        ("title", &item.passage.title),
                        ("text", &item.passage.text),
                    ],
                )
            })
            .collect();
        parts.push(format!("{}\n{}", template.context_header, blocks.join("\n\n")));
    }
    let options_block = options
        .iter()
        .zip(Letter::ALL)
        .map(|(text, l)| render(&template.option_format, &[("label", &l.to_string()), ("text", text)]))
        .collect::<Vec<_>>()
        .join("\n");
    parts.push(render(
        &template.question_block_format,
        &[("question", question), ("options", &options_block)],
    ));
    parts.push(template.answer_instruction.clone());
    Ok(parts.join("\n\n"))
}

/// A text generator: system and user message in, completion text out.
pub trait Generator: Send + Sync {
    fn generate(&self, system: &str, user: &str) -> Result<String>;
}

impl<F> Generator for F
where
    F: Fn(&str, &str) -> Result<String> + Send + Sync,
{
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        self(system, user)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_max_tokens() -> u32 {
    16
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

impl GeneratorConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        GeneratorConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn backoff(&self) -> Backoff {
        Backoff {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_base_ms),
            ..Backoff::default()
        }
    }
}

/// Chat-completion client with exponential-backoff retries.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    cfg: GeneratorConfig,
}

impl HttpGenerator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(HttpGenerator { cfg })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, system: &str, user: &str) -> Result<String> {
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        });
        let timeout = Duration::from_secs(self.cfg.timeout_secs);
        let resp = self
            .cfg
            .backoff()
            .run(|| post_json(&url, self.cfg.api_key.as_deref(), &body, timeout))
            .map_err(|(e, attempts)| match e {
                Error::Retryable(msg) => Error::GenerationUnavailable {
                    attempts,
                    last_error: msg,
                },
                other => other,
            })?;
        completion_text(&resp)
    }
}

fn completion_text(resp: &Value) -> Result<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Protocol("response has no choices[0].message.content".into()))
}

/// `generate` entry point for a configured service.
pub fn generate(cfg: &GeneratorConfig, system: &str, user: &str) -> Result<String> {
    HttpGenerator::new(cfg.clone())?.generate(system, user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Matches when the user message contains this substring.
    pub contains: String,
    /// Further substrings that must all be present as well.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub and_contains: Vec<String>,
    pub response: String,
}

impl ScriptRule {
    pub fn new(contains: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            contains: contains.into(),
            and_contains: Vec::new(),
            response: response.into(),
        }
    }

    pub fn matches(&self, user: &str) -> bool {
        user.contains(&self.contains) && self.and_contains.iter().all(|s| user.contains(s))
    }
}

/// Offline generator for tests and hermetic runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockGenerator {
    Constant { response: String },
    /// First matching rule wins; `default` otherwise.
    Scripted {
        rules: Vec<ScriptRule>,
        default: String,
    },
}

impl MockGenerator {
    pub fn constant(response: impl Into<String>) -> Self {
        MockGenerator::Constant {
            response: response.into(),
        }
    }

    /// Reads a script file: `{"rules": [{"contains", "response"}], "default"}`.
    pub fn load_script(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Script {
            rules: Vec<ScriptRule>,
            #[serde(default)]
            default: String,
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Script =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Ok(MockGenerator::Scripted {
            rules: s.rules,
            default: s.default,
        })
    }
}

impl Generator for MockGenerator {
    fn generate(&self, _system: &str, user: &str) -> Result<String> {
        Ok(match self {
            MockGenerator::Constant { response } => response.clone(),
            MockGenerator::Scripted { rules, default } => rules
                .iter()
                .find(|r| r.matches(user))
                .map(|r| r.response.clone())
                .unwrap_or_else(|| default.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceVerdict {
    pub parsed: Option<Letter>,
    pub raw_text: String,
    pub format_ok: bool,
}

/// Strict answer grammar, after leading whitespace is stripped:
/// a bare letter (optionally followed by whitespace only), a letter followed
/// by `)`, `.` or `:`, or a parenthesized letter `(X)`. Anything after the
/// delimiter is ignored. Everything else is a format deviation.
pub fn parse_choice(raw: &str) -> ChoiceVerdict {
    let s = raw.trim_start();
    let mut chars = s.chars();
    let parsed = match chars.next() {
        Some('(') => match (chars.next().and_then(Letter::from_char), chars.next()) {
            (Some(l), Some(')')) => Some(l),
            _ => None,
        },
        Some(c) => Letter::from_char(c).filter(|_| {
            let rest = chars.as_str();
            rest.trim().is_empty() || rest.starts_with([')', '.', ':'])
        }),
        None => None,
    };
    ChoiceVerdict {
        parsed,
        raw_text: raw.to_string(),
        format_ok: parsed.is_some(),
    }
}

/// Looks up option texts by letter.
pub fn option_map(options: &[String]) -> HashMap<Letter, &str> {
    options
        .iter()
        .zip(Letter::ALL)
        .map(|(t, l)| (l, t.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::retrieval::RetrievedItem;

    fn opts() -> Vec<String> {
        ["Trumpet", "Piano", "Drums", "Bass"].map(String::from).to_vec()
    }

    fn ctx(texts: &[&str]) -> RetrievedContext {
        let items = texts
            .iter()
            .enumerate()
            .map(|(i, t)| RetrievedItem {
                passage: Passage {
                    passage_id: format!("p{i}"),
                    doc_id: "d".into(),
                    title: format!("Doc {i}"),
                    section_heading: "s".into(),
                    text: t.to_string(),
                    token_count: 2,
                    token_offset: 0,
                },
                score: 1.0 / (i + 1) as f64,
            })
            .collect();
        RetrievedContext::new("q", items)
    }

    #[test]
    fn context_precedes_question_in_rank_order() {
        let t = PromptTemplate::default();
        let c = ctx(&["first passage", "second passage"]);
        let p = assemble_prompt("Who played?", &opts(), Some(&c), &t).unwrap();
        let a = p.find("first passage").unwrap();
        let b = p.find("second passage").unwrap();
        let q = p.find("Who played?").unwrap();
        assert!(a < b && b < q);
    }

    #[test]
    fn absent_or_empty_context_is_zero_shot() {
        let t = PromptTemplate::default();
        let zs = assemble_prompt("Q?", &opts(), None, &t).unwrap();
        let empty = assemble_prompt("Q?", &opts(), Some(&ctx(&[])), &t).unwrap();
        assert_eq!(zs, empty);
        assert_eq!(
            zs,
            "Question: Q?\nA. Trumpet\nB. Piano\nC. Drums\nD. Bass\n\n\
             Answer with only the option letter (A, B, C, or D)."
        );
    }

    #[test]
    fn rag_prompt_differs_only_by_context_blocks() {
        let t = PromptTemplate::default();
        let zs = assemble_prompt("Q?", &opts(), None, &t).unwrap();
        let rag = assemble_prompt("Q?", &opts(), Some(&ctx(&["x y"])), &t).unwrap();
        let prefix = rag.strip_suffix(&zs).expect("zero-shot prompt is a suffix");
        assert_eq!(prefix, "Context:\n[1] Doc 0\nx y\n\n");
    }

    #[test]
    fn wrong_option_count() {
        let t = PromptTemplate::default();
        let three = opts()[..3].to_vec();
        assert!(matches!(assemble_prompt("Q", &three, None, &t), Err(Error::Input(_))));
    }

    #[test]
    fn render_does_not_rescan_values() {
        let out = render("{a}-{b}-{c}", &[("a", "{b}"), ("b", "x")]);
        assert_eq!(out, "{b}-x-{c}");
    }

    #[test]
    fn parse_choice_examples() {
        let v = parse_choice("B");
        assert_eq!((v.parsed, v.format_ok), (Some(Letter::B), true));
        let v = parse_choice("C) Because the album…");
        assert_eq!((v.parsed, v.format_ok), (Some(Letter::C), true));
        let v = parse_choice("The answer is B");
        assert_eq!((v.parsed, v.format_ok), (None, false));
    }

    #[test]
    fn parse_choice_grammar() {
        for ok in ["  A", "D.", "A: x", "(B)", "(C) trumpet", "B\n", "A. Trumpet"] {
            assert!(parse_choice(ok).format_ok, "{ok:?}");
        }
        for bad in ["", "E", "a", "Answer: A", "AB", "(A", "( A)", "Bach", "B-", "**B**"] {
            assert!(!parse_choice(bad).format_ok, "{bad:?}");
        }
    }

    #[test]
    fn mock_generators() {
        let m = MockGenerator::constant("B");
        assert_eq!(m.generate("s", "u").unwrap(), "B");
        let s = MockGenerator::Scripted {
            rules: vec![
                ScriptRule {
                    and_contains: vec!["Giant Steps".into()],
                    ..ScriptRule::new("Coltrane", "B")
                },
                ScriptRule::new("Coltrane", "A"),
            ],
            default: "D".into(),
        };
        assert_eq!(s.generate("", "about Coltrane").unwrap(), "A");
        assert_eq!(s.generate("", "Coltrane recorded Giant Steps").unwrap(), "B");
        assert_eq!(s.generate("", "about Monk").unwrap(), "D");
    }

    #[test]
    fn letter_round_trip() {
        for l in Letter::ALL {
            assert_eq!(l.to_string().parse::<Letter>().unwrap(), l);
            assert_eq!(Letter::from_index(l.index()), Some(l));
        }
        assert!("E".parse::<Letter>().is_err());
    }

    #[test]
    fn completion_text_extraction() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "B"}}]});
        assert_eq!(completion_text(&v).unwrap(), "B");
        assert!(matches!(completion_text(&json!({})), Err(Error::Protocol(_))));
    }
}
