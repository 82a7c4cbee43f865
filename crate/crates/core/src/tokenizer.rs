//! Token counting and term extraction.
//!
//! Every token count in the crate (section filtering, chunk boundaries, token
//! budgets) goes through a [`Tokenizer`]. Tokens keep their byte span in the
//! source text so chunks can be cut as verbatim substrings.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Maximal runs of alphanumeric characters; punctuation is discarded.
    #[default]
    UnicodeWord,
    /// Runs of non-whitespace characters.
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub span: Range<usize>,
}

impl Tokenizer {
    pub fn tokens<'a>(&self, text: &'a str) -> Vec<Token<'a>> {
        let keep: fn(char) -> bool = match self {
            Tokenizer::UnicodeWord => char::is_alphanumeric,
            Tokenizer::Whitespace => |c: char| !c.is_whitespace(),
        };
        let mut out = Vec::new();
        let mut start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            match (keep(c), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push(Token {
                        text: &text[s..i],
                        span: s..i,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(Token {
                text: &text[s..],
                span: s..text.len(),
            });
        }
        out
    }

    pub fn count(&self, text: &str) -> usize {
        self.tokens(text).len()
    }

    /// Lowercased index terms, in text order.
    pub fn terms(&self, text: &str) -> Vec<String> {
        self.tokens(text)
            .into_iter()
            .map(|t| t.text.to_lowercase())
            .collect()
    }

    /// Identifies the tokenizer and term normalization in persisted indexes.
    pub fn fingerprint(&self) -> String {
        format!("{}+lowercase/v1", self)
    }
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tokenizer::UnicodeWord => "unicode_word",
            Tokenizer::Whitespace => "whitespace",
        })
    }
}

impl FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unicode_word" | "unicode-word" => Ok(Tokenizer::UnicodeWord),
            "whitespace" => Ok(Tokenizer::Whitespace),
            other => Err(Error::Config(format!("unknown tokenizer {other:?}"))),
        }
    }
}
