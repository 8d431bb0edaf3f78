//! Word-level tokenizer with exact round-trips.
//!
//! Text is lexed into three token classes: word runs (`[A-Za-z0-9_]+`, so
//! underscored action names stay single tokens), whitespace runs, and
//! single punctuation characters. Detokenization is plain concatenation,
//! which makes `detokenize(tokenize(s)) == s` hold for any text whose
//! tokens are all in the vocabulary. The prompt vocabulary is small and
//! closed, so nothing heavier than this is needed.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, u32>,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Split text into word / whitespace-run / punctuation lexemes.
pub fn lex(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = text.char_indices().collect::<Vec<_>>();
    let mut i = 0;
    while i < bytes.len() {
        let (start, c) = bytes[i];
        let class = if is_word_char(c) {
            0
        } else if c.is_whitespace() {
            1
        } else {
            2
        };
        let mut j = i + 1;
        if class != 2 {
            while j < bytes.len() {
                let (_, d) = bytes[j];
                let same = match class {
                    0 => is_word_char(d),
                    _ => d.is_whitespace(),
                };
                if !same {
                    break;
                }
                j += 1;
            }
        }
        let end = if j < bytes.len() {
            bytes[j].0
        } else {
            text.len()
        };
        out.push(&text[start..end]);
        i = j;
    }
    out
}

impl Tokenizer {
    /// Build a vocabulary from a set of covering texts. Token IDs are
    /// dense, with the four specials first and the rest sorted.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab = BTreeSet::new();
        for text in texts {
            for tok in lex(text) {
                vocab.insert(tok.to_string());
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(vocab);
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    /// Tokenize text. Lexemes outside the vocabulary map to UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        lex(text)
            .into_iter()
            .map(|tok| self.ids.get(tok).copied().unwrap_or(UNK))
            .collect()
    }

    /// Concatenate the token strings. PAD/BOS/EOS render as nothing,
    /// UNK as a visible marker.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                UNK => out.push_str("<unk>"),
                _ => {
                    if let Some(tok) = self.tokens.get(id as usize) {
                        out.push_str(tok);
                    }
                }
            }
        }
        out
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Fraction of lexemes in `text` covered by the vocabulary.
    pub fn coverage(&self, text: &str) -> f64 {
        let lexed = lex(text);
        if lexed.is_empty() {
            return 1.0;
        }
        let known = lexed.iter().filter(|t| self.ids.contains_key(**t)).count();
        known as f64 / lexed.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "tokens": self.tokens,
        }))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            tokens: Vec<String>,
        }
        let file: File = serde_json::from_str(text)?;
        let ids = file
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Self {
            tokens: file.tokens,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
