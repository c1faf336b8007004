//! Token vocabularies and math/natural tokenisation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const CLS: usize = 3;
pub const UNK: usize = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<cls>", "<unk>"];

/// Multi-character tokens kept whole in math mode.
pub const MATH_TOKENS: [&str; 5] = ["frac", "sin", "cos", "log", "e"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    #[default]
    Math,
    Natural,
}

/// Bijective token ↔ id map with the reserved ids first.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in RESERVED {
            v.add(t);
        }
        v
    }

    /// Math vocabulary covering every symbol the generator and parser can emit.
    pub fn math() -> Self {
        let mut v = Self::new();
        for t in MATH_TOKENS {
            v.add(t);
        }
        for c in ('a'..='z').chain('A'..='Z').chain('0'..='9') {
            v.add(&c.to_string());
        }
        for t in ["(", ")", "+", "*", "-", "=", ","] {
            v.add(t);
        }
        v
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.add(t);
        }
        v
    }

    /// Adds a token if absent and returns its id.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::Invalid(format!("{} lacks the reserved header", path.display())));
        }
        let mut v = Self::new();
        for t in &lines[RESERVED.len()..] {
            if v.id(t).is_some() {
                return Err(Error::Invalid(format!("duplicate token {t:?} in {}", path.display())));
            }
            v.add(t);
        }
        Ok(v)
    }
}

/// Splits math text: whitespace is dropped, [`MATH_TOKENS`] are matched greedily,
/// everything else is one character per token.
pub fn split_math(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    'outer: while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
            continue;
        }
        for t in MATH_TOKENS {
            if rest.starts_with(t) {
                out.push(t.to_string());
                rest = &rest[t.len()..];
                continue 'outer;
            }
        }
        out.push(c.to_string());
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn split_natural(text: &str) -> Vec<String> {
    text.split_whitespace().map(String::from).collect()
}

pub fn split(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Math => split_math(text),
        TokenMode::Natural => split_natural(text),
    }
}

/// Token ids framed as `[BOS, …, EOS]`.
pub fn tokenize(text: &str, vocab: &Vocabulary, mode: TokenMode) -> Result<Vec<usize>> {
    let mut ids = vec![BOS];
    for t in split(text, mode) {
        match (vocab.id(&t), mode) {
            (Some(id), _) => ids.push(id),
            (None, TokenMode::Natural) => ids.push(UNK),
            (None, TokenMode::Math) => return Err(Error::Invalid(format!("symbol {t:?} not in math vocabulary"))),
        }
    }
    ids.push(EOS);
    Ok(ids)
}

/// Joins math tokens with the canonical spacing of the infix printer.
pub fn join_math<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        match t.as_ref() {
            "+" => out.push_str(" + "),
            "=" => out.push_str(" = "),
            "," => out.push_str(", "),
            t => out.push_str(t),
        }
    }
    out
}

/// Inverse of [`tokenize`]: framing and padding ids are dropped, decoding
/// stops at the first EOS.
pub fn detokenize(ids: &[usize], vocab: &Vocabulary, mode: TokenMode) -> String {
    let toks: Vec<&str> = ids
        .iter()
        .copied()
        .skip_while(|&i| i == BOS)
        .take_while(|&i| i != EOS)
        .filter(|&i| i != PAD && i != BOS && i != CLS)
        .map(|i| vocab.token(i))
        .collect();
    match mode {
        TokenMode::Math => join_math(&toks),
        TokenMode::Natural => toks.join(" "),
    }
}
