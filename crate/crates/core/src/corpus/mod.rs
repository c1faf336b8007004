//! Corpora of expression trees and constituency-parsed sentences.

pub mod graph;
pub mod io;
pub mod math;
pub mod natural;
pub mod splits;
pub mod tree;
pub mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use graph::{tree_to_graph, SyntaxGraph};
pub use math::{generate_math_expression, parse_math_expression, to_infix};
pub use splits::{build_generalisation_splits, generate_math_corpus, generate_natural_corpus, CorpusConfig, Splits};
pub use tree::{flatten_tree, parse_bracketed_tree, strip_word_content, SyntaxTree};
pub use vocab::{detokenize, tokenize, TokenMode, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SplitTag {
    Train,
    Eval,
    Var,
    Easy,
    Eq,
    Len,
}

impl SplitTag {
    pub const ALL: [SplitTag; 6] =
        [SplitTag::Train, SplitTag::Eval, SplitTag::Var, SplitTag::Easy, SplitTag::Eq, SplitTag::Len];
    pub const TEST: [SplitTag; 5] = [SplitTag::Eval, SplitTag::Var, SplitTag::Easy, SplitTag::Eq, SplitTag::Len];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "TRAIN",
            SplitTag::Eval => "EVAL",
            SplitTag::Var => "VAR",
            SplitTag::Easy => "EASY",
            SplitTag::Eq => "EQ",
            SplitTag::Len => "LEN",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown split {s:?}")))
    }
}

/// One corpus item with every view the encoders and decoder consume.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub text: String,
    pub surface: Vec<String>,
    pub tree: SyntaxTree,
    pub flat_tree: Vec<String>,
    pub stripped_flat_tree: Vec<String>,
    pub split: SplitTag,
    pub mode: TokenMode,
}

impl CorpusRecord {
    pub fn new(text: String, tree: SyntaxTree, split: SplitTag, mode: TokenMode) -> Self {
        let surface = vocab::split(&text, mode);
        let flat_tree = flatten_tree(&tree);
        let stripped_flat_tree = flatten_tree(&strip_word_content(&tree));
        Self { text, surface, tree, flat_tree, stripped_flat_tree, split, mode }
    }

    pub fn math(tree: SyntaxTree, split: SplitTag) -> Self {
        Self::new(to_infix(&tree), tree, split, TokenMode::Math)
    }

    /// Rebuilds a record from its stored surface tokens and flattened tree.
    pub fn from_parts(surface: &[String], flat_tree: &[String], split: SplitTag, mode: TokenMode) -> Result<Self> {
        let text = match mode {
            TokenMode::Math => vocab::join_math(surface),
            TokenMode::Natural => surface.join(" "),
        };
        let tree = parse_bracketed_tree(&flat_tree.join(" "))?;
        Ok(Self::new(text, tree, split, mode))
    }

    /// Depth of the syntactic skeleton; the label probed from latents.
    pub fn depth(&self) -> usize {
        self.tree.syntax_depth()
    }
}
