//! Ordered labeled trees and their bracketed serialisation.

use std::fmt;

use crate::error::{Error, Result};

/// Ordered labeled tree: an expression tree or a constituency parse.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SyntaxTree {
    pub label: String,
    pub children: Vec<SyntaxTree>,
}

/// Part-of-speech tags (Penn Treebank) plus the expression-tree wrappers
/// whose single leaf child is surface content rather than structure.
const PRETERMINALS: &[&str] = &[
    "Symbol", "Integer", "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS",
    "NNP", "NNPS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD",
    "VBG", "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB",
];

pub fn is_preterminal(label: &str) -> bool {
    PRETERMINALS.contains(&label)
}

impl SyntaxTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Self { label: label.into(), children: Vec::new() }
    }

    pub fn node(label: impl Into<String>, children: Vec<SyntaxTree>) -> Self {
        Self { label: label.into(), children }
    }

    /// `Symbol(name)`: a variable wrapper with its content leaf.
    pub fn symbol(name: impl Into<String>) -> Self {
        Self::node("Symbol", vec![Self::leaf(name)])
    }

    pub fn integer(value: i64) -> Self {
        Self::node("Integer", vec![Self::leaf(value.to_string())])
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(SyntaxTree::node_count).sum::<usize>()
    }

    /// Number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(SyntaxTree::depth).max().unwrap_or(0)
    }

    /// Depth of the tree once surface content is removed.
    pub fn syntax_depth(&self) -> usize {
        strip_word_content(self).depth()
    }

    /// Labels in pre-order.
    pub fn preorder(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.node_count());
        fn walk<'a>(t: &'a SyntaxTree, out: &mut Vec<&'a str>) {
            out.push(&t.label);
            for c in &t.children {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    /// Number of leaves that are surface content (words, variable names).
    pub fn content_count(&self) -> usize {
        let own = if is_preterminal(&self.label) { self.children.iter().filter(|c| c.is_leaf()).count() } else { 0 };
        own + self.children.iter().filter(|c| !c.is_leaf()).map(SyntaxTree::content_count).sum::<usize>()
    }

    /// Surface content leaves in order.
    pub fn content_leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(t: &'a SyntaxTree, out: &mut Vec<&'a str>) {
            let pre = is_preterminal(&t.label);
            for c in &t.children {
                if pre && c.is_leaf() {
                    out.push(&c.label);
                } else {
                    walk(c, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    /// Functional form, e.g. `Pow(cos(Symbol(E)), Symbol(b))`.
    pub fn functional(&self) -> String {
        let mut s = String::new();
        self.write_functional(&mut s);
        s
    }

    fn write_functional(&self, out: &mut String) {
        out.push_str(&self.label);
        if !self.children.is_empty() {
            out.push('(');
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                c.write_functional(out);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for SyntaxTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&flatten_tree(self).join(" "))
    }
}

/// Depth-first bracketed serialisation: every node becomes `( label children… )`.
pub fn flatten_tree(tree: &SyntaxTree) -> Vec<String> {
    let mut out = Vec::with_capacity(3 * tree.node_count());
    fn walk(t: &SyntaxTree, out: &mut Vec<String>) {
        out.push("(".to_string());
        out.push(t.label.clone());
        for c in &t.children {
            walk(c, out);
        }
        out.push(")".to_string());
    }
    walk(tree, &mut out);
    out
}

#[derive(Debug, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Word(&'a str),
}

fn lex_brackets(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c == b'(' {
            out.push((i, Tok::Open));
            i += 1;
        } else if c == b')' {
            out.push((i, Tok::Close));
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'(' && bytes[i] != b')' {
                i += 1;
            }
            out.push((start, Tok::Word(&text[start..i])));
        }
    }
    out
}

/// Parses `(S (NP (DT a) (NN bee)) …)`. Bare tokens are leaves; `(X )` is a
/// childless node `X`.
pub fn parse_bracketed_tree(text: &str) -> Result<SyntaxTree> {
    let toks = lex_brackets(text);
    let mut pos = 0;
    let tree = parse_node(&toks, &mut pos, text.len())?;
    if let Some((off, _)) = toks.get(pos) {
        return Err(Error::parse(*off, "trailing input after tree"));
    }
    Ok(tree)
}

fn parse_node(toks: &[(usize, Tok<'_>)], pos: &mut usize, end: usize) -> Result<SyntaxTree> {
    match toks.get(*pos) {
        Some((_, Tok::Open)) => *pos += 1,
        Some((off, _)) => return Err(Error::parse(*off, "expected '('")),
        None => return Err(Error::parse(end, "empty input")),
    }
    let label = match toks.get(*pos) {
        Some((_, Tok::Word(w))) => {
            *pos += 1;
            w.to_string()
        }
        Some((off, _)) => return Err(Error::parse(*off, "node without label")),
        None => return Err(Error::parse(end, "unbalanced parentheses")),
    };
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            Some((_, Tok::Close)) => {
                *pos += 1;
                return Ok(SyntaxTree { label, children });
            }
            Some((_, Tok::Open)) => children.push(parse_node(toks, pos, end)?),
            Some((_, Tok::Word(w))) => {
                children.push(SyntaxTree::leaf(*w));
                *pos += 1;
            }
            None => return Err(Error::parse(end, "unbalanced parentheses")),
        }
    }
}

/// Removes surface content (leaf children of preterminals), keeping shape and labels.
pub fn strip_word_content(tree: &SyntaxTree) -> SyntaxTree {
    let pre = is_preterminal(&tree.label);
    let children = tree
        .children
        .iter()
        .filter(|c| !(pre && c.is_leaf()))
        .map(strip_word_content)
        .collect();
    SyntaxTree { label: tree.label.clone(), children }
}
