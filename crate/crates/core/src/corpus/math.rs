//! Synthetic mathematical expressions: generation, infix parsing and printing.
//!
//! Expression trees use sympy-style labels (`Add`, `Mul`, `Pow`, `sin`, `cos`,
//! `exp`, `log`, `frac`, `Eq`) with variables wrapped as `Symbol(name)` and
//! integer literals as `Integer(value)`. The canonical surface form is infix:
//! `U + cos(n)`, `cos(E)**b`, `frac(a, b)`, `E = U + cos(n)`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tree::SyntaxTree;
use crate::error::{Error, Result};

pub const BINARY_OPS: &[&str] = &["Add", "Mul", "Pow", "frac"];
pub const UNARY_OPS: &[&str] = &["sin", "cos", "exp", "log"];
pub const OPERATORS: &[&str] = &["Add", "Mul", "Pow", "sin", "cos", "exp", "log", "frac"];

pub fn variable_letters() -> Vec<String> {
    ('a'..='z').chain('A'..='Z').map(String::from).collect()
}

/// Seeded random expression generator.
#[derive(Clone, Debug)]
pub struct MathGenerator {
    rng: ChaCha8Rng,
    letters: Vec<String>,
    /// Probability that a non-root position with remaining depth becomes a variable.
    pub leaf_prob: f64,
}

impl MathGenerator {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), letters: variable_letters(), leaf_prob: 0.4 }
    }

    /// A tree whose syntactic depth (variables count as depth 1) is at most `max_depth`.
    /// For `max_depth > 1` the root is always an operator.
    pub fn generate(&mut self, max_depth: usize) -> SyntaxTree {
        assert!(max_depth >= 1, "max_depth must be at least 1");
        self.gen(max_depth, true)
    }

    fn gen(&mut self, budget: usize, root: bool) -> SyntaxTree {
        if budget <= 1 || (!root && self.rng.random_bool(self.leaf_prob)) {
            let name = self.letters.choose(&mut self.rng).expect("letters").clone();
            return SyntaxTree::symbol(name);
        }
        let op = *OPERATORS.choose(&mut self.rng).expect("ops");
        let arity = if UNARY_OPS.contains(&op) { 1 } else { 2 };
        let children = (0..arity).map(|_| self.gen(budget - 1, false)).collect();
        SyntaxTree::node(op, children)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn generate_math_expression(max_depth: usize, rng_seed: u64) -> SyntaxTree {
    MathGenerator::new(rng_seed).generate(max_depth)
}

fn precedence(t: &SyntaxTree) -> u8 {
    match t.label.as_str() {
        "Eq" => 0,
        "Add" => 1,
        "Mul" => 2,
        "Pow" => 3,
        "Integer" if t.children.first().is_some_and(|c| c.label.starts_with('-')) => 2,
        _ => 4,
    }
}

/// Canonical infix surface form of an expression tree.
pub fn to_infix(tree: &SyntaxTree) -> String {
    let mut out = String::new();
    write_infix(tree, &mut out);
    out
}

fn write_wrapped(t: &SyntaxTree, wrap: bool, out: &mut String) {
    if wrap {
        out.push('(');
        write_infix(t, out);
        out.push(')');
    } else {
        write_infix(t, out);
    }
}

fn write_infix(t: &SyntaxTree, out: &mut String) {
    let label = t.label.as_str();
    match label {
        "Symbol" | "Integer" => out.push_str(&t.children[0].label),
        "Eq" | "Add" | "Mul" => {
            let sep = match label {
                "Eq" => " = ",
                "Add" => " + ",
                _ => "*",
            };
            let own = precedence(t);
            for (i, c) in t.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                // same-operator children are bracketed so n-ary parsing keeps nesting
                write_wrapped(c, precedence(c) <= own, out);
            }
        }
        "Pow" => {
            let (base, exp) = (&t.children[0], &t.children[1]);
            write_wrapped(base, precedence(base) <= 3, out);
            out.push_str("**");
            write_wrapped(exp, precedence(exp) < 3 && !is_negative_int(exp), out);
        }
        _ => {
            out.push_str(label);
            out.push('(');
            for (i, c) in t.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_infix(c, out);
            }
            out.push(')');
        }
    }
}

fn is_negative_int(t: &SyntaxTree) -> bool {
    t.label == "Integer" && t.children.first().is_some_and(|c| c.label.starts_with('-'))
}

#[derive(Clone, Debug, PartialEq)]
enum MTok {
    Ident(String),
    Int(i64),
    Plus,
    Minus,
    Star,
    StarStar,
    Eq,
    Comma,
    LParen,
    RParen,
}

fn lex_math(text: &str) -> Result<Vec<(usize, MTok)>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (off, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' | ')' | '+' | '-' | '=' | ',' => {
                out.push((
                    off,
                    match c {
                        '(' => MTok::LParen,
                        ')' => MTok::RParen,
                        '+' => MTok::Plus,
                        '-' => MTok::Minus,
                        '=' => MTok::Eq,
                        _ => MTok::Comma,
                    },
                ));
                i += 1;
            }
            '*' => {
                if chars.get(i + 1).is_some_and(|&(_, n)| n == '*') {
                    out.push((off, MTok::StarStar));
                    i += 2;
                } else {
                    out.push((off, MTok::Star));
                    i += 1;
                }
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().map(|&(_, c)| c).collect();
                let v = s.parse().map_err(|_| Error::parse(off, "integer out of range"))?;
                out.push((off, MTok::Int(v)));
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_alphabetic() {
                    i += 1;
                }
                out.push((off, MTok::Ident(chars[start..i].iter().map(|&(_, c)| c).collect())));
            }
            other => return Err(Error::parse(off, format!("unknown symbol '{other}'"))),
        }
    }
    Ok(out)
}

struct MathParser {
    toks: Vec<(usize, MTok)>,
    pos: usize,
    end: usize,
}

impl MathParser {
    fn peek(&self) -> Option<&MTok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn expect(&mut self, tok: MTok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::parse(self.offset(), format!("expected {what}")))
        }
    }

    fn equation(&mut self) -> Result<SyntaxTree> {
        let lhs = self.sum()?;
        if self.peek() == Some(&MTok::Eq) {
            self.pos += 1;
            let rhs = self.sum()?;
            return Ok(SyntaxTree::node("Eq", vec![lhs, rhs]));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<SyntaxTree> {
        let mut terms = vec![self.product()?];
        while self.peek() == Some(&MTok::Plus) {
            self.pos += 1;
            terms.push(self.product()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { SyntaxTree::node("Add", terms) })
    }

    fn product(&mut self) -> Result<SyntaxTree> {
        let mut factors = vec![self.power()?];
        while self.peek() == Some(&MTok::Star) {
            self.pos += 1;
            factors.push(self.power()?);
        }
        Ok(if factors.len() == 1 { factors.pop().unwrap() } else { SyntaxTree::node("Mul", factors) })
    }

    fn power(&mut self) -> Result<SyntaxTree> {
        let base = self.atom()?;
        if self.peek() == Some(&MTok::StarStar) {
            self.pos += 1;
            let exp = self.power()?;
            return Ok(SyntaxTree::node("Pow", vec![base, exp]));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<SyntaxTree> {
        let off = self.offset();
        match self.peek().cloned() {
            Some(MTok::Int(v)) => {
                self.pos += 1;
                Ok(SyntaxTree::integer(v))
            }
            Some(MTok::Minus) => {
                self.pos += 1;
                match self.peek().cloned() {
                    Some(MTok::Int(v)) => {
                        self.pos += 1;
                        Ok(SyntaxTree::integer(-v))
                    }
                    _ => Err(Error::parse(self.offset(), "expected integer after '-'")),
                }
            }
            Some(MTok::LParen) => {
                self.pos += 1;
                let inner = self.equation()?;
                self.expect(MTok::RParen, "')'")?;
                Ok(inner)
            }
            Some(MTok::Ident(name)) => {
                self.pos += 1;
                let is_fn = UNARY_OPS.contains(&name.as_str()) || name == "frac";
                if self.peek() == Some(&MTok::LParen) {
                    if !is_fn {
                        return Err(Error::parse(off, format!("unknown function '{name}'")));
                    }
                    self.pos += 1;
                    let mut args = vec![self.equation()?];
                    while self.peek() == Some(&MTok::Comma) {
                        self.pos += 1;
                        args.push(self.equation()?);
                    }
                    self.expect(MTok::RParen, "')'")?;
                    let want = if name == "frac" { 2 } else { 1 };
                    if args.len() != want {
                        return Err(Error::parse(off, format!("{name} takes {want} argument(s)")));
                    }
                    Ok(SyntaxTree::node(name, args))
                } else if is_fn {
                    Err(Error::parse(off, format!("function '{name}' used without arguments")))
                } else {
                    Ok(SyntaxTree::symbol(name))
                }
            }
            Some(_) => Err(Error::parse(off, "unexpected token")),
            None => Err(Error::parse(off, "unexpected end of input")),
        }
    }
}

/// Parses an infix expression into its operator tree.
pub fn parse_math_expression(text: &str) -> Result<SyntaxTree> {
    let toks = lex_math(text)?;
    let mut p = MathParser { toks, pos: 0, end: text.len() };
    let tree = p.equation()?;
    if p.pos != p.toks.len() {
        return Err(Error::parse(p.offset(), "trailing input"));
    }
    Ok(tree)
}

/// Distinct variable names in order of first appearance.
pub fn variables(tree: &SyntaxTree) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    fn walk(t: &SyntaxTree, out: &mut Vec<String>) {
        if t.label == "Symbol" {
            if let Some(c) = t.children.first() {
                if !out.contains(&c.label) {
                    out.push(c.label.clone());
                }
            }
            return;
        }
        for c in &t.children {
            walk(c, out);
        }
    }
    walk(tree, &mut out);
    out
}

/// Renames every occurrence of variable `from` to `to`.
pub fn rename_variable(tree: &SyntaxTree, from: &str, to: &str) -> SyntaxTree {
    if tree.label == "Symbol" && tree.children.first().is_some_and(|c| c.label == from) {
        return SyntaxTree::symbol(to);
    }
    SyntaxTree {
        label: tree.label.clone(),
        children: tree.children.iter().map(|c| rename_variable(c, from, to)).collect(),
    }
}

fn is_const(t: &SyntaxTree, var: &str) -> bool {
    !variables(t).iter().any(|v| v == var)
}

fn int_value(t: &SyntaxTree) -> Option<i64> {
    (t.label == "Integer").then(|| t.children[0].label.parse().ok()).flatten()
}

fn make_add(terms: Vec<SyntaxTree>) -> SyntaxTree {
    let mut kept: Vec<SyntaxTree> = Vec::new();
    for t in terms {
        if int_value(&t) == Some(0) {
            continue;
        }
        if t.label == "Add" {
            kept.extend(t.children);
        } else {
            kept.push(t);
        }
    }
    match kept.len() {
        0 => SyntaxTree::integer(0),
        1 => kept.pop().unwrap(),
        _ => SyntaxTree::node("Add", kept),
    }
}

fn make_mul(factors: Vec<SyntaxTree>) -> SyntaxTree {
    let mut kept: Vec<SyntaxTree> = Vec::new();
    for f in factors {
        match int_value(&f) {
            Some(0) => return SyntaxTree::integer(0),
            Some(1) => continue,
            _ => {}
        }
        if f.label == "Mul" {
            kept.extend(f.children);
        } else {
            kept.push(f);
        }
    }
    match kept.len() {
        0 => SyntaxTree::integer(1),
        1 => kept.pop().unwrap(),
        _ => SyntaxTree::node("Mul", kept),
    }
}

/// Symbolic derivative with light simplification (zero/one elimination).
pub fn differentiate(t: &SyntaxTree, var: &str) -> SyntaxTree {
    let d = |x: &SyntaxTree| differentiate(x, var);
    let ch = &t.children;
    match t.label.as_str() {
        "Symbol" => SyntaxTree::integer(i64::from(ch[0].label == var)),
        "Integer" => SyntaxTree::integer(0),
        "Add" => make_add(ch.iter().map(d).collect()),
        "Mul" => {
            let mut terms = Vec::new();
            for i in 0..ch.len() {
                let mut factors: Vec<SyntaxTree> = ch.clone();
                factors[i] = d(&ch[i]);
                terms.push(make_mul(factors));
            }
            make_add(terms)
        }
        "Pow" => {
            let (base, exp) = (&ch[0], &ch[1]);
            if is_const(exp, var) {
                let lowered = make_add(vec![exp.clone(), SyntaxTree::integer(-1)]);
                make_mul(vec![exp.clone(), SyntaxTree::node("Pow", vec![base.clone(), lowered]), d(base)])
            } else {
                // d(a^b) = a^b (b' log a + b a'/a)
                let term1 = make_mul(vec![d(exp), SyntaxTree::node("log", vec![base.clone()])]);
                let term2 = make_mul(vec![exp.clone(), SyntaxTree::node("frac", vec![d(base), base.clone()])]);
                make_mul(vec![t.clone(), make_add(vec![term1, term2])])
            }
        }
        "sin" => make_mul(vec![SyntaxTree::node("cos", ch.clone()), d(&ch[0])]),
        "cos" => make_mul(vec![SyntaxTree::integer(-1), SyntaxTree::node("sin", ch.clone()), d(&ch[0])]),
        "exp" => make_mul(vec![t.clone(), d(&ch[0])]),
        "log" => {
            let inner = d(&ch[0]);
            if int_value(&inner) == Some(0) {
                inner
            } else {
                SyntaxTree::node("frac", vec![inner, ch[0].clone()])
            }
        }
        "frac" => {
            let (num, den) = (&ch[0], &ch[1]);
            let top = make_add(vec![
                make_mul(vec![d(num), den.clone()]),
                make_mul(vec![SyntaxTree::integer(-1), num.clone(), d(den)]),
            ]);
            if int_value(&top) == Some(0) {
                top
            } else {
                SyntaxTree::node("frac", vec![top, SyntaxTree::node("Pow", vec![den.clone(), SyntaxTree::integer(2)])])
            }
        }
        "Eq" => SyntaxTree::node("Eq", ch.iter().map(d).collect()),
        _ => SyntaxTree::integer(0),
    }
}

/// Antiderivative by table lookup, or `None` when no rule applies. Handles
/// sums, constant multiples and quotients by constants of `x`, `x**n`,
/// `sin(x)`, `cos(x)` and `exp(x)`.
pub fn integrate(t: &SyntaxTree, var: &str) -> Option<SyntaxTree> {
    let x = || SyntaxTree::symbol(var);
    if is_const(t, var) {
        return Some(make_mul(vec![t.clone(), x()]));
    }
    let ch = &t.children;
    let is_var = |u: &SyntaxTree| u.label == "Symbol" && u.children[0].label == var;
    match t.label.as_str() {
        "Symbol" => Some(SyntaxTree::node("frac", vec![SyntaxTree::node("Pow", vec![x(), SyntaxTree::integer(2)]), SyntaxTree::integer(2)])),
        "Pow" if is_var(&ch[0]) => {
            let n = int_value(&ch[1]).filter(|&n| n != -1)?;
            Some(SyntaxTree::node(
                "frac",
                vec![SyntaxTree::node("Pow", vec![x(), SyntaxTree::integer(n + 1)]), SyntaxTree::integer(n + 1)],
            ))
        }
        "sin" if is_var(&ch[0]) => Some(make_mul(vec![SyntaxTree::integer(-1), SyntaxTree::node("cos", vec![x()])])),
        "cos" if is_var(&ch[0]) => Some(SyntaxTree::node("sin", vec![x()])),
        "exp" if is_var(&ch[0]) => Some(t.clone()),
        "Add" => ch.iter().map(|c| integrate(c, var)).collect::<Option<Vec<_>>>().map(make_add),
        "Mul" => {
            let varying: Vec<usize> = (0..ch.len()).filter(|&i| !is_const(&ch[i], var)).collect();
            let [i] = varying[..] else { return None };
            let mut factors = ch.clone();
            factors[i] = integrate(&ch[i], var)?;
            Some(make_mul(factors))
        }
        "frac" if is_const(&ch[1], var) => Some(SyntaxTree::node("frac", vec![integrate(&ch[0], var)?, ch[1].clone()])),
        _ => None,
    }
}
