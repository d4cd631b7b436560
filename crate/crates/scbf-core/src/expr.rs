//! Dynamics expressions: parsing, evaluation, interval enclosure.
//!
//! Each component of the system map `f(x, u)` is written in a small textual
//! language: state variables `x1..xn` (or `x_1`), control variables `u1..um`,
//! floating constants, `+ - *`, unary minus, parentheses, and the functions
//! `sin`/`cos`. After parsing, a fusion pass collapses every purely affine
//! subtree into a single [`Expr::Affine`] node. That canonicalization is what
//! makes interval evaluation exact for affine dynamics (each variable appears
//! once, so there is no dependency blow-up) and lets the relaxation layer
//! treat affine nodes without slack.

use crate::interval::Interval;
use thiserror::Error;

/// A state (`x_i`) or control (`u_j`) variable, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    State(usize),
    Control(usize),
}

/// Expression tree for one component of the dynamics.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    /// Fused affine combination `Σ coeff·var + constant`. Variables are
    /// distinct and ordered (states by index, then controls by index).
    Affine { terms: Vec<(f64, Var)>, constant: f64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at byte {pos}")]
    UnexpectedChar { pos: usize, ch: char },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected {expected} at byte {pos}, found {found:?}")]
    Unexpected {
        pos: usize,
        found: String,
        expected: &'static str,
    },
    #[error("unknown identifier {name:?} at byte {pos} (expected x<i>, u<j>, sin, cos)")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable {name:?} at byte {pos} out of range: system has {count} of this kind")]
    IndexOutOfRange {
        pos: usize,
        name: String,
        count: usize,
    },
    #[error("malformed number at byte {pos}")]
    BadNumber { pos: usize },
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                toks.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Optional exponent.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text
                    .parse()
                    .map_err(|_| ParseError::BadNumber { pos: start })?;
                toks.push((start, Tok::Num(v)));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                toks.push((start, Tok::Ident(src[start..i].to_string())));
            }
            _ => return Err(ParseError::UnexpectedChar { pos: i, ch: c }),
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Recursive-descent parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    n_states: usize,
    n_controls: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<&(usize, Tok)> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some((_, tok)) = self.peek() {
            match tok {
                Tok::Plus => {
                    self.next();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.next();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while let Some((_, Tok::Star)) = self.peek() {
            self.next();
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.next();
            let inner = self.factor()?;
            return Ok(Expr::Mul(Box::new(Expr::Const(-1.0)), Box::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let (pos, tok) = match self.next() {
            Some(t) => (t.0, t.1.clone()),
            None => return Err(ParseError::UnexpectedEnd),
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.next() {
                    Some((_, Tok::RParen)) => Ok(inner),
                    Some((p, t)) => Err(ParseError::Unexpected {
                        pos: *p,
                        found: format!("{t:?}"),
                        expected: "closing parenthesis",
                    }),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Tok::Ident(name) => self.ident(pos, &name),
            other => Err(ParseError::Unexpected {
                pos,
                found: format!("{other:?}"),
                expected: "number, variable, function, or parenthesis",
            }),
        }
    }

    fn ident(&mut self, pos: usize, name: &str) -> Result<Expr, ParseError> {
        match name {
            "sin" | "cos" => {
                match self.next() {
                    Some((_, Tok::LParen)) => {}
                    Some((p, t)) => {
                        return Err(ParseError::Unexpected {
                            pos: *p,
                            found: format!("{t:?}"),
                            expected: "opening parenthesis after function name",
                        })
                    }
                    None => return Err(ParseError::UnexpectedEnd),
                }
                let inner = self.expr()?;
                match self.next() {
                    Some((_, Tok::RParen)) => {}
                    Some((p, t)) => {
                        return Err(ParseError::Unexpected {
                            pos: *p,
                            found: format!("{t:?}"),
                            expected: "closing parenthesis",
                        })
                    }
                    None => return Err(ParseError::UnexpectedEnd),
                }
                Ok(if name == "sin" {
                    Expr::Sin(Box::new(inner))
                } else {
                    Expr::Cos(Box::new(inner))
                })
            }
            _ => {
                let (kind, rest) = name.split_at(1);
                let digits = rest.strip_prefix('_').unwrap_or(rest);
                let index: usize = digits.parse().map_err(|_| ParseError::UnknownIdentifier {
                    pos,
                    name: name.to_string(),
                })?;
                let (count, var) = match kind {
                    "x" => (self.n_states, Var::State(index.wrapping_sub(1))),
                    "u" => (self.n_controls, Var::Control(index.wrapping_sub(1))),
                    _ => {
                        return Err(ParseError::UnknownIdentifier {
                            pos,
                            name: name.to_string(),
                        })
                    }
                };
                if index == 0 || index > count {
                    return Err(ParseError::IndexOutOfRange {
                        pos,
                        name: name.to_string(),
                        count,
                    });
                }
                Ok(Expr::Var(var))
            }
        }
    }
}

/// Parse one dynamics component. Variable indices in the source are 1-based
/// (`x1` is the first state); out-of-range indices are rejected here so every
/// later phase can index unchecked.
pub fn parse(src: &str, n_states: usize, n_controls: usize) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        n_states,
        n_controls,
    };
    let e = p.expr()?;
    if let Some((pos, tok)) = p.peek() {
        return Err(ParseError::Unexpected {
            pos: *pos,
            found: format!("{tok:?}"),
            expected: "end of expression or operator",
        });
    }
    Ok(simplify(e))
}

// ---------------------------------------------------------------------------
// Affine fusion
// ---------------------------------------------------------------------------

/// Try to express a subtree as `Σ coeff·var + constant`.
fn as_affine(e: &Expr) -> Option<(Vec<(f64, Var)>, f64)> {
    match e {
        Expr::Const(c) => Some((Vec::new(), *c)),
        Expr::Var(v) => Some((vec![(1.0, *v)], 0.0)),
        Expr::Affine { terms, constant } => Some((terms.clone(), *constant)),
        Expr::Add(a, b) => {
            let (ta, ca) = as_affine(a)?;
            let (tb, cb) = as_affine(b)?;
            Some((merge_terms(ta, tb, 1.0), ca + cb))
        }
        Expr::Sub(a, b) => {
            let (ta, ca) = as_affine(a)?;
            let (tb, cb) = as_affine(b)?;
            Some((merge_terms(ta, tb, -1.0), ca - cb))
        }
        Expr::Mul(a, b) => {
            let (ta, ca) = as_affine(a)?;
            let (tb, cb) = as_affine(b)?;
            if ta.is_empty() {
                Some((tb.into_iter().map(|(k, v)| (k * ca, v)).collect(), ca * cb))
            } else if tb.is_empty() {
                Some((ta.into_iter().map(|(k, v)| (k * cb, v)).collect(), ca * cb))
            } else {
                None // product of two genuinely affine parts is quadratic
            }
        }
        Expr::Sin(_) | Expr::Cos(_) => None,
    }
}

fn merge_terms(a: Vec<(f64, Var)>, b: Vec<(f64, Var)>, sign: f64) -> Vec<(f64, Var)> {
    let mut acc: std::collections::BTreeMap<Var, f64> = std::collections::BTreeMap::new();
    for (k, v) in a {
        *acc.entry(v).or_insert(0.0) += k;
    }
    for (k, v) in b {
        *acc.entry(v).or_insert(0.0) += sign * k;
    }
    acc.into_iter()
        .filter(|&(_, k)| k != 0.0)
        .map(|(v, k)| (k, v))
        .collect()
}

/// Bottom-up canonicalization: fuse affine subtrees, fold constants.
pub fn simplify(e: Expr) -> Expr {
    if let Some((terms, constant)) = as_affine(&e) {
        return if terms.is_empty() {
            Expr::Const(constant)
        } else if terms.len() == 1 && terms[0].0 == 1.0 && constant == 0.0 {
            Expr::Var(terms[0].1)
        } else {
            Expr::Affine { terms, constant }
        };
    }
    match e {
        Expr::Add(a, b) => Expr::Add(Box::new(simplify(*a)), Box::new(simplify(*b))),
        Expr::Sub(a, b) => Expr::Sub(Box::new(simplify(*a)), Box::new(simplify(*b))),
        Expr::Mul(a, b) => Expr::Mul(Box::new(simplify(*a)), Box::new(simplify(*b))),
        Expr::Sin(a) => Expr::Sin(Box::new(simplify(*a))),
        Expr::Cos(a) => Expr::Cos(Box::new(simplify(*a))),
        leaf => leaf,
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

impl Expr {
    /// Pointwise evaluation.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Control(j)) => u[*j],
            Expr::Add(a, b) => a.eval(x, u) + b.eval(x, u),
            Expr::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
            Expr::Mul(a, b) => a.eval(x, u) * b.eval(x, u),
            Expr::Sin(a) => a.eval(x, u).sin(),
            Expr::Cos(a) => a.eval(x, u).cos(),
            Expr::Affine { terms, constant } => {
                terms.iter().fold(*constant, |acc, &(k, v)| {
                    acc + k * match v {
                        Var::State(i) => x[i],
                        Var::Control(j) => u[j],
                    }
                })
            }
        }
    }

    /// Interval enclosure over a state box and control box. Exact for fused
    /// affine nodes; products of independent subtrees use the exact product
    /// rule, so fully affine and bilinear dynamics get sharp enclosures.
    pub fn interval_eval(&self, x: &[Interval<f64>], u: &[Interval<f64>]) -> Interval<f64> {
        match self {
            Expr::Const(c) => Interval::point(*c),
            Expr::Var(Var::State(i)) => x[*i],
            Expr::Var(Var::Control(j)) => u[*j],
            Expr::Add(a, b) => a.interval_eval(x, u).add(b.interval_eval(x, u)),
            Expr::Sub(a, b) => a.interval_eval(x, u).sub(b.interval_eval(x, u)),
            Expr::Mul(a, b) => a.interval_eval(x, u).mul(b.interval_eval(x, u)),
            Expr::Sin(a) => a.interval_eval(x, u).sin(),
            Expr::Cos(a) => a.interval_eval(x, u).cos(),
            Expr::Affine { terms, constant } => {
                let mut acc = Interval::point(*constant);
                for &(k, v) in terms {
                    let iv = match v {
                        Var::State(i) => x[i],
                        Var::Control(j) => u[j],
                    };
                    acc = acc.add(iv.scale(k));
                }
                acc
            }
        }
    }

    /// All variables appearing in the expression.
    pub fn variables(&self) -> std::collections::BTreeSet<Var> {
        let mut out = std::collections::BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut std::collections::BTreeSet<Var>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(*v);
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Sin(a) | Expr::Cos(a) => a.collect_vars(out),
            Expr::Affine { terms, .. } => {
                for &(_, v) in terms {
                    out.insert(v);
                }
            }
        }
    }
}
