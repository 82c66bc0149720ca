//! Formula representation, canonical text form and evaluation.
//!
//! A formula is stored as a postfix token sequence; its length is the token
//! count. The text form is prefix function-call notation, e.g.
//! `add(rk,inv(add(tk,inv(2))))`.

use std::fmt;
use std::str::FromStr;

use crate::bandit::ArmStats;
use crate::error::{Error, Result};
use crate::policies::IndexFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Empirical mean of the arm.
    Rk,
    /// Empirical standard deviation of the arm.
    Sk,
    /// Number of plays of the arm.
    Tk,
    /// Current round.
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Sqrt,
    Ln,
    Abs,
    Neg,
    Inv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

pub const VARIABLES: [Var; 4] = [Var::Rk, Var::Sk, Var::Tk, Var::T];
pub const CONSTANTS: [u8; 5] = [1, 2, 3, 5, 7];
pub const UNARY_OPS: [UnaryOp; 5] = [
    UnaryOp::Sqrt,
    UnaryOp::Ln,
    UnaryOp::Abs,
    UnaryOp::Neg,
    UnaryOp::Inv,
];
pub const BINARY_OPS: [BinaryOp; 6] = [
    BinaryOp::Add,
    BinaryOp::Sub,
    BinaryOp::Mul,
    BinaryOp::Div,
    BinaryOp::Min,
    BinaryOp::Max,
];

impl Var {
    pub fn name(self) -> &'static str {
        match self {
            Var::Rk => "rk",
            Var::Sk => "sk",
            Var::Tk => "tk",
            Var::T => "t",
        }
    }
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Ln => "ln",
            UnaryOp::Abs => "abs",
            UnaryOp::Neg => "neg",
            UnaryOp::Inv => "inv",
        }
    }

    /// Raw result, possibly non-finite. Negative zero is folded into positive
    /// zero so that equal values have equal bits.
    #[inline]
    pub fn eval_raw(self, x: f64) -> f64 {
        (match self {
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Ln => x.ln(),
            UnaryOp::Abs => x.abs(),
            UnaryOp::Neg => -x,
            UnaryOp::Inv => 1.0 / x,
        }) + 0.0
    }

    /// `None` when the result is not finite.
    #[inline]
    pub fn apply(self, x: f64) -> Option<f64> {
        let y = self.eval_raw(x);
        y.is_finite().then_some(y)
    }
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    #[inline]
    pub fn eval_raw(self, a: f64, b: f64) -> f64 {
        (match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Min => a.min(b),
            BinaryOp::Max => a.max(b),
        }) + 0.0
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> Option<f64> {
        let y = self.eval_raw(a, b);
        y.is_finite().then_some(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Var(Var),
    Const(u8),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Values of the four formula variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub rk: f64,
    pub sk: f64,
    pub tk: f64,
    pub t: f64,
}

impl Point {
    pub fn from_stats(stats: &ArmStats, t: u64) -> Self {
        Point {
            rk: stats.mean,
            sk: stats.stddev,
            tk: stats.plays as f64,
            t: t as f64,
        }
    }

    #[inline]
    pub fn get(&self, v: Var) -> f64 {
        match v {
            Var::Rk => self.rk,
            Var::Sk => self.sk,
            Var::Tk => self.tk,
            Var::T => self.t,
        }
    }
}

/// A well-formed expression over the formula grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Formula {
    tokens: Vec<Token>,
}

impl Formula {
    pub fn var(v: Var) -> Self {
        Formula {
            tokens: vec![Token::Var(v)],
        }
    }

    /// Panics unless `c` is one of [`CONSTANTS`].
    pub fn constant(c: u8) -> Self {
        assert!(CONSTANTS.contains(&c), "constant {c} is not in the grammar");
        Formula {
            tokens: vec![Token::Const(c)],
        }
    }

    pub fn unary(op: UnaryOp, child: &Formula) -> Self {
        let mut tokens = Vec::with_capacity(child.len() + 1);
        tokens.extend_from_slice(&child.tokens);
        tokens.push(Token::Unary(op));
        Formula { tokens }
    }

    pub fn binary(op: BinaryOp, left: &Formula, right: &Formula) -> Self {
        let mut tokens = Vec::with_capacity(left.len() + right.len() + 1);
        tokens.extend_from_slice(&left.tokens);
        tokens.extend_from_slice(&right.tokens);
        tokens.push(Token::Binary(op));
        Formula { tokens }
    }

    /// Node count.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Value at `p`, or `None` if any intermediate value is not finite.
    pub fn eval(&self, p: &Point) -> Option<f64> {
        let mut buf = [0.0f64; 32];
        if self.tokens.len() <= buf.len() {
            eval_tokens(&self.tokens, p, &mut buf)
        } else {
            eval_tokens(&self.tokens, p, &mut vec![0.0; self.tokens.len()])
        }
    }
}

fn eval_tokens(tokens: &[Token], p: &Point, stack: &mut [f64]) -> Option<f64> {
    let mut sp = 0;
    for tok in tokens {
        match *tok {
            Token::Var(v) => {
                stack[sp] = p.get(v);
                sp += 1;
            }
            Token::Const(c) => {
                stack[sp] = c as f64;
                sp += 1;
            }
            Token::Unary(op) => stack[sp - 1] = op.apply(stack[sp - 1])?,
            Token::Binary(op) => {
                sp -= 1;
                stack[sp - 1] = op.apply(stack[sp - 1], stack[sp])?;
            }
        }
    }
    Some(stack[0])
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut stack: Vec<String> = Vec::new();
        for tok in &self.tokens {
            match *tok {
                Token::Var(v) => stack.push(v.name().to_string()),
                Token::Const(c) => stack.push(c.to_string()),
                Token::Unary(op) => {
                    let a = stack.pop().expect("well-formed formula");
                    stack.push(format!("{}({a})", op.name()));
                }
                Token::Binary(op) => {
                    let b = stack.pop().expect("well-formed formula");
                    let a = stack.pop().expect("well-formed formula");
                    stack.push(format!("{}({a},{b})", op.name()));
                }
            }
        }
        f.write_str(&stack.pop().unwrap_or_default())
    }
}

struct Parser<'a> {
    input: &'a str,
    pos: usize,
    tokens: Vec<Token>,
}

impl Parser<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::FormulaParse {
            input: self.input.to_string(),
            pos: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.input[self.pos..].starts_with(char::is_whitespace) {
            self.pos += self.input[self.pos..].chars().next().map_or(1, char::len_utf8);
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.input[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn word(&mut self) -> &str {
        self.skip_ws();
        let rest = &self.input[self.pos..];
        let n = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        let start = self.pos;
        self.pos += n;
        &self.input[start..self.pos]
    }

    fn expr(&mut self) -> Result<()> {
        let start = self.pos;
        let word = self.word().to_ascii_lowercase();
        if word.is_empty() {
            return Err(self.err("expected a variable, constant or operator"));
        }
        let leaf = match word.as_str() {
            "rk" | "r" | "rbar" => Some(Token::Var(Var::Rk)),
            "sk" | "s" | "sbar" | "sigma" => Some(Token::Var(Var::Sk)),
            "tk" => Some(Token::Var(Var::Tk)),
            "t" => Some(Token::Var(Var::T)),
            _ => match word.parse::<u8>() {
                Ok(c) if CONSTANTS.contains(&c) => Some(Token::Const(c)),
                Ok(_) => {
                    self.pos = start;
                    return Err(self.err(format!("constant {word} is not one of 1, 2, 3, 5, 7")));
                }
                Err(_) => None,
            },
        };
        if let Some(tok) = leaf {
            self.tokens.push(tok);
            return Ok(());
        }
        let unary = UNARY_OPS.iter().copied().find(|op| op.name() == word).or(match word.as_str() {
            "opposite" => Some(UnaryOp::Neg),
            "inverse" => Some(UnaryOp::Inv),
            _ => None,
        });
        let binary = BINARY_OPS.iter().copied().find(|op| op.name() == word);
        self.expect('(')?;
        if let Some(op) = unary {
            self.expr()?;
            self.expect(')')?;
            self.tokens.push(Token::Unary(op));
        } else if let Some(op) = binary {
            self.expr()?;
            self.expect(',')?;
            self.expr()?;
            self.expect(')')?;
            self.tokens.push(Token::Binary(op));
        } else {
            self.pos = start;
            return Err(self.err(format!("unknown operator `{word}`")));
        }
        Ok(())
    }
}

/// Parses the prefix notation produced by `Display`.
pub fn parse_formula(input: &str) -> Result<Formula> {
    let mut p = Parser {
        input,
        pos: 0,
        tokens: Vec::new(),
    };
    p.expr()?;
    p.skip_ws();
    if p.pos != input.len() {
        return Err(p.err("trailing input"));
    }
    Ok(Formula { tokens: p.tokens })
}

impl FromStr for Formula {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_formula(s)
    }
}

impl serde::Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A formula used as an index: `rk`, `sk`, `tk` and `t` are bound to the
/// arm's mean, standard deviation, play count and the current round. An
/// invalid evaluation yields NaN, which the index policy ranks last.
#[derive(Debug, Clone)]
pub struct FormulaIndex {
    formula: Formula,
}

impl FormulaIndex {
    pub fn new(formula: Formula) -> Self {
        FormulaIndex { formula }
    }

    pub fn formula(&self) -> &Formula {
        &self.formula
    }
}

impl IndexFunction for FormulaIndex {
    #[inline]
    fn index(&self, stats: &ArmStats, t: u64) -> f64 {
        self.formula
            .eval(&Point::from_stats(stats, t))
            .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(rk: f64, sk: f64, tk: f64, t: f64) -> Point {
        Point { rk, sk, tk, t }
    }

    #[test]
    fn arithmetic() {
        let f: Formula = "add(rk,div(2,tk))".parse().unwrap();
        assert_eq!(f.eval(&pt(0.5, 0.0, 4.0, 10.0)), Some(1.0));
        assert_eq!(f.len(), 5);
        let g: Formula = "add(rk,sqrt(div(mul(2,ln(t)),tk)))".parse().unwrap();
        assert_eq!(g.len(), 9);
        let ucb1 = 0.3 + (2.0 * 50f64.ln() / 7.0).sqrt();
        assert_eq!(g.eval(&pt(0.3, 0.1, 7.0, 50.0)), Some(ucb1));
    }

    #[test]
    fn invalid_points() {
        let f: Formula = "ln(sub(rk,2))".parse().unwrap();
        for r in [0.0, 0.3, 1.0] {
            assert_eq!(f.eval(&pt(r, 0.0, 1.0, 2.0)), None);
        }
        assert_eq!("inv(sk)".parse::<Formula>().unwrap().eval(&pt(0.0, 0.0, 1.0, 2.0)), None);
        assert_eq!("div(1,sub(tk,tk))".parse::<Formula>().unwrap().eval(&pt(0.0, 0.0, 1.0, 2.0)), None);
        assert_eq!("sqrt(neg(t))".parse::<Formula>().unwrap().eval(&pt(0.0, 0.0, 1.0, 2.0)), None);
        // ln(1) = 0 is fine, inverse of it is not
        assert_eq!("inv(ln(tk))".parse::<Formula>().unwrap().eval(&pt(0.0, 0.0, 1.0, 2.0)), None);
    }

    #[test]
    fn zero_factor() {
        let f: Formula = "mul(sqrt(tk),sub(rk,inv(2)))".parse().unwrap();
        for tk in [1.0, 2.0, 17.0, 9999.0] {
            assert_eq!(f.eval(&pt(0.5, 0.2, tk, 10_000.0)), Some(0.0));
        }
    }

    #[test]
    fn negative_zero_is_folded() {
        let f: Formula = "neg(sub(rk,rk))".parse().unwrap();
        let v = f.eval(&pt(0.4, 0.0, 1.0, 2.0)).unwrap();
        assert_eq!(v.to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn text_round_trip() {
        for s in [
            "rk",
            "7",
            "add(rk,inv(add(tk,inv(2))))",
            "max(min(sk,t),abs(neg(ln(3))))",
            "div(sub(mul(rk,5),1),sqrt(tk))",
        ] {
            let f: Formula = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
        }
        let f: Formula = " add ( rk , opposite( inverse(tk) ) ) ".parse().unwrap();
        assert_eq!(f.to_string(), "add(rk,neg(inv(tk)))");
    }

    #[test]
    fn parse_errors() {
        for s in ["", "add(rk)", "add(rk,tk", "foo(rk)", "4", "rk tk", "sqrt(rk,tk)", "add(rk,,tk)"] {
            assert!(s.parse::<Formula>().is_err(), "{s:?}");
        }
    }

    #[test]
    fn index_binding() {
        let f = FormulaIndex::new("add(rk,div(sk,sub(t,tk)))".parse().unwrap());
        let s = ArmStats::from_summary(4, 0.5, 0.25);
        assert_eq!(f.index(&s, 5), 0.75);
        assert!(f.index(&s, 4).is_nan());
    }
}
