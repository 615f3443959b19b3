//! Arithmetic expressions and guard formulas.
//!
//! One grammar is shared by rate laws, automaton guards and updates:
//!
//! ```text
//! guard := conj ("||" conj)*
//! conj  := atom ("&&" atom)*
//! atom  := "true" | "false" | "(" guard ")" | expr CMP expr
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := primary ("^" unary)?
//! primary := number | ident | ident "(" expr ("," expr)* ")" | "(" expr ")"
//! CMP   := "<" | "<=" | ">" | ">=" | "==" | "="
//! ```
//!
//! Identifiers are parsed as plain names and bound to [`Symbol`] slots
//! with [`Expr::resolve`] once the surrounding document is known.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Absolute tolerance for pointwise float comparisons in guards.
pub const GUARD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at column {column}")]
pub struct ParseError {
    pub message: String,
    /// 1-based column inside the expression source.
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Param(usize),
    Species(usize),
    Var(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<(Func, usize)> {
        match name {
            "min" => Some((Func::Min, 2)),
            "max" => Some((Func::Max, 2)),
            "abs" => Some((Func::Abs, 1)),
            "sqrt" => Some((Func::Sqrt, 1)),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Expression tree over leaves of type `S`: `String` before name
/// resolution, [`Symbol`] after.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr<S = Symbol> {
    Const(f64),
    Sym(S),
    Neg(Box<Expr<S>>),
    Bin(BinOp, Box<Expr<S>>, Box<Expr<S>>),
    Call(Func, Vec<Expr<S>>),
}

/// Values the leaves of a resolved expression read from.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub params: &'a [f64],
    pub species: &'a [u64],
    pub vars: &'a [f64],
}

impl<S> Expr<S> {
    pub fn constant(value: f64) -> Self {
        Expr::Const(value)
    }

    pub fn bin(op: BinOp, lhs: Expr<S>, rhs: Expr<S>) -> Self {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn call(func: Func, args: Vec<Expr<S>>) -> Self {
        Expr::Call(func, args)
    }

    /// Visits every leaf symbol.
    pub fn for_each_symbol<'s>(&'s self, f: &mut impl FnMut(&'s S)) {
        match self {
            Expr::Const(_) => {}
            Expr::Sym(s) => f(s),
            Expr::Neg(e) => e.for_each_symbol(f),
            Expr::Bin(_, a, b) => {
                a.for_each_symbol(f);
                b.for_each_symbol(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_symbol(f)),
        }
    }
}

impl Expr<String> {
    /// Binds every identifier through `lookup`, which may return a symbol
    /// or a whole replacement sub-expression (e.g. a named constant).
    pub fn resolve<F>(&self, lookup: &F) -> Result<Expr<Symbol>, String>
    where
        F: Fn(&str) -> Option<Expr<Symbol>>,
    {
        Ok(match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Sym(name) => lookup(name).ok_or_else(|| name.clone())?,
            Expr::Neg(e) => Expr::Neg(Box::new(e.resolve(lookup)?)),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.resolve(lookup)?, b.resolve(lookup)?),
            Expr::Call(f, args) => Expr::Call(
                *f,
                args.iter()
                    .map(|a| a.resolve(lookup))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

impl Expr<Symbol> {
    pub fn var(i: usize) -> Self {
        Expr::Sym(Symbol::Var(i))
    }

    pub fn species(i: usize) -> Self {
        Expr::Sym(Symbol::Species(i))
    }

    pub fn param(i: usize) -> Self {
        Expr::Sym(Symbol::Param(i))
    }

    pub fn eval(&self, env: &Env<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Sym(Symbol::Param(i)) => env.params[*i],
            Expr::Sym(Symbol::Species(i)) => env.species[*i] as f64,
            Expr::Sym(Symbol::Var(i)) => env.vars[*i],
            Expr::Neg(e) => -e.eval(env),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(env), b.eval(env));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(f, args) => match f {
                Func::Min => args[0].eval(env).min(args[1].eval(env)),
                Func::Max => args[0].eval(env).max(args[1].eval(env)),
                Func::Abs => args[0].eval(env).abs(),
                Func::Sqrt => args[0].eval(env).sqrt(),
            },
        }
    }

    pub fn mentions_vars(&self) -> bool {
        let mut found = false;
        self.for_each_symbol(&mut |s| found |= matches!(s, Symbol::Var(_)));
        found
    }

    /// Splits the expression into `Σ coeffᵢ·varᵢ + constant` where the
    /// coefficients and the constant do not mention automaton variables.
    /// Returns `None` for expressions that are not affine in the variables.
    pub fn linearize(&self) -> Option<LinearForm> {
        if !self.mentions_vars() {
            return Some(LinearForm::constant(self.clone()));
        }
        match self {
            Expr::Sym(Symbol::Var(i)) => {
                let mut terms = BTreeMap::new();
                terms.insert(*i, Expr::Const(1.0));
                Some(LinearForm {
                    terms,
                    constant: Expr::Const(0.0),
                })
            }
            Expr::Neg(e) => Some(e.linearize()?.scale(&Expr::Const(-1.0))),
            Expr::Bin(BinOp::Add, a, b) => Some(a.linearize()?.add(b.linearize()?, false)),
            Expr::Bin(BinOp::Sub, a, b) => Some(a.linearize()?.add(b.linearize()?, true)),
            Expr::Bin(BinOp::Mul, a, b) => {
                if !a.mentions_vars() {
                    Some(b.linearize()?.scale(a))
                } else if !b.mentions_vars() {
                    Some(a.linearize()?.scale(b))
                } else {
                    None
                }
            }
            Expr::Bin(BinOp::Div, a, b) if !b.mentions_vars() => {
                let inv = Expr::bin(BinOp::Div, Expr::Const(1.0), (**b).clone());
                Some(a.linearize()?.scale(&inv))
            }
            _ => None,
        }
    }
}

/// Affine decomposition produced by [`Expr::linearize`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub terms: BTreeMap<usize, Expr>,
    pub constant: Expr,
}

impl LinearForm {
    fn constant(c: Expr) -> Self {
        LinearForm {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    fn scale(mut self, factor: &Expr) -> Self {
        for coeff in self.terms.values_mut() {
            *coeff = Expr::bin(BinOp::Mul, factor.clone(), coeff.clone());
        }
        self.constant = Expr::bin(BinOp::Mul, factor.clone(), self.constant);
        self
    }

    fn add(mut self, other: LinearForm, subtract: bool) -> Self {
        let op = if subtract { BinOp::Sub } else { BinOp::Add };
        for (i, coeff) in other.terms {
            let merged = match self.terms.remove(&i) {
                Some(mine) => Expr::bin(op, mine, coeff),
                None if subtract => Expr::Neg(Box::new(coeff)),
                None => coeff,
            };
            self.terms.insert(i, merged);
        }
        self.constant = Expr::bin(op, self.constant, other.constant);
        self
    }

    /// Value and time derivative of the form when every variable `i`
    /// moves at rate `rates[i]`.
    pub fn value_and_slope(&self, env: &Env<'_>, rates: &[f64]) -> (f64, f64) {
        let mut value = self.constant.eval(env);
        let mut slope = 0.0;
        for (&i, coeff) in &self.terms {
            let c = coeff.eval(env);
            value += c * env.vars[i];
            slope += c * rates[i];
        }
        (value, slope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    /// Tolerant comparison of `diff = lhs - rhs` against zero.
    pub fn holds(self, diff: f64) -> bool {
        let tol = GUARD_TOLERANCE;
        match self {
            CmpOp::Lt => diff < -tol,
            CmpOp::Le => diff <= tol,
            CmpOp::Gt => diff > tol,
            CmpOp::Ge => diff >= -tol,
            CmpOp::Eq => diff.abs() <= tol,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Guard<S = Symbol> {
    Const(bool),
    Cmp(CmpOp, Expr<S>, Expr<S>),
    And(Vec<Guard<S>>),
    Or(Vec<Guard<S>>),
}

impl<S> Guard<S> {
    pub fn for_each_expr<'s>(&'s self, f: &mut impl FnMut(&'s Expr<S>)) {
        match self {
            Guard::Const(_) => {}
            Guard::Cmp(_, a, b) => {
                f(a);
                f(b);
            }
            Guard::And(gs) | Guard::Or(gs) => gs.iter().for_each(|g| g.for_each_expr(f)),
        }
    }

    /// True when only left-closed comparisons (`<=`, `>=`, `==`) occur.
    pub fn is_left_closed(&self) -> bool {
        match self {
            Guard::Const(_) => true,
            Guard::Cmp(op, ..) => matches!(op, CmpOp::Le | CmpOp::Ge | CmpOp::Eq),
            Guard::And(gs) | Guard::Or(gs) => gs.iter().all(Guard::is_left_closed),
        }
    }
}

impl Guard<String> {
    pub fn resolve<F>(&self, lookup: &F) -> Result<Guard<Symbol>, String>
    where
        F: Fn(&str) -> Option<Expr<Symbol>>,
    {
        Ok(match self {
            Guard::Const(b) => Guard::Const(*b),
            Guard::Cmp(op, a, b) => Guard::Cmp(*op, a.resolve(lookup)?, b.resolve(lookup)?),
            Guard::And(gs) => Guard::And(
                gs.iter()
                    .map(|g| g.resolve(lookup))
                    .collect::<Result<_, _>>()?,
            ),
            Guard::Or(gs) => Guard::Or(
                gs.iter()
                    .map(|g| g.resolve(lookup))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

impl Guard<Symbol> {
    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Self {
        Guard::Cmp(op, lhs, rhs)
    }

    pub fn holds(&self, env: &Env<'_>) -> bool {
        match self {
            Guard::Const(b) => *b,
            Guard::Cmp(op, a, b) => op.holds(a.eval(env) - b.eval(env)),
            Guard::And(gs) => gs.iter().all(|g| g.holds(env)),
            Guard::Or(gs) => gs.iter().any(|g| g.holds(env)),
        }
    }
}

impl<S: fmt::Display> fmt::Display for Expr<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a}{sym}{b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Param(i) => write!(f, "$p{i}"),
            Symbol::Species(i) => write!(f, "$s{i}"),
            Symbol::Var(i) => write!(f, "$v{i}"),
        }
    }
}

impl<S: fmt::Display> fmt::Display for Guard<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::Const(b) => write!(f, "{b}"),
            Guard::Cmp(op, a, b) => write!(f, "{a} {} {b}", op.symbol()),
            Guard::And(gs) | Guard::Or(gs) => {
                let sep = if matches!(self, Guard::And(_)) {
                    " && "
                } else {
                    " || "
                };
                write!(f, "(")?;
                for (i, g) in gs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "{sep}")?;
                    }
                    write!(f, "{g}")?;
                }
                write!(f, ")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit()
            || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
        {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value = text.parse::<f64>().map_err(|_| ParseError {
                message: format!("malformed number `{text}`"),
                column: col,
            })?;
            out.push((Tok::Num(value), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), col));
        } else {
            let two = src.get(i..i + 2).unwrap_or("");
            let op: &'static str = match two {
                "<=" => "<=",
                ">=" => ">=",
                "==" => "==",
                "&&" => "&&",
                "||" => "||",
                _ => match c {
                    '+' => "+",
                    '-' => "-",
                    '*' => "*",
                    '/' => "/",
                    '^' => "^",
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    '<' => "<",
                    '>' => ">",
                    '=' => "=",
                    _ => {
                        return Err(ParseError {
                            message: format!("unexpected character `{c}`"),
                            column: col,
                        })
                    }
                },
            };
            i += op.len();
            out.push((Tok::Op(op), col));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end_col: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser {
            toks: tokenize(src)?,
            pos: 0,
            end_col: src.len() + 1,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            message: message.into(),
            column: self.column(),
        })
    }

    fn eat(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: &str) -> Result<(), ParseError> {
        if self.eat(op) {
            Ok(())
        } else {
            self.error(format!("expected `{op}`"))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            self.error("unexpected trailing input")
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr<String>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr<String>, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr<String>, ParseError> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.primary()?;
        if self.eat("^") {
            // right-associative, binds tighter than unary minus on the left
            return Ok(Expr::bin(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr<String>, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(name)) => {
                let col = self.column();
                self.pos += 1;
                if !self.eat("(") {
                    return Ok(Expr::Sym(name));
                }
                let Some((func, arity)) = Func::from_name(&name) else {
                    return Err(ParseError {
                        message: format!("unknown function `{name}`"),
                        column: col,
                    });
                };
                let mut args = vec![self.expr()?];
                while self.eat(",") {
                    args.push(self.expr()?);
                }
                self.expect(")")?;
                if args.len() != arity {
                    return Err(ParseError {
                        message: format!("`{name}` takes {arity} argument(s), got {}", args.len()),
                        column: col,
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Some(_) => self.error("expected a number, identifier or `(`"),
            None => self.error("unexpected end of expression"),
        }
    }

    fn guard(&mut self) -> Result<Guard<String>, ParseError> {
        let mut parts = vec![self.conj()?];
        while self.eat("||") {
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Guard::Or(parts)
        })
    }

    fn conj(&mut self) -> Result<Guard<String>, ParseError> {
        let mut parts = vec![self.atom()?];
        while self.eat("&&") {
            parts.push(self.atom()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Guard::And(parts)
        })
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek()? {
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Op("==") | Tok::Op("=") => CmpOp::Eq,
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn atom(&mut self) -> Result<Guard<String>, ParseError> {
        if let Some(Tok::Ident(name)) = self.peek() {
            let lit = match name.as_str() {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            };
            if let Some(b) = lit {
                self.pos += 1;
                return Ok(Guard::Const(b));
            }
        }
        if matches!(self.peek(), Some(Tok::Op("("))) {
            // Either a parenthesised guard or an arithmetic sub-expression.
            let save = self.pos;
            self.pos += 1;
            if let Ok(g) = self.guard() {
                if self.eat(")") && self.at_guard_boundary() {
                    return Ok(g);
                }
            }
            self.pos = save;
        }
        let lhs = self.expr()?;
        let Some(op) = self.cmp_op() else {
            return self.error("expected a comparison operator");
        };
        let rhs = self.expr()?;
        Ok(Guard::Cmp(op, lhs, rhs))
    }

    fn at_guard_boundary(&self) -> bool {
        matches!(self.peek(), None | Some(Tok::Op("&&" | "||" | ")")))
    }
}

/// Parses an arithmetic expression.
pub fn parse_expr(src: &str) -> Result<Expr<String>, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Parses a guard formula.
pub fn parse_guard(src: &str) -> Result<Guard<String>, ParseError> {
    let mut p = Parser::new(src)?;
    let g = p.guard()?;
    p.finish()?;
    Ok(g)
}
