//! HASL target expressions and their statistical estimation.
//!
//! ```text
//! Z ::= AVG(Y) | Z + Z | Z * Z | PDF(Y, step, start, stop) | CDF(Y, step, start, stop) | PROB()
//! Y ::= c | Y + Y | Y - Y | Y * Y | Y / Y | last(y) | min(v) | max(v)
//! ```
//!
//! `y` is any arithmetic expression over automaton variables; `min` and
//! `max` take a single variable because only per-variable extremes are
//! tracked during the run.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use super::{synchronize, Lha, RunResult};
use crate::expr::{self, Env, Expr};
use crate::ssa::{PathSource, SimError};

const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("invalid histogram: need step > 0 and start < stop")]
    BadHistogram,
    #[error("AVG needs at least 2 paths, got {0}")]
    TooFewPaths(u64),
    #[error("no accepted path: estimate undefined")]
    NoAcceptedPath,
    #[error("division by zero in path expression")]
    DivisionByZero,
    #[error("`+` and `*` combine scalar estimates only")]
    NonScalar,
    #[error(transparent)]
    Simulation(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum YOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A path expression `Y`.
#[derive(Debug, Clone, PartialEq)]
pub enum PathExpr {
    Const(f64),
    Last(Expr),
    Min(usize),
    Max(usize),
    Bin(YOp, Box<PathExpr>, Box<PathExpr>),
}

/// A target expression `Z`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetExpr {
    Avg(PathExpr),
    Prob,
    Pdf(Histogram),
    Cdf(Histogram),
    Add(Box<TargetExpr>, Box<TargetExpr>),
    Mul(Box<TargetExpr>, Box<TargetExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub y: PathExpr,
    pub step: f64,
    pub start: f64,
    pub stop: f64,
}

impl Histogram {
    pub fn bin_count(&self) -> usize {
        ((self.stop - self.start) / self.step).ceil().max(1.0) as usize
    }

    /// Bin of `v`; `stop` itself falls in the last bin.
    fn bin_of(&self, v: f64) -> Option<usize> {
        if !(self.start..=self.stop).contains(&v) {
            return None;
        }
        let k = ((v - self.start) / self.step).floor() as usize;
        Some(k.min(self.bin_count() - 1))
    }
}

impl PathExpr {
    pub fn eval(&self, run: &RunResult) -> Result<f64, EstimateError> {
        Ok(match self {
            PathExpr::Const(c) => *c,
            PathExpr::Last(y) => y.eval(&Env {
                params: &[],
                species: &[],
                vars: &run.final_valuation,
            }),
            PathExpr::Min(v) => run.aggregates[*v].min,
            PathExpr::Max(v) => run.aggregates[*v].max,
            PathExpr::Bin(op, a, b) => {
                let (a, b) = (a.eval(run)?, b.eval(run)?);
                match op {
                    YOp::Add => a + b,
                    YOp::Sub => a - b,
                    YOp::Mul => a * b,
                    YOp::Div if b == 0.0 => return Err(EstimateError::DivisionByZero),
                    YOp::Div => a / b,
                }
            }
        })
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathExpr::Const(c) => write!(f, "{c}"),
            PathExpr::Last(y) => write!(f, "last({y})"),
            PathExpr::Min(v) => write!(f, "min(v{v})"),
            PathExpr::Max(v) => write!(f, "max(v{v})"),
            PathExpr::Bin(op, a, b) => {
                let sym = match op {
                    YOp::Add => "+",
                    YOp::Sub => "-",
                    YOp::Mul => "*",
                    YOp::Div => "/",
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}

struct Parser<'s> {
    src: &'s str,
    pos: usize,
    vars: &'s [String],
}

impl<'s> Parser<'s> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, EstimateError> {
        Err(EstimateError::Syntax {
            column: self.pos + 1,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), EstimateError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Option<&'s str> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        if len == 0 || rest.starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        self.pos += len;
        Some(&rest[..len])
    }

    fn number(&mut self) -> Result<f64, EstimateError> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let mut len = rest
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E'))
            .unwrap_or(rest.len());
        // exponent sign
        while len < rest.len()
            && matches!(rest.as_bytes()[len], b'+' | b'-')
            && len > 0
            && matches!(rest.as_bytes()[len - 1], b'e' | b'E')
        {
            len += 1;
            len += rest[len..]
                .find(|c: char| !c.is_ascii_digit())
                .unwrap_or(rest.len() - len);
        }
        let neg = rest.starts_with('-');
        if neg {
            self.pos += 1;
            return self.number().map(|v| -v);
        }
        match rest[..len].parse::<f64>() {
            Ok(v) if len > 0 => {
                self.pos += len;
                Ok(v)
            }
            _ => self.err("expected a number"),
        }
    }

    /// Text up to the parenthesis closing the one just consumed.
    fn balanced(&mut self) -> Result<(usize, &'s str), EstimateError> {
        let start = self.pos;
        let mut depth = 1;
        for (i, c) in self.src[start..].char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        self.pos = start + i + 1;
                        return Ok((start, &self.src[start..start + i]));
                    }
                }
                _ => {}
            }
        }
        self.err("unbalanced parenthesis")
    }

    fn var_expr(&self, offset: usize, text: &str) -> Result<Expr, EstimateError> {
        let raw = expr::parse_expr(text).map_err(|e| EstimateError::Syntax {
            column: offset + e.column,
            message: e.message,
        })?;
        raw.resolve(&|name: &str| self.vars.iter().position(|v| v == name).map(Expr::var))
            .map_err(EstimateError::UnknownVariable)
    }

    fn y_sum(&mut self) -> Result<PathExpr, EstimateError> {
        let mut lhs = self.y_product()?;
        loop {
            let op = if self.eat('+') {
                YOp::Add
            } else if self.eat('-') {
                YOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = PathExpr::Bin(op, Box::new(lhs), Box::new(self.y_product()?));
        }
    }

    fn y_product(&mut self) -> Result<PathExpr, EstimateError> {
        let mut lhs = self.y_atom()?;
        loop {
            let op = if self.eat('*') {
                YOp::Mul
            } else if self.eat('/') {
                YOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = PathExpr::Bin(op, Box::new(lhs), Box::new(self.y_atom()?));
        }
    }

    fn y_atom(&mut self) -> Result<PathExpr, EstimateError> {
        if self.eat('(') {
            let inner = self.y_sum()?;
            self.expect(')')?;
            return Ok(inner);
        }
        let save = self.pos;
        let Some(name) = self.ident() else {
            return self.number().map(PathExpr::Const);
        };
        let kind = match name {
            "last" => 0,
            "min" => 1,
            "max" => 2,
            _ => {
                self.pos = save;
                return self.err(format!(
                    "expected last, min, max or a constant, found `{name}`"
                ));
            }
        };
        self.expect('(')?;
        let (offset, text) = self.balanced()?;
        if kind == 0 {
            return Ok(PathExpr::Last(self.var_expr(offset, text)?));
        }
        let var = text.trim();
        let Some(i) = self.vars.iter().position(|v| v == var) else {
            self.pos = offset;
            return if var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                Err(EstimateError::UnknownVariable(var.to_string()))
            } else {
                self.err("min and max take a single variable")
            };
        };
        Ok(if kind == 1 {
            PathExpr::Min(i)
        } else {
            PathExpr::Max(i)
        })
    }

    fn z_sum(&mut self) -> Result<TargetExpr, EstimateError> {
        let mut lhs = self.z_product()?;
        while self.eat('+') {
            lhs = TargetExpr::Add(Box::new(lhs), Box::new(self.z_product()?));
        }
        Ok(lhs)
    }

    fn z_product(&mut self) -> Result<TargetExpr, EstimateError> {
        let mut lhs = self.z_atom()?;
        while self.eat('*') {
            lhs = TargetExpr::Mul(Box::new(lhs), Box::new(self.z_atom()?));
        }
        Ok(lhs)
    }

    fn z_atom(&mut self) -> Result<TargetExpr, EstimateError> {
        if self.eat('(') {
            let inner = self.z_sum()?;
            self.expect(')')?;
            return Ok(inner);
        }
        let save = self.pos;
        let name = self.ident().unwrap_or("");
        match name {
            "AVG" => {
                self.expect('(')?;
                let y = self.y_sum()?;
                self.expect(')')?;
                Ok(TargetExpr::Avg(y))
            }
            "PROB" => {
                self.expect('(')?;
                self.expect(')')?;
                Ok(TargetExpr::Prob)
            }
            "PDF" | "CDF" => {
                self.expect('(')?;
                let y = self.y_sum()?;
                let mut nums = [0.0; 3];
                for n in &mut nums {
                    self.expect(',')?;
                    *n = self.number()?;
                }
                self.expect(')')?;
                let [step, start, stop] = nums;
                if !(step > 0.0 && start < stop) {
                    return Err(EstimateError::BadHistogram);
                }
                let h = Histogram {
                    y,
                    step,
                    start,
                    stop,
                };
                Ok(if name == "PDF" {
                    TargetExpr::Pdf(h)
                } else {
                    TargetExpr::Cdf(h)
                })
            }
            _ => {
                self.pos = save;
                self.err("expected AVG, PROB, PDF or CDF")
            }
        }
    }

    fn finish(&mut self) -> Result<(), EstimateError> {
        match self.peek() {
            None => Ok(()),
            Some(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}

pub fn parse_path_expr(src: &str, variables: &[String]) -> Result<PathExpr, EstimateError> {
    let mut p = Parser {
        src,
        pos: 0,
        vars: variables,
    };
    let y = p.y_sum()?;
    p.finish()?;
    Ok(y)
}

pub fn parse_target(src: &str, variables: &[String]) -> Result<TargetExpr, EstimateError> {
    let mut p = Parser {
        src,
        pos: 0,
        vars: variables,
    };
    let z = p.z_sum()?;
    p.finish()?;
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimate {
    Scalar { value: f64, ci: (f64, f64) },
    Distribution { bins: Vec<Bin> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: Estimate,
    pub n_paths: u64,
    pub accepted: u64,
    pub nondeterminism: u64,
}

fn student_ci(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Estimate::Scalar {
            value: mean,
            ci: (f64::NEG_INFINITY, f64::INFINITY),
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    Estimate::Scalar {
        value: mean,
        ci: (mean - half, mean + half),
    }
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z_975 * Z_975;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_975 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn histogram(h: &Histogram, values: &[f64], cumulative: bool) -> Estimate {
    let k = h.bin_count();
    let mut counts = vec![0u64; k];
    let mut below = 0u64;
    for &v in values {
        match h.bin_of(v) {
            Some(b) => counts[b] += 1,
            None if v < h.start => below += 1,
            None => {}
        }
    }
    let total = values.len() as f64;
    let mut running = below;
    let bins = (0..k)
        .map(|b| {
            let lo = h.start + b as f64 * h.step;
            let hi = (lo + h.step).min(h.stop);
            running += counts[b];
            let value = if cumulative {
                running as f64 / total
            } else {
                counts[b] as f64 / (total * h.step)
            };
            Bin { lo, hi, value }
        })
        .collect();
    Estimate::Distribution { bins }
}

fn evaluate(z: &TargetExpr, runs: &[RunResult]) -> Result<Estimate, EstimateError> {
    let accepted = || runs.iter().filter(|r| r.accepted);
    let values = |y: &PathExpr| -> Result<Vec<f64>, EstimateError> {
        let v: Vec<f64> = accepted().map(|r| y.eval(r)).collect::<Result<_, _>>()?;
        if v.is_empty() {
            Err(EstimateError::NoAcceptedPath)
        } else {
            Ok(v)
        }
    };
    Ok(match z {
        TargetExpr::Prob => {
            let a = accepted().count() as u64;
            let n = runs.len() as u64;
            Estimate::Scalar {
                value: a as f64 / n as f64,
                ci: wilson_interval(a, n),
            }
        }
        TargetExpr::Avg(y) => student_ci(&values(y)?),
        TargetExpr::Pdf(h) => histogram(h, &values(&h.y)?, false),
        TargetExpr::Cdf(h) => histogram(h, &values(&h.y)?, true),
        TargetExpr::Add(a, b) | TargetExpr::Mul(a, b) => {
            let (
                Estimate::Scalar {
                    value: x,
                    ci: (x0, x1),
                },
                Estimate::Scalar {
                    value: y,
                    ci: (y0, y1),
                },
            ) = (evaluate(a, runs)?, evaluate(b, runs)?)
            else {
                return Err(EstimateError::NonScalar);
            };
            if matches!(z, TargetExpr::Add(..)) {
                Estimate::Scalar {
                    value: x + y,
                    ci: (x0 + y0, x1 + y1),
                }
            } else {
                let corners = [x0 * y0, x0 * y1, x1 * y0, x1 * y1];
                let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Estimate::Scalar {
                    value: x * y,
                    ci: (lo, hi),
                }
            }
        }
    })
}

fn needs_two(z: &TargetExpr) -> bool {
    match z {
        TargetExpr::Avg(_) => true,
        TargetExpr::Add(a, b) | TargetExpr::Mul(a, b) => needs_two(a) || needs_two(b),
        _ => false,
    }
}

/// Estimates `z` from paths `0..n_paths` of `source`, each synchronised
/// with `lha`. Paths run on the current rayon pool; results do not depend
/// on scheduling.
pub fn estimate(
    z: &TargetExpr,
    lha: &Lha,
    source: &dyn PathSource,
    n_paths: u64,
) -> Result<EstimateReport, EstimateError> {
    if n_paths == 0 || (n_paths < 2 && needs_two(z)) {
        return Err(EstimateError::TooFewPaths(n_paths));
    }
    let runs: Vec<RunResult> = (0..n_paths)
        .into_par_iter()
        .map(|i| synchronize(lha, source, i).map(|(r, _)| r))
        .collect::<Result<_, _>>()?;
    Ok(EstimateReport {
        estimate: evaluate(z, &runs)?,
        n_paths,
        accepted: runs.iter().filter(|r| r.accepted).count() as u64,
        nondeterminism: runs.iter().map(|r| r.nondeterminism).sum(),
    })
}
