//! Parametric chemical reaction networks under the discrete-stochastic
//! interpretation: species counts, stoichiometry and propensities.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, Env, Expr, ParseError, Symbol};

/// Population vector, one non-negative count per species.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<u64>);

impl State {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for State {
    type Output = u64;
    fn index(&self, i: usize) -> &u64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateConstant {
    Param(usize),
    Value(f64),
}

/// Kinetic law of a reaction channel.
#[derive(Debug, Clone, PartialEq)]
pub enum RateLaw {
    /// `k · Π x_i(x_i-1)…(x_i-a_i+1)` over the reactants.
    MassAction(RateConstant),
    /// Full propensity given as an expression over parameters and species.
    Expression { source: String, expr: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reaction {
    pub name: String,
    /// `(species index, coefficient)`, sorted by species index.
    pub reactants: Vec<(usize, u32)>,
    pub products: Vec<(usize, u32)>,
    pub rate: RateLaw,
    /// Net change per species, `(index, delta)` with `delta != 0`.
    delta: Vec<(usize, i64)>,
}

impl Reaction {
    pub fn new(
        name: impl Into<String>,
        reactants: Vec<(usize, u32)>,
        products: Vec<(usize, u32)>,
        rate: RateLaw,
    ) -> Self {
        let mut reactants = reactants;
        let mut products = products;
        reactants.sort_unstable();
        products.sort_unstable();
        let mut net: BTreeMap<usize, i64> = BTreeMap::new();
        for &(i, c) in &reactants {
            *net.entry(i).or_default() -= i64::from(c);
        }
        for &(i, c) in &products {
            *net.entry(i).or_default() += i64::from(c);
        }
        let delta = net.into_iter().filter(|&(_, d)| d != 0).collect();
        Reaction {
            name: name.into(),
            reactants,
            products,
            rate,
            delta,
        }
    }

    /// Net stoichiometric change `a⁺ − a⁻`, sparse.
    pub fn net_change(&self) -> &[(usize, i64)] {
        &self.delta
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("malformed model document at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid model: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("rate of reaction `{reaction}` evaluated to {value}")]
    BadPropensity { reaction: String, value: f64 },
    #[error("reaction `{reaction}` needs more copies of species `{species}` than available")]
    Underflow { reaction: String, species: String },
}

/// A parametric CRN `M_θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrnModel {
    pub species: Vec<String>,
    pub params: Vec<String>,
    pub reactions: Vec<Reaction>,
    pub initial_state: State,
}

impl CrnModel {
    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|s| s == name)
    }

    pub fn reaction_index(&self, name: &str) -> Option<usize> {
        self.reactions.iter().position(|r| r.name == name)
    }

    /// Propensity of reaction `j` in state `x` under parameters `theta`.
    pub fn propensity(&self, j: usize, x: &[u64], theta: &[f64]) -> Result<f64, ModelError> {
        let reaction = &self.reactions[j];
        let value = match &reaction.rate {
            RateLaw::MassAction(k) => {
                let k = match *k {
                    RateConstant::Param(p) => theta[p],
                    RateConstant::Value(v) => v,
                };
                let mut a = k;
                for &(i, coeff) in &reaction.reactants {
                    let n = x[i];
                    for m in 0..u64::from(coeff) {
                        a *= n.saturating_sub(m) as f64;
                    }
                }
                a
            }
            RateLaw::Expression { expr, .. } => expr.eval(&Env {
                params: theta,
                species: x,
                vars: &[],
            }),
        };
        if !value.is_finite() || value < 0.0 {
            return Err(ModelError::BadPropensity {
                reaction: reaction.name.clone(),
                value,
            });
        }
        Ok(value)
    }

    /// Fills `out` with the propensity of every reaction; returns the sum.
    pub fn propensities(
        &self,
        x: &[u64],
        theta: &[f64],
        out: &mut Vec<f64>,
    ) -> Result<f64, ModelError> {
        out.clear();
        let mut total = 0.0;
        for j in 0..self.reactions.len() {
            let a = self.propensity(j, x, theta)?;
            total += a;
            out.push(a);
        }
        Ok(total)
    }

    /// Applies reaction `j` to `x` in place.
    pub fn apply_in_place(&self, j: usize, x: &mut [u64]) -> Result<(), ModelError> {
        let reaction = &self.reactions[j];
        for &(i, d) in reaction.net_change() {
            if d < 0 && x[i] < d.unsigned_abs() {
                return Err(ModelError::Underflow {
                    reaction: reaction.name.clone(),
                    species: self.species[i].clone(),
                });
            }
        }
        // Catalysts that are also consumed-and-restored need their copies present too.
        for &(i, c) in &reaction.reactants {
            if x[i] < u64::from(c) {
                return Err(ModelError::Underflow {
                    reaction: reaction.name.clone(),
                    species: self.species[i].clone(),
                });
            }
        }
        for &(i, d) in reaction.net_change() {
            x[i] = x[i].wrapping_add_signed(d);
        }
        Ok(())
    }

    pub fn apply_reaction(&self, j: usize, x: &State) -> Result<State, ModelError> {
        let mut next = x.clone();
        self.apply_in_place(j, &mut next.0)?;
        Ok(next)
    }

    /// Index-level invariant checks; empty iff the model is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        let mut seen = HashSet::new();
        for s in &self.species {
            if !seen.insert(s) {
                diags.push(format!("duplicate species `{s}`"));
            }
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            if !seen.insert(p) {
                diags.push(format!("duplicate parameter `{p}`"));
            }
        }
        if self.initial_state.len() != self.species.len() {
            diags.push(format!(
                "initial state has {} entries for {} species",
                self.initial_state.len(),
                self.species.len()
            ));
        }
        let n = self.species.len();
        let p = self.params.len();
        for r in &self.reactions {
            for &(i, c) in r.reactants.iter().chain(&r.products) {
                if i >= n {
                    diags.push(format!("reaction `{}` references species #{i}", r.name));
                }
                if c == 0 {
                    diags.push(format!("reaction `{}` has a zero coefficient", r.name));
                }
            }
            match &r.rate {
                RateLaw::MassAction(RateConstant::Param(i)) if *i >= p => {
                    diags.push(format!("reaction `{}` references parameter #{i}", r.name))
                }
                RateLaw::MassAction(RateConstant::Value(v)) if !(v.is_finite() && *v >= 0.0) => {
                    diags.push(format!("reaction `{}` has rate constant {v}", r.name))
                }
                RateLaw::Expression { expr, .. } => expr.for_each_symbol(&mut |s| match *s {
                    Symbol::Param(i) if i >= p => {
                        diags.push(format!("reaction `{}` references parameter #{i}", r.name))
                    }
                    Symbol::Species(i) if i >= n => {
                        diags.push(format!("reaction `{}` references species #{i}", r.name))
                    }
                    Symbol::Var(_) => diags.push(format!(
                        "reaction `{}` rate references an automaton variable",
                        r.name
                    )),
                    _ => {}
                }),
                _ => {}
            }
        }
        diags
    }

    pub fn to_document(&self) -> ModelDocument {
        let names = |v: &[(usize, u32)]| {
            v.iter()
                .map(|&(i, c)| (self.species[i].clone(), i64::from(c)))
                .collect::<BTreeMap<_, _>>()
        };
        ModelDocument {
            species: self
                .species
                .iter()
                .zip(&self.initial_state.0)
                .map(|(name, &init)| SpeciesDecl {
                    name: name.clone(),
                    init: init as i64,
                })
                .collect(),
            params: self.params.clone(),
            reactions: self
                .reactions
                .iter()
                .map(|r| ReactionDecl {
                    name: r.name.clone(),
                    reactants: names(&r.reactants),
                    products: names(&r.products),
                    rate: match &r.rate {
                        RateLaw::MassAction(RateConstant::Param(i)) => {
                            RateDecl::MassAction(ConstantDecl::Param(self.params[*i].clone()))
                        }
                        RateLaw::MassAction(RateConstant::Value(v)) => {
                            RateDecl::MassAction(ConstantDecl::Value(*v))
                        }
                        RateLaw::Expression { source, .. } => RateDecl::Expr(source.clone()),
                    },
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    /// Full parameter vector from a name→value map; `None` if any is missing.
    pub fn param_vector(&self, values: &BTreeMap<String, f64>) -> Option<Vec<f64>> {
        self.params.iter().map(|p| values.get(p).copied()).collect()
    }
}

impl fmt::Display for CrnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |v: &[(usize, u32)]| {
            if v.is_empty() {
                return "∅".to_string();
            }
            v.iter()
                .map(|&(i, c)| {
                    if c == 1 {
                        self.species[i].clone()
                    } else {
                        format!("{c}{}", self.species[i])
                    }
                })
                .collect::<Vec<_>>()
                .join(" + ")
        };
        for r in &self.reactions {
            writeln!(
                f,
                "{}: {} -> {}",
                r.name,
                side(&r.reactants),
                side(&r.products)
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub species: Vec<SpeciesDecl>,
    #[serde(default)]
    pub params: Vec<String>,
    #[serde(default)]
    pub reactions: Vec<ReactionDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesDecl {
    pub name: String,
    #[serde(default)]
    pub init: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReactionDecl {
    pub name: String,
    #[serde(default)]
    pub reactants: BTreeMap<String, i64>,
    #[serde(default)]
    pub products: BTreeMap<String, i64>,
    pub rate: RateDecl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum RateDecl {
    MassAction(ConstantDecl),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConstantDecl {
    Param(String),
    Value(f64),
}

impl ModelDocument {
    /// Name-level diagnostics; empty iff [`ModelDocument::build`] succeeds.
    pub fn validate(&self) -> Vec<String> {
        self.build_inner().err().unwrap_or_default()
    }

    pub fn build(&self) -> Result<CrnModel, ModelError> {
        self.build_inner().map_err(ModelError::Invalid)
    }

    fn build_inner(&self) -> Result<CrnModel, Vec<String>> {
        let mut diags = Vec::new();
        let species: Vec<String> = self.species.iter().map(|s| s.name.clone()).collect();
        let params = self.params.clone();
        for s in &self.species {
            if s.init < 0 {
                diags.push(format!(
                    "species `{}` has negative initial count {}",
                    s.name, s.init
                ));
            }
            if !is_identifier(&s.name) {
                diags.push(format!("species name `{}` is not an identifier", s.name));
            }
        }
        for p in &params {
            if !is_identifier(p) {
                diags.push(format!("parameter name `{p}` is not an identifier"));
            }
            if species.contains(p) {
                diags.push(format!("`{p}` is declared both as species and parameter"));
            }
        }
        let lookup_species = |name: &str| species.iter().position(|s| s == name);
        let lookup_param = |name: &str| params.iter().position(|s| s == name);

        let mut reactions = Vec::with_capacity(self.reactions.len());
        let mut reaction_names = HashSet::new();
        for r in &self.reactions {
            if !reaction_names.insert(&r.name) {
                diags.push(format!("duplicate reaction name `{}`", r.name));
            }
            let mut side = |map: &BTreeMap<String, i64>, what: &str| {
                let mut out = Vec::new();
                for (name, &c) in map {
                    match lookup_species(name) {
                        None => diags.push(format!(
                            "reaction `{}` {what} undeclared species `{name}`",
                            r.name
                        )),
                        Some(_) if c <= 0 => diags.push(format!(
                            "reaction `{}` has non-positive coefficient {c} for `{name}`",
                            r.name
                        )),
                        Some(_) if c > i64::from(u32::MAX) => diags.push(format!(
                            "reaction `{}` coefficient {c} for `{name}` is too large",
                            r.name
                        )),
                        Some(i) => out.push((i, c as u32)),
                    }
                }
                out
            };
            let reactants = side(&r.reactants, "consumes");
            let products = side(&r.products, "produces");
            let rate = match &r.rate {
                RateDecl::MassAction(ConstantDecl::Param(p)) => match lookup_param(p) {
                    Some(i) => Some(RateLaw::MassAction(RateConstant::Param(i))),
                    None => {
                        diags.push(format!(
                            "reaction `{}` uses undeclared parameter `{p}`",
                            r.name
                        ));
                        None
                    }
                },
                RateDecl::MassAction(ConstantDecl::Value(v)) => {
                    if v.is_finite() && *v >= 0.0 {
                        Some(RateLaw::MassAction(RateConstant::Value(*v)))
                    } else {
                        diags.push(format!("reaction `{}` has rate constant {v}", r.name));
                        None
                    }
                }
                RateDecl::Expr(src) => match expr::parse_expr(src) {
                    Err(ParseError { message, column }) => {
                        diags.push(format!(
                            "reaction `{}` rate expression: {message} at column {column}",
                            r.name
                        ));
                        None
                    }
                    Ok(ast) => {
                        let lookup = |name: &str| {
                            lookup_param(name)
                                .map(Expr::param)
                                .or_else(|| lookup_species(name).map(Expr::species))
                        };
                        match ast.resolve(&lookup) {
                            Ok(expr) => Some(RateLaw::Expression {
                                source: src.clone(),
                                expr,
                            }),
                            Err(name) => {
                                diags.push(format!(
                                    "reaction `{}` rate uses undeclared parameter or species `{name}`",
                                    r.name
                                ));
                                None
                            }
                        }
                    }
                },
            };
            if let Some(rate) = rate {
                reactions.push(Reaction::new(r.name.clone(), reactants, products, rate));
            }
        }
        let model = CrnModel {
            initial_state: State(self.species.iter().map(|s| s.init.max(0) as u64).collect()),
            species,
            params,
            reactions,
        };
        diags.extend(model.validate());
        if diags.is_empty() {
            Ok(model)
        } else {
            Err(diags)
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses and validates a JSON model document.
pub fn parse_model(text: &str) -> Result<CrnModel, ModelError> {
    let doc: ModelDocument = serde_json::from_str(text).map_err(|e| ModelError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    doc.build()
}

// ---------------------------------------------------------------------------
// Built-in models

pub const THREE_WAY_JSON: &str = include_str!("../models/three-way.json");
pub const REPRESSILATOR_JSON: &str = include_str!("../models/repressilator.json");

/// Doping 3-way oscillator: A, B, C in a positive feedback loop plus
/// catalytic doping species keeping each of them from extinction.
pub fn three_way() -> CrnModel {
    parse_model(THREE_WAY_JSON).expect("built-in three-way model is valid")
}

/// Repressilator with Hill-type transcription; gene species are
/// explicit and fixed at one copy.
pub fn repressilator() -> CrnModel {
    parse_model(REPRESSILATOR_JSON).expect("built-in repressilator model is valid")
}

/// Looks up a built-in model by its registry name.
pub fn builtin(name: &str) -> Option<CrnModel> {
    match name {
        "three-way" => Some(three_way()),
        "repressilator" => Some(repressilator()),
        _ => None,
    }
}

pub const BUILTIN_NAMES: &[&str] = &["three-way", "repressilator"];
