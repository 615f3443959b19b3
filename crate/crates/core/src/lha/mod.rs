//! Linear hybrid automata used as path selectors, their synchronisation
//! with simulated paths, and HASL target expressions.

mod hasl;
mod sync;

pub use hasl::{
    estimate, parse_path_expr, parse_target, wilson_interval, Bin, Estimate, EstimateError,
    EstimateReport, Histogram, PathExpr, TargetExpr, YOp,
};
pub use sync::{
    earliest_autonomous_fire, synchronize, Aggregate, IntervalSet, ProductStep, RunResult,
    StepKind, SyncState, Synchronizer, Verdict,
};

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, CmpOp, Expr, Guard, LinearForm, Symbol};
use crate::model::CrnModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LhaError {
    #[error("malformed automaton document: {0}")]
    Syntax(String),
    #[error("invalid automaton: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Rate of change of one variable inside one location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flow {
    Const(f64),
    /// Current population of a species.
    Species(usize),
}

impl Flow {
    #[inline]
    pub fn rate(self, state: &[u64]) -> f64 {
        match self {
            Flow::Const(c) => c,
            Flow::Species(i) => state[i] as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub name: String,
    /// Inert proposition label.
    pub label: Option<String>,
    /// One flow per variable.
    pub flows: Vec<Flow>,
}

/// Set of reaction indices an edge synchronises on.
#[derive(Debug, Clone, PartialEq)]
pub enum EventSet {
    All,
    Only(Vec<bool>),
}

impl EventSet {
    #[inline]
    pub fn contains(&self, reaction: usize) -> bool {
        match self {
            EventSet::All => true,
            EventSet::Only(mask) => mask.get(reaction).copied().unwrap_or(false),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    Sync(EventSet),
    Autonomous,
}

/// `var := expr`, evaluated against pre-update values.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub var: usize,
    pub expr: Expr,
}

/// Guard of an autonomous edge, with every comparison in affine form so the
/// firing delay can be solved in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearGuard {
    Const(bool),
    Atom(CmpOp, LinearForm),
    And(Vec<LinearGuard>),
    Or(Vec<LinearGuard>),
}

impl LinearGuard {
    fn from_guard(g: &Guard) -> Option<Self> {
        Some(match g {
            Guard::Const(b) => LinearGuard::Const(*b),
            Guard::Cmp(op, a, b) => {
                let diff = Expr::bin(expr::BinOp::Sub, a.clone(), b.clone());
                LinearGuard::Atom(*op, diff.linearize()?)
            }
            Guard::And(gs) => {
                LinearGuard::And(gs.iter().map(Self::from_guard).collect::<Option<_>>()?)
            }
            Guard::Or(gs) => {
                LinearGuard::Or(gs.iter().map(Self::from_guard).collect::<Option<_>>()?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub guard: Guard,
    pub trigger: Trigger,
    pub updates: Vec<Update>,
    /// Present for autonomous edges.
    pub linear_guard: Option<LinearGuard>,
}

/// Initial location with its entry condition over the model's start state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialEntry {
    pub location: usize,
    pub guard: Guard,
    pub updates: Vec<Update>,
}

/// A linear hybrid automaton bound to the events and species of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Lha {
    /// Event alphabet: the model's reaction names.
    pub events: Vec<String>,
    pub variables: Vec<String>,
    pub locations: Vec<Location>,
    pub init: Vec<InitialEntry>,
    pub finals: Vec<bool>,
    pub edges: Vec<Edge>,
    sync_out: Vec<Vec<usize>>,
    auto_out: Vec<Vec<usize>>,
}

impl Lha {
    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    pub fn is_final(&self, location: usize) -> bool {
        self.finals[location]
    }

    pub fn sync_edges_from(&self, location: usize) -> &[usize] {
        &self.sync_out[location]
    }

    pub fn autonomous_edges_from(&self, location: usize) -> &[usize] {
        &self.auto_out[location]
    }

    /// Binds a document to `model`, checking every structural invariant.
    pub fn from_document(doc: &LhaDocument, model: &CrnModel) -> Result<Self, LhaError> {
        doc.bind(model).map_err(LhaError::Invalid)
    }
}

// ---------------------------------------------------------------------------
// JSON document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LhaDocument {
    pub variables: Vec<String>,
    #[serde(default)]
    pub constants: BTreeMap<String, f64>,
    pub locations: Vec<LocationDecl>,
    pub init: Vec<InitDecl>,
    #[serde(rename = "final")]
    pub finals: Vec<String>,
    pub edges: Vec<EdgeDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Unlisted variables have flow 0.
    #[serde(default)]
    pub flows: BTreeMap<String, FlowDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlowDecl {
    Rate(f64),
    Species(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitDecl {
    pub location: String,
    #[serde(default = "always")]
    pub guard: String,
    #[serde(default)]
    pub updates: BTreeMap<String, String>,
}

fn always() -> String {
    "true".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerDecl {
    Autonomous,
    /// `"ALL"` or a list of reaction names.
    Sync(EventsDecl),
    /// Every event except the listed ones.
    SyncExcept(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventsDecl {
    Keyword(String),
    Names(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDecl {
    pub from: String,
    pub to: String,
    pub trigger: TriggerDecl,
    #[serde(default = "always")]
    pub guard: String,
    #[serde(default)]
    pub updates: BTreeMap<String, String>,
}

impl LhaDocument {
    pub fn from_json(text: &str) -> Result<Self, LhaError> {
        serde_json::from_str(text).map_err(|e| LhaError::Syntax(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("automaton document serializes")
    }

    fn bind(&self, model: &CrnModel) -> Result<Lha, Vec<String>> {
        let mut diags = Vec::new();

        let mut names = HashSet::new();
        for v in &self.variables {
            if !names.insert(v.as_str()) {
                diags.push(format!("duplicate variable `{v}`"));
            }
        }
        for c in self.constants.keys() {
            if !names.insert(c.as_str()) {
                diags.push(format!("constant `{c}` shadows another name"));
            }
        }
        for s in &model.species {
            if names.contains(s.as_str()) {
                diags.push(format!("`{s}` is both a species and an automaton name"));
            }
        }
        let var_index: HashMap<&str, usize> = self
            .variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let lookup = |name: &str| -> Option<Expr<Symbol>> {
            if let Some(&i) = var_index.get(name) {
                Some(Expr::var(i))
            } else if let Some(&c) = self.constants.get(name) {
                Some(Expr::Const(c))
            } else {
                model.species_index(name).map(Expr::species)
            }
        };

        let loc_index: HashMap<&str, usize> = self
            .locations
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        if loc_index.len() != self.locations.len() {
            diags.push("duplicate location names".to_string());
        }
        let find_loc = |name: &str, what: &str, diags: &mut Vec<String>| {
            let l = loc_index.get(name).copied();
            if l.is_none() {
                diags.push(format!("{what} refers to unknown location `{name}`"));
            }
            l
        };

        let guard = |src: &str, what: &str, diags: &mut Vec<String>| -> Option<Guard> {
            match expr::parse_guard(src) {
                Err(e) => {
                    diags.push(format!("{what}: guard `{src}`: {e}"));
                    None
                }
                Ok(g) => match g.resolve(&lookup) {
                    Ok(g) => Some(g),
                    Err(name) => {
                        diags.push(format!("{what}: guard uses unknown name `{name}`"));
                        None
                    }
                },
            }
        };
        let updates =
            |map: &BTreeMap<String, String>, what: &str, diags: &mut Vec<String>| -> Vec<Update> {
                let mut out = Vec::new();
                for (var, src) in map {
                    let Some(&vi) = var_index.get(var.as_str()) else {
                        diags.push(format!("{what}: update of unknown variable `{var}`"));
                        continue;
                    };
                    match expr::parse_expr(src).map(|e| e.resolve(&lookup)) {
                        Err(e) => diags.push(format!("{what}: update `{var} := {src}`: {e}")),
                        Ok(Err(name)) => {
                            diags.push(format!("{what}: update uses unknown name `{name}`"))
                        }
                        Ok(Ok(expr)) => out.push(Update { var: vi, expr }),
                    }
                }
                out
            };

        let mut locations = Vec::with_capacity(self.locations.len());
        for l in &self.locations {
            let mut flows = vec![Flow::Const(0.0); self.variables.len()];
            for (var, decl) in &l.flows {
                let Some(&vi) = var_index.get(var.as_str()) else {
                    diags.push(format!(
                        "location `{}`: flow for unknown variable `{var}`",
                        l.name
                    ));
                    continue;
                };
                flows[vi] = match decl {
                    FlowDecl::Rate(r) => Flow::Const(*r),
                    FlowDecl::Species(s) => match model.species_index(s) {
                        Some(i) => Flow::Species(i),
                        None => {
                            diags.push(format!(
                                "location `{}`: flow uses unknown species `{s}`",
                                l.name
                            ));
                            continue;
                        }
                    },
                };
            }
            locations.push(Location {
                name: l.name.clone(),
                label: l.label.clone(),
                flows,
            });
        }

        if self.init.is_empty() {
            diags.push("no initial location".to_string());
        }
        let mut init = Vec::new();
        for entry in &self.init {
            let loc = find_loc(&entry.location, "initial entry", &mut diags);
            let g = guard(&entry.guard, "initial entry", &mut diags);
            let u = updates(&entry.updates, "initial entry", &mut diags);
            if let (Some(location), Some(guard)) = (loc, g) {
                init.push(InitialEntry {
                    location,
                    guard,
                    updates: u,
                });
            }
        }

        if self.finals.is_empty() {
            diags.push("no final location".to_string());
        }
        let mut finals = vec![false; self.locations.len()];
        for f in &self.finals {
            if let Some(l) = find_loc(f, "final set", &mut diags) {
                finals[l] = true;
            }
        }

        let mask = |names: &[String], what: &str, diags: &mut Vec<String>| {
            let mut m = vec![false; model.reactions.len()];
            for n in names {
                match model.reaction_index(n) {
                    Some(j) => m[j] = true,
                    None => diags.push(format!("{what}: unknown event `{n}`")),
                }
            }
            m
        };

        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            let what = format!("edge #{k} ({} -> {})", e.from, e.to);
            let from = find_loc(&e.from, &what, &mut diags);
            let to = find_loc(&e.to, &what, &mut diags);
            let trigger =
                match &e.trigger {
                    TriggerDecl::Autonomous => Trigger::Autonomous,
                    TriggerDecl::Sync(EventsDecl::Keyword(kw)) if kw == "ALL" => {
                        Trigger::Sync(EventSet::All)
                    }
                    TriggerDecl::Sync(EventsDecl::Keyword(kw)) => Trigger::Sync(EventSet::Only(
                        mask(std::slice::from_ref(kw), &what, &mut diags),
                    )),
                    TriggerDecl::Sync(EventsDecl::Names(ns)) => {
                        Trigger::Sync(EventSet::Only(mask(ns, &what, &mut diags)))
                    }
                    TriggerDecl::SyncExcept(ns) => {
                        let m = mask(ns, &what, &mut diags);
                        Trigger::Sync(EventSet::Only(m.into_iter().map(|b| !b).collect()))
                    }
                };
            let g = guard(&e.guard, &what, &mut diags);
            let u = updates(&e.updates, &what, &mut diags);
            let (Some(from), Some(to), Some(guard)) = (from, to, g) else {
                continue;
            };
            let linear_guard = if trigger == Trigger::Autonomous {
                if !guard.is_left_closed() {
                    diags.push(format!(
                        "{what}: autonomous guards may only use <=, >= and =="
                    ));
                }
                let lin = LinearGuard::from_guard(&guard);
                if lin.is_none() {
                    diags.push(format!(
                        "{what}: autonomous guard is not linear in the variables"
                    ));
                }
                lin
            } else {
                None
            };
            edges.push(Edge {
                from,
                to,
                guard,
                trigger,
                updates: u,
                linear_guard,
            });
        }

        if !diags.is_empty() {
            return Err(diags);
        }
        let mut sync_out = vec![Vec::new(); locations.len()];
        let mut auto_out = vec![Vec::new(); locations.len()];
        for (k, e) in edges.iter().enumerate() {
            match e.trigger {
                Trigger::Sync(_) => sync_out[e.from].push(k),
                Trigger::Autonomous => auto_out[e.from].push(k),
            }
        }
        Ok(Lha {
            events: model.reactions.iter().map(|r| r.name.clone()).collect(),
            variables: self.variables.clone(),
            locations,
            init,
            finals,
            edges,
            sync_out,
            auto_out,
        })
    }
}
