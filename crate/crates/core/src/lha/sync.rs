//! Product-process semantics: a path of the model drives the automaton.
//!
//! Between two events the model state is frozen, so every variable moves
//! linearly and the delay before an autonomous guard becomes true is the
//! root of an affine function. Autonomous edges take priority over the
//! synchronised edge of an event occurring at the same instant.

use serde::Serialize;

use super::{Lha, LinearGuard, Trigger, Update};
use crate::expr::{CmpOp, Env};
use crate::ssa::{Control, PathEvent, PathObserver, PathSource, PathSummary, SimError};

/// Max consecutive zero-delay autonomous firings before the run is
/// declared Zeno.
const ZENO_LIMIT: u32 = 10_000;

/// Sorted, disjoint closed intervals on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet(Vec<(f64, f64)>);

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet(Vec::new())
    }

    pub fn full() -> Self {
        IntervalSet(vec![(0.0, f64::INFINITY)])
    }

    pub fn range(lo: f64, hi: f64) -> Self {
        let lo = lo.max(0.0);
        if lo > hi {
            Self::empty()
        } else {
            IntervalSet(vec![(lo, hi)])
        }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn earliest(&self) -> Option<f64> {
        self.0.first().map(|&(lo, _)| lo)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.0.len() && j < other.0.len() {
            let (a0, a1) = self.0[i];
            let (b0, b1) = other.0[j];
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet(out)
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut all: Vec<(f64, f64)> = self.0.iter().chain(&other.0).copied().collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(all.len());
        for (lo, hi) in all {
            match out.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        IntervalSet(out)
    }
}

/// Delays `δ ≥ 0` at which `value + slope·δ ≺ 0` holds exactly, plus
/// `δ = 0` when the tolerant comparison already holds.
fn solve_atom(op: CmpOp, value: f64, slope: f64) -> IntervalSet {
    let exact = match op {
        CmpOp::Eq => {
            if slope == 0.0 {
                if value == 0.0 {
                    IntervalSet::full()
                } else {
                    IntervalSet::empty()
                }
            } else {
                let root = -value / slope;
                IntervalSet::range(root, root)
            }
        }
        CmpOp::Le | CmpOp::Lt => at_most_zero(value, slope),
        CmpOp::Ge | CmpOp::Gt => at_most_zero(-value, -slope),
    };
    if op.holds(value) && exact.earliest() != Some(0.0) {
        exact.union(&IntervalSet::range(0.0, 0.0))
    } else {
        exact
    }
}

fn at_most_zero(value: f64, slope: f64) -> IntervalSet {
    if slope == 0.0 {
        if value <= 0.0 {
            IntervalSet::full()
        } else {
            IntervalSet::empty()
        }
    } else if slope > 0.0 {
        if value <= 0.0 {
            IntervalSet::range(0.0, -value / slope)
        } else {
            IntervalSet::empty()
        }
    } else {
        IntervalSet::range(-value / slope, f64::INFINITY)
    }
}

fn solve_guard(guard: &LinearGuard, env: &Env<'_>, rates: &[f64]) -> IntervalSet {
    match guard {
        LinearGuard::Const(true) => IntervalSet::full(),
        LinearGuard::Const(false) => IntervalSet::empty(),
        LinearGuard::Atom(op, form) => {
            let (value, slope) = form.value_and_slope(env, rates);
            solve_atom(*op, value, slope)
        }
        LinearGuard::And(gs) => gs.iter().fold(IntervalSet::full(), |acc, g| {
            if acc.0.is_empty() {
                acc
            } else {
                acc.intersect(&solve_guard(g, env, rates))
            }
        }),
        LinearGuard::Or(gs) => gs.iter().fold(IntervalSet::empty(), |acc, g| {
            acc.union(&solve_guard(g, env, rates))
        }),
    }
}

/// State `(s, l, ν)` of the product process, plus the global time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncState {
    pub state: Vec<u64>,
    pub location: usize,
    pub valuation: Vec<f64>,
    pub time: f64,
}

fn flow_rates(lha: &Lha, location: usize, state: &[u64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(lha.locations[location].flows.iter().map(|f| f.rate(state)));
}

fn earliest_with_rates(st: &SyncState, lha: &Lha, rates: &[f64]) -> (Option<(f64, usize)>, u64) {
    let env = Env {
        params: &[],
        species: &st.state,
        vars: &st.valuation,
    };
    let mut best: Option<(f64, usize)> = None;
    let mut ties = 0;
    for &k in lha.autonomous_edges_from(st.location) {
        let guard = lha.edges[k]
            .linear_guard
            .as_ref()
            .expect("autonomous edges are linear");
        let Some(delay) = solve_guard(guard, &env, rates).earliest() else {
            continue;
        };
        match best {
            Some((d, _)) if delay > d => {}
            Some((d, _)) if delay == d => ties += 1,
            _ => {
                best = Some((delay, k));
                ties = 0;
            }
        }
    }
    (best, ties)
}

/// Earliest delay at which an autonomous edge out of the current location
/// becomes enabled, with the first such edge in declaration order.
pub fn earliest_autonomous_fire(state: &SyncState, lha: &Lha) -> Option<(f64, usize)> {
    let mut rates = Vec::new();
    flow_rates(lha, state.location, &state.state, &mut rates);
    earliest_with_rates(state, lha, &rates).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub last: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Verdict {
    Accepted,
    /// No initial entry condition holds in the start state.
    NoInitialLocation,
    /// An event occurred with no enabled synchronised edge.
    NoEnabledEdge {
        reaction: usize,
        time: f64,
    },
    /// The path ended (deadlock or a safety bound) before acceptance.
    PathEnded,
    /// Unbounded zero-delay autonomous firings.
    Zeno {
        time: f64,
    },
    /// The path was stopped by another observer.
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Init,
    Sync { reaction: usize, edge: usize },
    Autonomous { edge: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProductStep {
    pub kind: StepKind,
    pub time: f64,
    pub state: Vec<u64>,
    pub location: usize,
    pub valuation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub accepted: bool,
    pub verdict: Verdict,
    pub final_location: usize,
    pub final_valuation: Vec<f64>,
    pub aggregates: Vec<Aggregate>,
    pub time: f64,
    /// Times more than one edge was enabled and declaration order decided.
    pub nondeterminism: u64,
}

/// Online synchroniser of one path with an automaton.
#[derive(Debug, Clone)]
pub struct Synchronizer<'a> {
    lha: &'a Lha,
    st: SyncState,
    rates: Vec<f64>,
    aggregates: Vec<Aggregate>,
    verdict: Option<Verdict>,
    nondeterminism: u64,
    trace: Option<Vec<ProductStep>>,
    scratch: Vec<f64>,
}

impl<'a> Synchronizer<'a> {
    pub fn new(lha: &'a Lha) -> Self {
        let n = lha.variables.len();
        Synchronizer {
            lha,
            st: SyncState {
                state: Vec::new(),
                location: 0,
                valuation: vec![0.0; n],
                time: 0.0,
            },
            rates: Vec::with_capacity(n),
            aggregates: Vec::with_capacity(n),
            verdict: None,
            nondeterminism: 0,
            trace: None,
            scratch: Vec::with_capacity(n),
        }
    }

    /// Also records every product-process transition.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn state(&self) -> &SyncState {
        &self.st
    }

    pub fn product_trace(&self) -> Option<&[ProductStep]> {
        self.trace.as_deref()
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    pub fn result(&self) -> RunResult {
        let verdict = self.verdict.unwrap_or(Verdict::Incomplete);
        RunResult {
            accepted: verdict == Verdict::Accepted,
            verdict,
            final_location: self.st.location,
            final_valuation: self.st.valuation.clone(),
            aggregates: self.aggregates.clone(),
            time: self.st.time,
            nondeterminism: self.nondeterminism,
        }
    }

    fn record(&mut self, kind: StepKind) {
        if let Some(trace) = &mut self.trace {
            trace.push(ProductStep {
                kind,
                time: self.st.time,
                state: self.st.state.clone(),
                location: self.st.location,
                valuation: self.st.valuation.clone(),
            });
        }
    }

    fn observe(&mut self) {
        for (agg, &v) in self.aggregates.iter_mut().zip(&self.st.valuation) {
            agg.last = v;
            if v < agg.min {
                agg.min = v;
            }
            if v > agg.max {
                agg.max = v;
            }
        }
    }

    fn refresh_rates(&mut self) {
        flow_rates(self.lha, self.st.location, &self.st.state, &mut self.rates);
    }

    fn advance(&mut self, delay: f64) {
        if delay > 0.0 {
            for (v, &r) in self.st.valuation.iter_mut().zip(&self.rates) {
                if r != 0.0 {
                    *v += r * delay;
                }
            }
            self.st.time += delay;
            self.observe();
        }
    }

    fn apply_updates(&mut self, updates: &[Update]) {
        if updates.is_empty() {
            return;
        }
        let env = Env {
            params: &[],
            species: &self.st.state,
            vars: &self.st.valuation,
        };
        self.scratch.clear();
        self.scratch
            .extend(updates.iter().map(|u| u.expr.eval(&env)));
        for (u, &v) in updates.iter().zip(&self.scratch) {
            self.st.valuation[u.var] = v;
        }
    }

    fn take_edge(&mut self, k: usize, kind: StepKind) -> bool {
        let lha = self.lha;
        let edge = &lha.edges[k];
        self.apply_updates(&edge.updates);
        self.st.location = edge.to;
        self.refresh_rates();
        self.observe();
        self.record(kind);
        if lha.is_final(edge.to) {
            self.verdict = Some(Verdict::Accepted);
            true
        } else {
            false
        }
    }

    /// Fires autonomous edges due within `window`; returns the time left
    /// in the window, or `None` once the run is decided.
    fn run_autonomous(&mut self, mut window: f64) -> Option<f64> {
        let mut zero_streak = 0u32;
        loop {
            let (best, ties) = earliest_with_rates(&self.st, self.lha, &self.rates);
            let Some((delay, k)) = best.filter(|&(d, _)| d <= window) else {
                return Some(window);
            };
            self.nondeterminism += ties;
            if delay == 0.0 {
                zero_streak += 1;
                if zero_streak > ZENO_LIMIT {
                    self.verdict = Some(Verdict::Zeno { time: self.st.time });
                    return None;
                }
            } else {
                zero_streak = 0;
            }
            self.advance(delay);
            window -= delay;
            if self.take_edge(k, StepKind::Autonomous { edge: k }) {
                return None;
            }
        }
    }
}

impl PathObserver for Synchronizer<'_> {
    fn begin(&mut self, init: &[u64]) -> Control {
        let lha = self.lha;
        self.st.state.clear();
        self.st.state.extend_from_slice(init);
        self.st.valuation.iter_mut().for_each(|v| *v = 0.0);
        self.st.time = 0.0;
        self.verdict = None;
        self.nondeterminism = 0;
        if let Some(t) = &mut self.trace {
            t.clear();
        }

        let env = Env {
            params: &[],
            species: &self.st.state,
            vars: &self.st.valuation,
        };
        let mut candidates = lha.init.iter().filter(|e| e.guard.holds(&env));
        let Some(entry) = candidates.next() else {
            self.verdict = Some(Verdict::NoInitialLocation);
            return Control::Stop;
        };
        self.nondeterminism += candidates.count() as u64;
        self.st.location = entry.location;
        self.apply_updates(&entry.updates);
        self.refresh_rates();
        self.aggregates.clear();
        self.aggregates
            .extend(self.st.valuation.iter().map(|&v| Aggregate {
                last: v,
                min: v,
                max: v,
            }));
        self.record(StepKind::Init);
        if lha.is_final(entry.location) {
            self.verdict = Some(Verdict::Accepted);
            return Control::Stop;
        }
        match self.run_autonomous(0.0) {
            None => Control::Stop,
            Some(_) => Control::Continue,
        }
    }

    fn event(&mut self, event: &PathEvent<'_>) -> Control {
        if self.verdict.is_some() {
            return Control::Stop;
        }
        let Some(left) = self.run_autonomous(event.sojourn) else {
            return Control::Stop;
        };
        self.advance(left);
        self.st.state.copy_from_slice(event.new_state);

        let lha = self.lha;
        let env = Env {
            params: &[],
            species: &self.st.state,
            vars: &self.st.valuation,
        };
        let mut chosen = None;
        for &k in lha.sync_edges_from(self.st.location) {
            let edge = &lha.edges[k];
            let Trigger::Sync(set) = &edge.trigger else {
                unreachable!("sync index holds sync edges")
            };
            if set.contains(event.reaction) && edge.guard.holds(&env) {
                if chosen.is_none() {
                    chosen = Some(k);
                } else {
                    self.nondeterminism += 1;
                }
            }
        }
        let Some(k) = chosen else {
            self.verdict = Some(Verdict::NoEnabledEdge {
                reaction: event.reaction,
                time: self.st.time,
            });
            return Control::Stop;
        };
        if self.take_edge(
            k,
            StepKind::Sync {
                reaction: event.reaction,
                edge: k,
            },
        ) {
            Control::Stop
        } else {
            Control::Continue
        }
    }

    fn end(&mut self, tail: f64) {
        if self.verdict.is_some() {
            return;
        }
        // the final state is held for `tail`; flows may still trigger guards
        self.refresh_rates();
        if let Some(left) = self.run_autonomous(tail) {
            if left.is_finite() {
                self.advance(left);
            }
            self.verdict = Some(Verdict::PathEnded);
        }
    }
}

/// Synchronises path `index` of `source` with `lha`.
pub fn synchronize(
    lha: &Lha,
    source: &dyn PathSource,
    index: u64,
) -> Result<(RunResult, PathSummary), SimError> {
    let mut sync = Synchronizer::new(lha);
    let summary = source.run_path(index, &mut sync)?;
    Ok((sync.result(), summary))
}
