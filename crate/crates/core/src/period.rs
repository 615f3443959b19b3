//! Noisy-period measurement.
//!
//! The population of one species is split into `low = [0, L]`,
//! `mid = (L, H)` and `high = [H, ∞)`. A period is the time between two
//! first entries into `low` that are separated by a visit to `high`. The
//! first entry into `low` only starts the clock.
//!
//! [`build_period_lha`] produces an automaton that measures this online;
//! [`analyze_trace`] is an offline oracle working on a recorded trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lha::{
    EdgeDecl, EventsDecl, FlowDecl, InitDecl, Lha, LhaDocument, LhaError, LocationDecl, RunResult,
    Synchronizer, TriggerDecl,
};
use crate::model::CrnModel;
use crate::ssa::{PathSource, PathSummary, SafetyBounds, SimError, SsaSource, Termination};

/// Variables of the period automaton, in declaration order.
pub const METER_VARIABLES: [&str; 11] = [
    "t", "n", "n_A", "top", "tp", "mean", "var", "m2", "d", "started", "t_reg",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DistanceMode {
    /// `min(|mean - target|, sd) / target`.
    #[default]
    MinRule,
    /// `max(|mean - target|, sd) / target`.
    MaxRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodMeterConfig {
    pub species: String,
    #[serde(rename = "L")]
    pub low: u64,
    #[serde(rename = "H")]
    pub high: u64,
    #[serde(rename = "N")]
    pub n_periods: u32,
    pub target: f64,
    #[serde(default)]
    pub distance_mode: DistanceMode,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PeriodError {
    #[error("invalid period meter: {0}")]
    Config(String),
    #[error("species `{0}` is not in the model")]
    UnknownSpecies(String),
    #[error(transparent)]
    Lha(#[from] LhaError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl PeriodMeterConfig {
    pub fn validate(&self) -> Result<(), PeriodError> {
        let bad = |m: &str| Err(PeriodError::Config(m.to_string()));
        if self.low >= self.high {
            return bad("need L < H");
        }
        if self.n_periods < 2 {
            return bad("need N >= 2 periods");
        }
        if !(self.target > 0.0 && self.target.is_finite()) {
            return bad("target period must be positive");
        }
        if METER_VARIABLES.contains(&self.species.as_str()) {
            return Err(PeriodError::Config(format!(
                "species name `{}` clashes with a meter variable",
                self.species
            )));
        }
        Ok(())
    }
}

pub fn period_distance(mean: f64, variance: f64, target: f64, mode: DistanceMode) -> f64 {
    let bias = (mean - target).abs() / target;
    let spread = variance.sqrt() / target;
    match mode {
        DistanceMode::MinRule => bias.min(spread),
        DistanceMode::MaxRule => bias.max(spread),
    }
}

fn sync_all() -> TriggerDecl {
    TriggerDecl::Sync(EventsDecl::Keyword("ALL".into()))
}

fn updates(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

/// The period automaton for `cfg`, still unbound to a model.
pub fn build_period_lha(cfg: &PeriodMeterConfig) -> Result<LhaDocument, PeriodError> {
    cfg.validate()?;
    let a = &cfg.species;
    let in_low = format!("{a} <= L");
    let in_mid = format!("{a} > L && {a} < H");
    let in_high = format!("{a} >= H");
    let observe = || vec![("n_A", a.clone())];

    let regions = ["low", "mid", "high"];
    let guards = [&in_low, &in_mid, &in_high];

    let locations = regions
        .iter()
        .map(|&name| LocationDecl {
            name: name.into(),
            label: None,
            flows: BTreeMap::from([("t".to_string(), FlowDecl::Rate(1.0))]),
        })
        .chain([LocationDecl {
            name: "end".into(),
            label: None,
            flows: BTreeMap::new(),
        }])
        .collect();

    let init = regions
        .iter()
        .zip(guards)
        .map(|(&name, guard)| InitDecl {
            location: name.into(),
            guard: guard.clone(),
            updates: updates(&observe()),
        })
        .collect();

    // Welford step written over pre-update values
    let dev = "(t - t_reg - mean)";
    let register = updates(&[
        ("n_A", a.clone()),
        ("n", "n + 1".into()),
        ("tp", "t - t_reg".into()),
        ("mean", format!("mean + {dev} / (n + 1)")),
        ("m2", format!("m2 + {dev} * {dev} * n / (n + 1)")),
        (
            "var",
            format!("(m2 + {dev} * {dev} * n / (n + 1)) / max(n, 1)"),
        ),
        ("t_reg", "t".into()),
        ("top", "0".into()),
    ]);
    let start = updates(&[
        ("n_A", a.clone()),
        ("t", "0".into()),
        ("t_reg", "0".into()),
        ("started", "1".into()),
        ("top", "0".into()),
    ]);

    let edge = |from: &str, to: &str, guard: String, upd: BTreeMap<String, String>| EdgeDecl {
        from: from.into(),
        to: to.into(),
        trigger: sync_all(),
        guard,
        updates: upd,
    };
    let mut edges = Vec::new();
    for from in regions {
        // into low
        if from == "low" {
            edges.push(edge(from, "low", in_low.clone(), updates(&observe())));
        } else {
            edges.push(edge(
                from,
                "low",
                format!("{in_low} && started == 0"),
                start.clone(),
            ));
            edges.push(edge(
                from,
                "low",
                format!("{in_low} && started == 1 && top == 1"),
                register.clone(),
            ));
            edges.push(edge(
                from,
                "low",
                format!("{in_low} && started == 1 && top == 0"),
                updates(&observe()),
            ));
        }
        edges.push(edge(from, "mid", in_mid.clone(), updates(&observe())));
        let mut to_high = observe();
        if from != "high" {
            to_high.push(("top", "1".into()));
        }
        edges.push(edge(from, "high", in_high.clone(), updates(&to_high)));
    }
    let rule = match cfg.distance_mode {
        DistanceMode::MinRule => "min",
        DistanceMode::MaxRule => "max",
    };
    for from in regions {
        edges.push(EdgeDecl {
            from: from.into(),
            to: "end".into(),
            trigger: TriggerDecl::Autonomous,
            guard: "n >= N".into(),
            updates: updates(&[(
                "d",
                format!("{rule}(abs(mean - target) / target, sqrt(var) / target)"),
            )]),
        });
    }

    Ok(LhaDocument {
        variables: METER_VARIABLES.iter().map(|v| v.to_string()).collect(),
        constants: BTreeMap::from([
            ("L".to_string(), cfg.low as f64),
            ("H".to_string(), cfg.high as f64),
            ("N".to_string(), cfg.n_periods as f64),
            ("target".to_string(), cfg.target),
        ]),
        locations,
        init,
        finals: vec!["end".into()],
        edges,
    })
}

/// Result of one synchronised run of the period automaton.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodMeasurement {
    /// `last(d)` when accepted, `+∞` otherwise.
    pub distance: f64,
    pub accepted: bool,
    pub periods: u32,
    pub mean: f64,
    pub variance: f64,
    pub time: f64,
    pub termination: Termination,
    pub events: u64,
}

/// A period automaton bound to a model.
#[derive(Debug, Clone)]
pub struct PeriodMeter {
    pub config: PeriodMeterConfig,
    pub lha: Lha,
}

const N: usize = 1;
const MEAN: usize = 5;
const VAR: usize = 6;
const D: usize = 8;

impl PeriodMeter {
    pub fn new(cfg: &PeriodMeterConfig, model: &CrnModel) -> Result<Self, PeriodError> {
        let doc = build_period_lha(cfg)?;
        if model.species_index(&cfg.species).is_none() {
            return Err(PeriodError::UnknownSpecies(cfg.species.clone()));
        }
        Ok(PeriodMeter {
            config: cfg.clone(),
            lha: Lha::from_document(&doc, model)?,
        })
    }

    pub fn measurement(&self, run: &RunResult, summary: &PathSummary) -> PeriodMeasurement {
        let v = &run.final_valuation;
        PeriodMeasurement {
            distance: if run.accepted { v[D] } else { f64::INFINITY },
            accepted: run.accepted,
            periods: v[N] as u32,
            mean: v[MEAN],
            variance: v[VAR],
            time: run.time,
            termination: summary.termination,
            events: summary.events,
        }
    }

    pub fn run(&self, source: &dyn PathSource, index: u64) -> Result<PeriodMeasurement, SimError> {
        let mut sync = Synchronizer::new(&self.lha);
        let summary = source.run_path(index, &mut sync)?;
        Ok(self.measurement(&sync.result(), &summary))
    }

    /// Distance of one SSA path of `model` under `theta`.
    pub fn measure(
        &self,
        model: &CrnModel,
        theta: &[f64],
        seed: u64,
        bounds: SafetyBounds,
    ) -> Result<PeriodMeasurement, SimError> {
        let source = SsaSource {
            model,
            theta: theta.to_vec(),
            init: model.initial_state.clone(),
            bounds,
            seed,
        };
        self.run(&source, 0)
    }
}

/// One-shot [`PeriodMeter::measure`] returning only the distance.
pub fn measure_distance(
    model: &CrnModel,
    theta: &[f64],
    cfg: &PeriodMeterConfig,
    seed: u64,
    bounds: SafetyBounds,
) -> Result<f64, PeriodError> {
    let meter = PeriodMeter::new(cfg, model)?;
    Ok(meter.measure(model, theta, seed, bounds)?.distance)
}

// Offline oracle

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CrossingGroups {
    pub low: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
}

/// Entry times into `low` and `high` of a piecewise-constant trace given as
/// `(time, value)` jumps, grouped into maximal runs of the same kind.
pub fn crossing_points(trace: &[(f64, u64)], low: u64, high: u64) -> CrossingGroups {
    let mut groups = CrossingGroups::default();
    let mut last_kind = None;
    for w in trace.windows(2) {
        let ((_, prev), (t, cur)) = (w[0], w[1]);
        let kind = if prev > low && cur <= low {
            false
        } else if prev < high && cur >= high {
            true
        } else {
            continue;
        };
        let list = if kind {
            &mut groups.high
        } else {
            &mut groups.low
        };
        if last_kind == Some(kind) {
            list.last_mut().expect("open group").push(t);
        } else {
            list.push(vec![t]);
        }
        last_kind = Some(kind);
    }
    groups
}

/// `t_p_k = min(T_{k+1}) - min(T_k)` over consecutive low groups.
pub fn period_realizations(groups: &CrossingGroups) -> Vec<f64> {
    let starts: Vec<f64> = groups
        .low
        .iter()
        .map(|g| g.iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    starts.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodStats {
    pub n: usize,
    pub mean: f64,
    /// Undefined below two periods.
    pub variance: Option<f64>,
}

/// Two-pass mean and unbiased variance.
pub fn period_stats(periods: &[f64]) -> Option<PeriodStats> {
    if periods.is_empty() {
        return None;
    }
    let n = periods.len();
    let mean = periods.iter().sum::<f64>() / n as f64;
    let variance = (n >= 2)
        .then(|| periods.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1) as f64);
    Some(PeriodStats { n, mean, variance })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingAnalysis {
    pub groups: CrossingGroups,
    /// At most `N` periods.
    pub periods: Vec<f64>,
    pub stats: Option<PeriodStats>,
    /// `+∞` when fewer than `N` periods were found.
    pub distance: f64,
}

pub fn analyze_trace(trace: &[(f64, u64)], cfg: &PeriodMeterConfig) -> CrossingAnalysis {
    let groups = crossing_points(trace, cfg.low, cfg.high);
    let mut periods = period_realizations(&groups);
    periods.truncate(cfg.n_periods as usize);
    let stats = period_stats(&periods);
    let distance = match stats {
        Some(PeriodStats {
            n,
            mean,
            variance: Some(var),
        }) if n == cfg.n_periods as usize => {
            period_distance(mean, var, cfg.target, cfg.distance_mode)
        }
        _ => f64::INFINITY,
    };
    CrossingAnalysis {
        groups,
        periods,
        stats,
        distance,
    }
}
