//! Experiment configs, run artifacts and trace files for the `oscitune`
//! command line tool.

pub mod config;
pub mod run;
pub mod trace;

use serde::Serialize;

use oscitune_core::period::{CrossingGroups, PeriodStats};
use oscitune_core::{analyze_trace, PeriodMeterConfig};

pub use config::{ConfigError, Experiment, ExperimentConfig};
pub use run::{run_experiment, RunOutcome};

/// Exit status for invalid input.
pub const EXIT_INVALID: i32 = 1;
/// Exit status when a simulation budget ran out.
pub const EXIT_BUDGET: i32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReport {
    pub species: String,
    pub rows: usize,
    pub crossings: CrossingGroups,
    pub periods: Vec<f64>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    /// `null` when fewer than `N` periods were found.
    pub distance: f64,
    /// Whether `N` periods were found.
    pub complete: bool,
}

pub fn trace_report(
    trace: &trace::TraceFile,
    cfg: &PeriodMeterConfig,
) -> Result<TraceReport, trace::TraceError> {
    let column = trace.column(&cfg.species)?;
    let a = analyze_trace(&column, cfg);
    let stats: Option<PeriodStats> = a.stats;
    Ok(TraceReport {
        species: cfg.species.clone(),
        rows: column.len(),
        crossings: a.groups,
        complete: a.periods.len() == cfg.n_periods as usize,
        periods: a.periods,
        mean: stats.map(|s| s.mean),
        variance: stats.and_then(|s| s.variance),
        distance: a.distance,
    })
}
