//! Trace CSV files: `time,reaction,<species...>`, one row per state. The
//! initial row leaves `reaction` empty.

use std::io::{Read, Write};

use thiserror::Error;

use oscitune_core::{CrnModel, Trace};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("trace has no column `{0}`")]
    MissingColumn(String),
}

/// Writes `trace` with reaction names from `model`. A trace whose event
/// limit was zero is written as the header alone.
pub fn write_trace<W: Write>(
    model: &CrnModel,
    trace: &Trace,
    header_only: bool,
    out: W,
) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string(), "reaction".to_string()];
    header.extend(model.species.iter().cloned());
    w.write_record(&header)?;
    if !header_only {
        for k in 0..trace.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(trace.times[k].to_string());
            row.push(
                trace.reactions[k]
                    .map(|r| model.reactions[r].name.clone())
                    .unwrap_or_default(),
            );
            row.extend(trace.states[k].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// A trace read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub species: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<u64>>,
}

impl TraceFile {
    /// `(time, value)` rows of one species.
    pub fn column(&self, name: &str) -> Result<Vec<(f64, u64)>, TraceError> {
        let i = self
            .species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| TraceError::MissingColumn(name.into()))?;
        Ok(self
            .times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| (t, s[i]))
            .collect())
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<TraceFile, TraceError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.get(0) != Some("time") {
        return Err(TraceError::MissingColumn("time".into()));
    }
    let offset = if header.get(1) == Some("reaction") {
        2
    } else {
        1
    };
    let species: Vec<String> = header.iter().skip(offset).map(String::from).collect();

    let mut file = TraceFile {
        species,
        times: Vec::new(),
        states: Vec::new(),
    };
    let mut last = f64::NEG_INFINITY;
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| TraceError::Malformed { line, message };
        let t: f64 = record[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad time `{}`", &record[0])))?;
        if !t.is_finite() || t < last {
            return Err(bad(format!("time {t} is not finite and non-decreasing")));
        }
        last = t;
        let state = record
            .iter()
            .skip(offset)
            .map(|v| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| bad(format!("bad count `{v}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        file.times.push(t);
        file.states.push(state);
    }
    Ok(file)
}
