use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use oscitune_core::abc::{posterior_summary, Generation, Particle, PosteriorSummary};
use oscitune_core::{abc_rejection, abc_smc, SmcTermination};

use crate::config::{Algorithm, Experiment, ExperimentConfig};

const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Serialize)]
pub struct GenerationRecord {
    pub index: usize,
    pub epsilon: f64,
    pub particles: usize,
    pub simulations: u64,
    pub out_of_support: u64,
    pub acceptance_rate: f64,
}

impl From<&Generation> for GenerationRecord {
    fn from(g: &Generation) -> Self {
        GenerationRecord {
            index: g.index,
            epsilon: g.epsilon,
            particles: g.particles.len(),
            simulations: g.simulations,
            out_of_support: g.out_of_support,
            acceptance_rate: g.acceptance_rate(),
        }
    }
}

/// What a run produced, before it is written out.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub particles: Vec<Particle>,
    pub generations: Vec<GenerationRecord>,
    pub termination: String,
    /// The simulation budget ran out before completion.
    pub aborted: bool,
    pub simulations: u64,
}

#[derive(Debug, Serialize)]
struct GenerationsFile<'a> {
    algorithm: &'static str,
    termination: &'a str,
    aborted: bool,
    generations: &'a [GenerationRecord],
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    oscitune_version: &'static str,
    config: &'a ExperimentConfig,
    master_seed: u64,
    parallelism: usize,
    runtime_seconds: f64,
    simulations: u64,
    termination: &'a str,
    aborted: bool,
    files: Vec<String>,
}

/// Runs the configured inference.
pub fn infer(exp: &Experiment) -> Result<RunOutcome> {
    let meter = exp.distance_meter();
    let seed = exp.config.master_seed;
    let threads = exp.parallelism();
    Ok(match &exp.config.algorithm {
        Algorithm::Rejection(cfg) => {
            let r = abc_rejection(&meter, &exp.prior, cfg, seed, threads)?;
            let g = Generation {
                index: 0,
                epsilon: cfg.epsilon,
                particles: r.particles.clone(),
                simulations: r.simulations,
                out_of_support: 0,
            };
            RunOutcome {
                generations: vec![(&g).into()],
                termination: if r.aborted {
                    "budget_exhausted".into()
                } else {
                    "complete".into()
                },
                aborted: r.aborted,
                simulations: r.simulations,
                particles: r.particles,
            }
        }
        Algorithm::Smc(cfg) => {
            let r = abc_smc(&meter, &exp.prior, cfg, seed, threads)?;
            let termination = serde_json::to_value(r.termination)?
                .as_str()
                .unwrap_or_default()
                .to_string();
            RunOutcome {
                generations: r.generations.iter().map(Into::into).collect(),
                aborted: r.termination == SmcTermination::BudgetExhausted,
                simulations: r.simulations(),
                particles: r.last().particles.clone(),
                termination,
            }
        }
    })
}

pub fn posterior_csv(names: &[String], particles: &[Particle]) -> String {
    let mut s = String::from("particle_index");
    for n in names {
        write!(s, ",{n}").unwrap();
    }
    s.push_str(",weight,distance\n");
    for (i, p) in particles.iter().enumerate() {
        write!(s, "{i}").unwrap();
        for x in &p.theta {
            write!(s, ",{x}").unwrap();
        }
        writeln!(s, ",{},{}", p.weight, p.distance).unwrap();
    }
    s
}

fn histogram_files(summary: &PosteriorSummary) -> Vec<(String, String)> {
    let mut files = Vec::new();
    for m in &summary.marginals {
        let mut s = String::from("bin_low,bin_high,mass\n");
        for (lo, hi, mass) in &m.bins {
            writeln!(s, "{lo},{hi},{mass}").unwrap();
        }
        files.push((format!("marginals/{}.csv", m.name), s));
    }
    for j in &summary.joints {
        let (xn, yn) = (&summary.marginals[j.x].name, &summary.marginals[j.y].name);
        let mut s = format!("{xn}_low,{xn}_high,{yn}_low,{yn}_high,mass\n");
        for (i, row) in j.mass.iter().enumerate() {
            for (k, mass) in row.iter().enumerate() {
                writeln!(
                    s,
                    "{},{},{},{},{mass}",
                    j.x_edges[i],
                    j.x_edges[i + 1],
                    j.y_edges[k],
                    j.y_edges[k + 1]
                )
                .unwrap();
            }
        }
        files.push((format!("joint/{xn}__{yn}.csv"), s));
    }
    let mut s = String::from("x,y,pearson,defined\n");
    for c in &summary.correlations {
        writeln!(
            s,
            "{},{},{},{}",
            summary.marginals[c.x].name, summary.marginals[c.y].name, c.value, c.defined
        )
        .unwrap();
    }
    files.push(("joint/correlations.csv".into(), s));
    files
}

/// Runs `exp` and writes every artifact under `out`.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<(RunOutcome, Vec<PathBuf>)> {
    let start = Instant::now();
    let outcome = infer(exp)?;
    let runtime = start.elapsed().as_secs_f64();

    let mut files = vec![
        (
            "posterior.csv".to_string(),
            posterior_csv(&exp.prior.names, &outcome.particles),
        ),
        (
            "generations.json".to_string(),
            serde_json::to_string_pretty(&GenerationsFile {
                algorithm: match exp.config.algorithm {
                    Algorithm::Rejection(_) => "rejection",
                    Algorithm::Smc(_) => "smc",
                },
                termination: &outcome.termination,
                aborted: outcome.aborted,
                generations: &outcome.generations,
            })?,
        ),
    ];
    if !outcome.particles.is_empty() {
        files.extend(histogram_files(&posterior_summary(
            &outcome.particles,
            &exp.prior,
            HISTOGRAM_BINS,
        )));
    }
    let mut config = exp.config.clone();
    config.output_dir = out.to_path_buf();
    let names: Vec<String> = files.iter().map(|f| f.0.clone()).collect();
    files.push((
        "manifest.json".to_string(),
        serde_json::to_string_pretty(&Manifest {
            oscitune_version: env!("CARGO_PKG_VERSION"),
            config: &config,
            master_seed: exp.config.master_seed,
            parallelism: exp.parallelism(),
            runtime_seconds: runtime,
            simulations: outcome.simulations,
            termination: &outcome.termination,
            aborted: outcome.aborted,
            files: names,
        })?,
    ));

    let mut written = Vec::new();
    for (name, content) in files {
        let path = out.join(&name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok((outcome, written))
}
