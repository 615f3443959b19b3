use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oscitune_cli::config::{load_model, read_file, ExperimentConfig};
use oscitune_cli::trace::{read_trace, write_trace};
use oscitune_cli::{run_experiment, trace_report, EXIT_BUDGET, EXIT_INVALID};
use oscitune_core::model::parse_model;
use oscitune_core::period::DistanceMode;
use oscitune_core::{sample_path, PeriodMeterConfig, Recorder, RngStream, SafetyBounds, State};

#[derive(Parser)]
#[command(
    name = "oscitune",
    version,
    about = "Calibrate stochastic oscillators against a target period"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (or a manifest.json from an earlier run).
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one trajectory and print it as CSV.
    Simulate(SimulateArgs),
    /// Measure periods of a recorded trace offline.
    AnalyzeTrace(AnalyzeArgs),
    /// Check an experiment config or a model file without simulating.
    Validate { file: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in model name or model file.
    model: String,
    /// Parameter value, repeated for every model parameter.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_assignment::<f64>)]
    params: Vec<(String, f64)>,
    /// Initial count override.
    #[arg(long = "init", value_name = "SPECIES=COUNT", value_parser = parse_assignment::<u64>)]
    init: Vec<(String, u64)>,
    #[arg(long, required_unless_present = "events")]
    t_max: Option<f64>,
    #[arg(long)]
    events: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Experiment config or bare meter JSON supplying the meter settings.
    #[arg(long, conflicts_with_all = ["species", "low", "high", "periods", "target"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    species: Option<String>,
    #[arg(long, required_unless_present = "config")]
    low: Option<u64>,
    #[arg(long, required_unless_present = "config")]
    high: Option<u64>,
    #[arg(long, required_unless_present = "config")]
    periods: Option<u32>,
    #[arg(long, required_unless_present = "config")]
    target: Option<f64>,
    /// Use the larger of the two relative errors.
    #[arg(long)]
    max_rule: bool,
}

fn parse_assignment<T: std::str::FromStr>(s: &str) -> Result<(String, T), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value = value
        .trim()
        .parse()
        .map_err(|_| format!("bad value `{value}` for `{name}`"))?;
    Ok((name.trim().to_string(), value))
}

/// An error that maps to the validation exit status.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(
    config: &Path,
    seed: Option<u64>,
    parallelism: Option<usize>,
    out: Option<PathBuf>,
) -> Result<i32> {
    let (mut cfg, base) = ExperimentConfig::load(config).map_err(invalid)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if parallelism.is_some() {
        cfg.parallelism = parallelism;
    }
    let out = out.unwrap_or_else(|| base.join(&cfg.output_dir));
    let exp = cfg.resolve(&base).map_err(invalid)?;
    let (outcome, files) = run_experiment(&exp, &out)?;
    eprintln!(
        "{} particles, {} simulations, {} ({} files in {})",
        outcome.particles.len(),
        outcome.simulations,
        outcome.termination,
        files.len(),
        out.display()
    );
    Ok(if outcome.aborted { EXIT_BUDGET } else { 0 })
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    let model = load_model(&args.model, Path::new(".")).map_err(invalid)?;
    let mut theta = vec![f64::NAN; model.params.len()];
    for (name, v) in &args.params {
        let i = model
            .param_index(name)
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        theta[i] = *v;
    }
    let missing: Vec<&str> = model
        .params
        .iter()
        .zip(&theta)
        .filter(|(_, v)| v.is_nan())
        .map(|(p, _)| p.as_str())
        .collect();
    if !missing.is_empty() {
        bail!(invalid(format!(
            "missing --param for {}",
            missing.join(", ")
        )));
    }
    let mut init: State = model.initial_state.clone();
    for (name, v) in &args.init {
        let i = model
            .species_index(name)
            .ok_or_else(|| invalid(format!("unknown species `{name}`")))?;
        init.0[i] = *v;
    }

    let bounds = SafetyBounds {
        max_time: args.t_max.unwrap_or(f64::INFINITY),
        max_events: u64::MAX,
    };
    let mut recorder = match args.events {
        Some(n) => Recorder::with_limit(n),
        None => Recorder::new(),
    };
    let mut rng = RngStream::new(args.seed);
    let summary = sample_path(&model, &theta, &init, &mut recorder, bounds, &mut rng)?;
    log::info!("{:?} after {} events", summary.termination, summary.events);
    let mut w = output(args.out.as_deref())?;
    write_trace(&model, &recorder.trace, args.events == Some(0), &mut w)?;
    w.flush()?;
    Ok(0)
}

fn meter_from_file(path: &Path) -> Result<PeriodMeterConfig> {
    let text = read_file(path).map_err(invalid)?;
    if let Ok(cfg) = ExperimentConfig::from_json(&text) {
        return Ok(cfg.meter);
    }
    serde_json::from_str(&text).map_err(|e| {
        invalid(format!(
            "{}: neither a config nor meter settings: {e}",
            path.display()
        ))
    })
}

fn analyze(args: AnalyzeArgs) -> Result<i32> {
    let cfg = match &args.config {
        Some(p) => meter_from_file(p)?,
        None => PeriodMeterConfig {
            species: args.species.clone().unwrap_or_default(),
            low: args.low.unwrap_or_default(),
            high: args.high.unwrap_or_default(),
            n_periods: args.periods.unwrap_or_default(),
            target: args.target.unwrap_or_default(),
            distance_mode: if args.max_rule {
                DistanceMode::MaxRule
            } else {
                DistanceMode::MinRule
            },
        },
    };
    cfg.validate().map_err(invalid)?;
    let file =
        File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = read_trace(file).map_err(invalid)?;
    let report = trace_report(&trace, &cfg).map_err(invalid)?;
    let mut w = output(None)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(0)
}

fn validate(file: &Path) -> Result<i32> {
    let text = read_file(file).map_err(invalid)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", file.display())))?;
    let is_model = value.get("species").is_some() && value.get("reactions").is_some();
    if is_model {
        let m = parse_model(&text).map_err(invalid)?;
        println!(
            "model ok: {} species, {} reactions, parameters {}",
            m.species.len(),
            m.reactions.len(),
            m.params.join(", ")
        );
    } else {
        let (cfg, base) = ExperimentConfig::load(file).map_err(invalid)?;
        let exp = cfg.resolve(&base).map_err(invalid)?;
        println!(
            "config ok: {} with prior over {}",
            exp.config.model,
            exp.prior.names.join(", ")
        );
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            parallelism,
            out,
        } => run(&config, seed, parallelism, out),
        Command::Simulate(args) => simulate(args),
        Command::AnalyzeTrace(args) => analyze(args),
        Command::Validate { file } => validate(&file),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID as u8)
        }
    }
}
