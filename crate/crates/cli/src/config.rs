use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use oscitune_core::model::{self, BUILTIN_NAMES};
use oscitune_core::{
    CrnModel, ModelMeter, PeriodMeter, PeriodMeterConfig, Prior, RejectionConfig, SafetyBounds,
    SmcConfig,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Rejection(RejectionConfig),
    Smc(SmcConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub max_time: f64,
    pub max_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in model name or path to a model file (relative to the
    /// config file).
    pub model: String,
    #[serde(default)]
    pub fixed_params: BTreeMap<String, f64>,
    pub prior: BTreeMap<String, (f64, f64)>,
    pub meter: PeriodMeterConfig,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub master_seed: u64,
    /// Worker threads; defaults to the available cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Defaults to `100 × target × N` time units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// A config checked against its model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: CrnModel,
    pub prior: Prior,
    pub meter: PeriodMeter,
    /// Full parameter vector with fixed values; free slots hold 0.
    pub template: Vec<f64>,
    /// Model parameter index of each prior dimension.
    pub free: Vec<usize>,
    pub bounds: SafetyBounds,
}

impl Experiment {
    pub fn distance_meter(&self) -> ModelMeter<'_> {
        ModelMeter {
            model: &self.model,
            meter: self.meter.clone(),
            template: self.template.clone(),
            free: self.free.clone(),
            bounds: self.bounds,
        }
    }

    pub fn parallelism(&self) -> usize {
        self.config
            .parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

pub fn read_file(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Resolves a model reference: a built-in name, or a file path relative
/// to `base`.
pub fn load_model(reference: &str, base: &Path) -> Result<CrnModel, ConfigError> {
    if let Some(m) = model::builtin(reference) {
        return Ok(m);
    }
    let path = base.join(reference);
    if !path.exists() {
        return Err(ConfigError::Invalid(vec![format!(
            "model `{reference}` is neither a built-in ({}) nor an existing file",
            BUILTIN_NAMES.join(", ")
        )]));
    }
    let text = read_file(&path)?;
    model::parse_model(&text).map_err(|e| match e {
        model::ModelError::Invalid(d) => ConfigError::Invalid(d),
        other => ConfigError::Parse(other.to_string()),
    })
}

impl ExperimentConfig {
    /// Parses a config, or the `config` field of a run manifest.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("oscitune_version").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let cfg = Self::from_json(&read_file(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    /// Checks everything that can be checked before simulating; all
    /// problems are reported together.
    pub fn resolve(&self, base: &Path) -> Result<Experiment, ConfigError> {
        let model = load_model(&self.model, base)?;
        let mut diags = Vec::new();

        for name in self.fixed_params.keys().chain(self.prior.keys()) {
            if model.param_index(name).is_none() {
                diags.push(format!("`{name}` is not a parameter of the model"));
            }
        }
        let mut template = vec![0.0; model.params.len()];
        let mut free = Vec::new();
        let mut names = Vec::new();
        let mut bounds = Vec::new();
        for (i, p) in model.params.iter().enumerate() {
            match (self.fixed_params.get(p), self.prior.get(p)) {
                (Some(_), Some(_)) => diags.push(format!("`{p}` is both fixed and given a prior")),
                (None, None) => diags.push(format!("`{p}` is neither fixed nor given a prior")),
                (Some(&v), None) => {
                    if !v.is_finite() {
                        diags.push(format!("fixed value of `{p}` is not finite"));
                    }
                    template[i] = v;
                }
                (None, Some(&(a, b))) => {
                    free.push(i);
                    names.push(p.clone());
                    bounds.push((a, b));
                }
            }
        }
        let prior = if names.is_empty() {
            if self.prior.is_empty() {
                diags.push("no parameter has a prior".into());
            }
            None
        } else {
            Prior::new(names, bounds)
                .map_err(|e| diags.push(e.to_string()))
                .ok()
        };
        let meter = PeriodMeter::new(&self.meter, &model)
            .map_err(|e| diags.push(e.to_string()))
            .ok();

        match &self.algorithm {
            Algorithm::Rejection(r) => {
                if r.n_particles == 0 {
                    diags.push("rejection: n_particles must be >= 1".into());
                }
                if r.epsilon.is_nan() || r.epsilon <= 0.0 {
                    diags.push("rejection: epsilon must be > 0".into());
                }
            }
            Algorithm::Smc(s) => {
                if s.n_particles < 2 {
                    diags.push("smc: n_particles must be >= 2".into());
                }
                if !(s.alpha > 0.0 && s.alpha < 1.0) {
                    diags.push("smc: alpha must lie in (0, 1)".into());
                }
                if s.epsilon_target.is_nan() || s.epsilon_target < 0.0 {
                    diags.push("smc: epsilon_target must be >= 0".into());
                }
            }
        }
        if self.parallelism == Some(0) {
            diags.push("parallelism must be >= 1".into());
        }
        let bounds = match self.bounds {
            Some(b) if b.max_time > 0.0 && b.max_events > 0 => SafetyBounds {
                max_time: b.max_time,
                max_events: b.max_events,
            },
            Some(_) => {
                diags.push("bounds: max_time and max_events must be positive".into());
                SafetyBounds::unbounded()
            }
            None => SafetyBounds::for_period_target(self.meter.target, self.meter.n_periods),
        };

        match (diags.is_empty(), prior, meter) {
            (true, Some(prior), Some(meter)) => Ok(Experiment {
                config: self.clone(),
                model,
                prior,
                meter,
                template,
                free,
                bounds,
            }),
            _ => Err(ConfigError::Invalid(diags)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXP1: &str = r#"{
        "model": "three-way",
        "fixed_params": {"r_B": 1.0, "r_C": 1.0},
        "prior": {"r_A": [0.0, 10.0]},
        "meter": {"species": "A", "L": 300, "H": 360, "N": 4, "target": 0.01},
        "algorithm": {"rejection": {"n_particles": 200, "epsilon": 0.2}},
        "master_seed": 1
    }"#;

    #[test]
    fn resolves_experiment_one() {
        let cfg = ExperimentConfig::from_json(EXP1).unwrap();
        let e = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(e.free, [0]);
        assert_eq!(e.template, [0.0, 1.0, 1.0]);
        assert_eq!(e.prior.names, ["r_A"]);
        assert_eq!(e.bounds.max_time, 4.0);
        assert_eq!(e.distance_meter().full_theta(&[2.5]), [2.5, 1.0, 1.0]);
    }

    #[test]
    fn lists_every_problem() {
        let mut cfg = ExperimentConfig::from_json(EXP1).unwrap();
        cfg.fixed_params.remove("r_C");
        cfg.fixed_params.insert("r_A".into(), 1.0);
        cfg.fixed_params.insert("zeta".into(), 1.0);
        cfg.meter.species = "Z".into();
        cfg.algorithm = Algorithm::Rejection(RejectionConfig {
            n_particles: 0,
            epsilon: -1.0,
            max_simulations: None,
        });
        let Err(ConfigError::Invalid(d)) = cfg.resolve(Path::new(".")) else {
            panic!()
        };
        assert_eq!(d.len(), 6, "{d:#?}");
    }

    #[test]
    fn reads_manifest_wrapper() {
        let wrapped = format!(r#"{{"oscitune_version": "0.1.0", "config": {EXP1}}}"#);
        assert_eq!(
            ExperimentConfig::from_json(&wrapped).unwrap(),
            ExperimentConfig::from_json(EXP1).unwrap()
        );
    }

    #[test]
    fn unknown_model_reference() {
        let mut cfg = ExperimentConfig::from_json(EXP1).unwrap();
        cfg.model = "no-such-model.json".into();
        assert!(matches!(
            cfg.resolve(Path::new("/nonexistent")),
            Err(ConfigError::Invalid(_))
        ));
    }
}
