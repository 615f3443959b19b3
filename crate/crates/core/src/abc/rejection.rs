use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_pool, AbcError, DistanceMeter, Particle, Prior};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionConfig {
    pub n_particles: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub max_simulations: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionResult {
    /// In attempt order, each with weight `1/N`.
    pub particles: Vec<Particle>,
    /// Attempts up to and including the last accepted one.
    pub simulations: u64,
    /// The budget ran out before `N` particles were accepted.
    pub aborted: bool,
}

impl RejectionResult {
    pub fn acceptance_rate(&self) -> f64 {
        self.particles.len() as f64 / self.simulations.max(1) as f64
    }
}

/// Rejection sampling. Attempt `k` draws its parameters and simulation
/// seed from stream `(master_seed, [0, k])`; attempts are evaluated in
/// parallel batches and accepted in attempt order, so the result does not
/// depend on `parallelism`.
pub fn abc_rejection(
    meter: &dyn DistanceMeter,
    prior: &Prior,
    cfg: &RejectionConfig,
    master_seed: u64,
    parallelism: usize,
) -> Result<RejectionResult, AbcError> {
    if cfg.n_particles == 0 {
        return Err(AbcError::Config("need at least one particle".into()));
    }
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(AbcError::Config("epsilon must be positive".into()));
    }
    let pool = build_pool(parallelism)?;
    let budget = cfg.max_simulations.unwrap_or(u64::MAX);
    let batch = (16 * pool.current_num_threads()) as u64;
    let weight = 1.0 / cfg.n_particles as f64;

    let mut particles = Vec::with_capacity(cfg.n_particles);
    let mut next = 0u64;
    let mut used = 0u64;
    while particles.len() < cfg.n_particles && next < budget {
        let end = next.saturating_add(batch).min(budget);
        let outcomes: Vec<(Vec<f64>, f64)> = pool.install(|| {
            (next..end)
                .into_par_iter()
                .map(|k| {
                    let mut rng = RngStream::derive(master_seed, &[0, k]);
                    let theta = prior.sample(&mut rng);
                    let d = meter.distance(&theta, rng.seed())?;
                    Ok((theta, d))
                })
                .collect::<Result<_, AbcError>>()
        })?;
        for (k, (theta, d)) in (next..end).zip(outcomes) {
            if d <= cfg.epsilon {
                particles.push(Particle {
                    theta,
                    weight,
                    distance: d,
                });
                if particles.len() == cfg.n_particles {
                    used = k + 1;
                    break;
                }
            }
        }
        next = end;
    }
    let aborted = particles.len() < cfg.n_particles;
    if aborted {
        used = next;
        log::warn!(
            "simulation budget of {budget} exhausted with {} of {} particles",
            particles.len(),
            cfg.n_particles
        );
    }
    Ok(RejectionResult {
        particles,
        simulations: used,
        aborted,
    })
}
