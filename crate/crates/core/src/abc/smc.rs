use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_pool, fit_kernel, pick, quantile, smc_weight, AbcError, DistanceMeter, Generation,
    Kernel, Particle, Prior,
};
use crate::rng::RngStream;

/// Below this relative decrease the tolerance is considered stuck.
const STAGNATION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    pub n_particles: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub epsilon_target: f64,
    pub max_generations: usize,
    /// Per generation; enforced as `ceil(budget / N)` per particle.
    #[serde(default)]
    pub max_simulations_per_generation: Option<u64>,
}

fn default_alpha() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SmcTermination {
    ReachedTarget,
    Stagnated,
    MaxGenerations,
    /// Every initial distance was infinite.
    NoFiniteDistance,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmcResult {
    /// Generation 0 holds the prior draws.
    pub generations: Vec<Generation>,
    pub termination: SmcTermination,
}

impl SmcResult {
    pub fn last(&self) -> &Generation {
        self.generations.last().expect("at least generation 0")
    }

    pub fn simulations(&self) -> u64 {
        self.generations.iter().map(|g| g.simulations).sum()
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.epsilon).collect()
    }
}

enum Proposal {
    Accepted(Particle, u64, u64),
    GaveUp(u64, u64),
}

fn propose(
    meter: &dyn DistanceMeter,
    prior: &Prior,
    previous: &[Particle],
    kernel: &Kernel,
    epsilon: f64,
    stream: [u64; 3],
    cap: u64,
) -> Result<Proposal, AbcError> {
    let (master, m, i) = (stream[0], stream[1], stream[2]);
    let mut sims = 0;
    let mut outside = 0;
    for j in 0.. {
        if sims >= cap || outside >= cap.saturating_mul(100) {
            return Ok(Proposal::GaveUp(sims, outside));
        }
        let mut rng = RngStream::derive(master, &[1, m, i, j]);
        let u = rng.uniform();
        let ancestor = &previous[pick(previous.iter().map(|p| p.weight), u)];
        let theta = kernel.perturb(&ancestor.theta, &mut rng);
        if prior.density(&theta) == 0.0 {
            outside += 1;
            continue;
        }
        sims += 1;
        let d = meter.distance(&theta, rng.seed())?;
        if d <= epsilon {
            let weight = smc_weight(&theta, previous, kernel, prior);
            return Ok(Proposal::Accepted(
                Particle {
                    theta,
                    weight,
                    distance: d,
                },
                sims,
                outside,
            ));
        }
    }
    unreachable!()
}

/// Sequential Monte Carlo ABC with an adaptive tolerance schedule.
///
/// Particle `i` of generation `m ≥ 1` uses streams
/// `(master_seed, [1, m, i, j])` for its `j`-th proposal, and the prior
/// draws of generation 0 use `(master_seed, [1, 0, i])`.
pub fn abc_smc(
    meter: &dyn DistanceMeter,
    prior: &Prior,
    cfg: &SmcConfig,
    master_seed: u64,
    parallelism: usize,
) -> Result<SmcResult, AbcError> {
    let n = cfg.n_particles;
    if n < 2 {
        return Err(AbcError::Config("need at least two particles".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(AbcError::Config("alpha must lie in (0, 1)".into()));
    }
    if cfg.epsilon_target.is_nan() || cfg.epsilon_target < 0.0 {
        return Err(AbcError::Config("epsilon_target must be >= 0".into()));
    }
    let pool = build_pool(parallelism)?;
    let cap = cfg
        .max_simulations_per_generation
        .map_or(u64::MAX, |b| b.div_ceil(n as u64).max(1));

    let first: Vec<Particle> = pool.install(|| {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::derive(master_seed, &[1, 0, i]);
                let theta = prior.sample(&mut rng);
                let distance = meter.distance(&theta, rng.seed())?;
                Ok(Particle {
                    theta,
                    weight: 1.0 / n as f64,
                    distance,
                })
            })
            .collect::<Result<_, AbcError>>()
    })?;
    let mut generations = vec![Generation {
        index: 0,
        epsilon: f64::INFINITY,
        particles: first,
        simulations: n as u64,
        out_of_support: 0,
    }];

    let termination = loop {
        let prev = generations.last().expect("non-empty");
        let m = generations.len();
        let distances: Vec<f64> = prev.particles.iter().map(|p| p.distance).collect();
        let q = quantile(cfg.alpha, &distances);
        if q.is_infinite() {
            break SmcTermination::NoFiniteDistance;
        }
        let epsilon = q.max(cfg.epsilon_target);
        if prev.epsilon.is_finite() && (prev.epsilon - epsilon) / prev.epsilon < STAGNATION {
            break SmcTermination::Stagnated;
        }
        if m > cfg.max_generations {
            break SmcTermination::MaxGenerations;
        }

        let kernel = fit_kernel(&prev.particles, prior);
        let previous = &prev.particles;
        let proposals: Vec<Proposal> = pool.install(|| {
            (0..n as u64)
                .into_par_iter()
                .map(|i| {
                    propose(
                        meter,
                        prior,
                        previous,
                        &kernel,
                        epsilon,
                        [master_seed, m as u64, i],
                        cap,
                    )
                })
                .collect::<Result<_, AbcError>>()
        })?;

        let mut particles = Vec::with_capacity(n);
        let (mut simulations, mut out_of_support, mut gave_up) = (0, 0, false);
        for p in proposals {
            match p {
                Proposal::Accepted(particle, s, o) => {
                    particles.push(particle);
                    simulations += s;
                    out_of_support += o;
                }
                Proposal::GaveUp(s, o) => {
                    simulations += s;
                    out_of_support += o;
                    gave_up = true;
                }
            }
        }
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        for p in &mut particles {
            p.weight /= total;
        }
        log::info!(
            "generation {m}: epsilon {epsilon:.4}, {} particles, {simulations} simulations",
            particles.len()
        );
        generations.push(Generation {
            index: m,
            epsilon,
            particles,
            simulations,
            out_of_support,
        });
        if gave_up {
            log::warn!("generation {m}: per-particle simulation budget exhausted");
            break SmcTermination::BudgetExhausted;
        }
        if epsilon <= cfg.epsilon_target {
            break SmcTermination::ReachedTarget;
        }
    };
    Ok(SmcResult {
        generations,
        termination,
    })
}
