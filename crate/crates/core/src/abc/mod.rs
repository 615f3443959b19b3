//! Likelihood-free inference by approximate Bayesian computation.

mod rejection;
mod smc;
mod summary;

pub use rejection::{abc_rejection, RejectionConfig, RejectionResult};
pub use smc::{abc_smc, SmcConfig, SmcResult, SmcTermination};
pub use summary::{
    posterior_summary, smoothed_local_maxima, weighted_quantile, Correlation, Joint, Marginal,
    PosteriorSummary,
};

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CrnModel;
use crate::period::PeriodMeter;
use crate::rng::RngStream;
use crate::ssa::{SafetyBounds, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbcError {
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("invalid settings: {0}")]
    Config(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Something that scores a parameter vector; `seed` fixes all randomness.
pub trait DistanceMeter: Sync {
    fn distance(&self, theta: &[f64], seed: u64) -> Result<f64, SimError>;
}

impl<F> DistanceMeter for F
where
    F: Fn(&[f64], u64) -> Result<f64, SimError> + Sync,
{
    fn distance(&self, theta: &[f64], seed: u64) -> Result<f64, SimError> {
        self(theta, seed)
    }
}

/// Period distance of a model whose free parameters are a subset of its
/// parameter vector; the rest stay at `template`.
#[derive(Debug, Clone)]
pub struct ModelMeter<'m> {
    pub model: &'m CrnModel,
    pub meter: PeriodMeter,
    pub template: Vec<f64>,
    pub free: Vec<usize>,
    pub bounds: SafetyBounds,
}

impl ModelMeter<'_> {
    pub fn full_theta(&self, free_values: &[f64]) -> Vec<f64> {
        let mut theta = self.template.clone();
        for (&i, &v) in self.free.iter().zip(free_values) {
            theta[i] = v;
        }
        theta
    }
}

impl DistanceMeter for ModelMeter<'_> {
    fn distance(&self, theta: &[f64], seed: u64) -> Result<f64, SimError> {
        let full = self.full_theta(theta);
        Ok(self
            .meter
            .measure(self.model, &full, seed, self.bounds)?
            .distance)
    }
}

/// Independent uniform priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
}

impl Prior {
    pub fn new(names: Vec<String>, bounds: Vec<(f64, f64)>) -> Result<Self, AbcError> {
        if names.len() != bounds.len() || names.is_empty() {
            return Err(AbcError::Prior(
                "need one interval per parameter and at least one parameter".into(),
            ));
        }
        for (n, &(a, b)) in names.iter().zip(&bounds) {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(AbcError::Prior(format!(
                    "`{n}`: need finite a < b, got [{a}, {b}]"
                )));
            }
        }
        Ok(Prior { names, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.bounds[i].1 - self.bounds[i].0
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(a, b)| a + (b - a) * rng.uniform())
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(&self.bounds)
            .all(|(&x, &(a, b))| a <= x && x <= b)
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            self.bounds.iter().map(|&(a, b)| 1.0 / (b - a)).product()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: Vec<f64>,
    pub weight: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    pub index: usize,
    /// Tolerance the particles were accepted under.
    pub epsilon: f64,
    pub particles: Vec<Particle>,
    pub simulations: u64,
    /// Proposals rejected before simulation for lying outside the prior.
    pub out_of_support: u64,
}

impl Generation {
    pub fn acceptance_rate(&self) -> f64 {
        self.particles.len() as f64 / self.simulations.max(1) as f64
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

/// The `⌈αN⌉`-th smallest value; `+∞` entries sort last.
pub fn quantile(alpha: f64, values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((alpha * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Component-wise Gaussian perturbation kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kernel {
    pub sigma: Vec<f64>,
    /// Some component hit the variance floor.
    pub degenerate: bool,
}

const VARIANCE_FLOOR: f64 = 1e-12;

/// Twice the weighted variance of each component of `previous`.
pub fn fit_kernel(previous: &[Particle], prior: &Prior) -> Kernel {
    let total: f64 = previous.iter().map(|p| p.weight).sum();
    let mut degenerate = false;
    let sigma = (0..prior.dim())
        .map(|i| {
            let mean = previous.iter().map(|p| p.weight * p.theta[i]).sum::<f64>() / total;
            let var = previous
                .iter()
                .map(|p| p.weight * (p.theta[i] - mean).powi(2))
                .sum::<f64>()
                / total;
            let floor = VARIANCE_FLOOR * prior.width(i);
            let s2 = 2.0 * var;
            if s2 < floor {
                degenerate = true;
                floor.sqrt()
            } else {
                s2.sqrt()
            }
        })
        .collect();
    if degenerate {
        log::warn!("perturbation kernel floored: generation is degenerate in some parameter");
    }
    Kernel { sigma, degenerate }
}

impl Kernel {
    pub fn perturb(&self, theta: &[f64], rng: &mut RngStream) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.sigma)
            .map(|(&x, &s)| x + rng.sample(Normal::new(0.0, s).expect("positive sigma")))
            .collect()
    }

    /// `K(theta | from)`.
    pub fn density(&self, theta: &[f64], from: &[f64]) -> f64 {
        theta
            .iter()
            .zip(from)
            .zip(&self.sigma)
            .map(|((&x, &m), &s)| {
                let z = (x - m) / s;
                (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .product()
    }
}

/// `π(θ) / Σ_j ω_j K(θ | θ_j)`.
pub fn smc_weight(theta: &[f64], previous: &[Particle], kernel: &Kernel, prior: &Prior) -> f64 {
    let p = prior.density(theta);
    if p == 0.0 {
        return 0.0;
    }
    let denom: f64 = previous
        .iter()
        .map(|q| q.weight * kernel.density(theta, &q.theta))
        .sum();
    p / denom
}

/// Index drawn by cumulative scan over `weights` (summing to ~1).
pub(crate) fn pick(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        if w > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    last
}

pub(crate) fn build_pool(parallelism: usize) -> Result<rayon::ThreadPool, AbcError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| AbcError::Pool(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn particles(points: &[(f64, f64)]) -> Vec<Particle> {
        points
            .iter()
            .map(|&(x, w)| Particle {
                theta: vec![x],
                weight: w,
                distance: 0.0,
            })
            .collect()
    }

    #[test]
    fn prior_draws_and_density() {
        let p = Prior::new(vec!["r_A".into()], vec![(0.0, 10.0)]).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..1000 {
            let x = p.sample(&mut rng);
            assert!((0.0..=10.0).contains(&x[0]));
            assert_eq!(p.density(&x), 0.1);
        }
        assert_eq!(p.density(&[10.5]), 0.0);
        assert_eq!(p.density(&[-0.1]), 0.0);

        let r = Prior::new(
            vec!["alpha".into(), "beta".into(), "n".into()],
            vec![(50.0, 5000.0), (0.1, 5.0), (0.5, 5.0)],
        )
        .unwrap();
        assert_relative_eq!(
            r.density(&[100.0, 1.0, 2.0]),
            1.0 / (4950.0 * 4.9 * 4.5),
            max_relative = 1e-12
        );
        assert!(Prior::new(vec!["a".into()], vec![(1.0, 1.0)]).is_err());
        assert!(Prior::new(vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn quantile_convention() {
        assert_eq!(quantile(0.5, &[1.0, 2.0, 3.0, 4.0]), 2.0);
        assert_eq!(quantile(0.75, &[4.0, 1.0, 3.0, 2.0]), 3.0);
        assert_eq!(quantile(0.5, &[1.0, f64::INFINITY]), 1.0);
        assert_eq!(quantile(0.5, &[f64::INFINITY; 3]), f64::INFINITY);
        assert_eq!(quantile(0.01, &[5.0, 3.0]), 3.0);
    }

    #[test]
    fn kernel_from_two_points() {
        let prior = Prior::new(vec!["x".into()], vec![(0.0, 10.0)]).unwrap();
        let k = fit_kernel(&particles(&[(0.0, 0.5), (2.0, 0.5)]), &prior);
        assert_relative_eq!(k.sigma[0] * k.sigma[0], 2.0, max_relative = 1e-12);
        assert!(!k.degenerate);
        let a = k.density(&[0.3], &[1.7]);
        assert_eq!(a, k.density(&[1.7], &[0.3]));
    }

    #[test]
    fn degenerate_generation_hits_floor() {
        let prior = Prior::new(vec!["x".into()], vec![(0.0, 10.0)]).unwrap();
        let k = fit_kernel(&particles(&[(3.0, 0.5), (3.0, 0.5)]), &prior);
        assert!(k.degenerate);
        assert_relative_eq!(k.sigma[0], (1e-11f64).sqrt(), max_relative = 1e-12);
        let mut rng = RngStream::new(2);
        let moved = k.perturb(&[3.0], &mut rng);
        assert!((moved[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn weights_follow_formula() {
        let prior = Prior::new(vec!["x".into()], vec![(0.0, 10.0)]).unwrap();
        let k = Kernel {
            sigma: vec![1.0],
            degenerate: false,
        };
        let one = particles(&[(2.0, 1.0)]);
        let w = smc_weight(&[2.5], &one, &k, &prior);
        assert_relative_eq!(w, 0.1 / k.density(&[2.5], &[2.0]), max_relative = 1e-12);

        let two = particles(&[(2.0, 0.5), (4.0, 0.5)]);
        let (k1, k2) = (k.density(&[2.5], &[2.0]), k.density(&[2.5], &[4.0]));
        let w = smc_weight(&[2.5], &two, &k, &prior);
        assert_relative_eq!(w, 0.1 / (0.5 * k1 + 0.5 * k2), max_relative = 1e-12);
        assert_eq!(smc_weight(&[11.0], &two, &k, &prior), 0.0);
    }

    #[test]
    fn cumulative_pick() {
        let w = [0.25, 0.0, 0.75];
        assert_eq!(pick(w.iter().copied(), 0.0), 0);
        assert_eq!(pick(w.iter().copied(), 0.2499), 0);
        assert_eq!(pick(w.iter().copied(), 0.25), 2);
        // rounding slack never selects a zero-weight tail
        assert_eq!(pick([0.5, 0.4999999, 0.0].into_iter(), 0.9999999999), 1);
    }
}
