use serde::Serialize;

use super::{Particle, Prior};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Marginal {
    pub name: String,
    /// `(low, high, mass)` over the prior interval.
    pub bins: Vec<(f64, f64, f64)>,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Joint {
    pub x: usize,
    pub y: usize,
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `mass[i][j]` for x-bin `i`, y-bin `j`.
    pub mass: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub x: usize,
    pub y: usize,
    pub value: f64,
    /// False when either component has zero variance; `value` is then 0.
    pub defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub marginals: Vec<Marginal>,
    pub joints: Vec<Joint>,
    pub correlations: Vec<Correlation>,
}

fn edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect()
}

fn bin_index(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let k = ((x - lo) / (hi - lo) * bins as f64).floor();
    (k.max(0.0) as usize).min(bins - 1)
}

fn normalised(particles: &[Particle]) -> Vec<f64> {
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    particles.iter().map(|p| p.weight / total).collect()
}

/// Weighted histograms, moments and pairwise correlations.
pub fn posterior_summary(particles: &[Particle], prior: &Prior, bins: usize) -> PosteriorSummary {
    let w = normalised(particles);
    let dim = prior.dim();
    let mean: Vec<f64> = (0..dim)
        .map(|i| particles.iter().zip(&w).map(|(p, w)| w * p.theta[i]).sum())
        .collect();
    let cov = |i: usize, j: usize| -> f64 {
        particles
            .iter()
            .zip(&w)
            .map(|(p, w)| w * (p.theta[i] - mean[i]) * (p.theta[j] - mean[j]))
            .sum()
    };

    let marginals = (0..dim)
        .map(|i| {
            let (lo, hi) = prior.bounds[i];
            let e = edges(lo, hi, bins);
            let mut mass = vec![0.0; bins];
            for (p, w) in particles.iter().zip(&w) {
                mass[bin_index(p.theta[i], lo, hi, bins)] += w;
            }
            Marginal {
                name: prior.names[i].clone(),
                bins: (0..bins).map(|k| (e[k], e[k + 1], mass[k])).collect(),
                mean: mean[i],
                variance: cov(i, i),
            }
        })
        .collect();

    let mut joints = Vec::new();
    let mut correlations = Vec::new();
    for x in 0..dim {
        for y in x + 1..dim {
            let ((xl, xh), (yl, yh)) = (prior.bounds[x], prior.bounds[y]);
            let mut mass = vec![vec![0.0; bins]; bins];
            for (p, w) in particles.iter().zip(&w) {
                mass[bin_index(p.theta[x], xl, xh, bins)][bin_index(p.theta[y], yl, yh, bins)] += w;
            }
            joints.push(Joint {
                x,
                y,
                x_edges: edges(xl, xh, bins),
                y_edges: edges(yl, yh, bins),
                mass,
            });
            let (vx, vy) = (cov(x, x), cov(y, y));
            let defined = vx > 0.0 && vy > 0.0;
            correlations.push(Correlation {
                x,
                y,
                value: if defined {
                    (cov(x, y) / (vx * vy).sqrt()).clamp(-1.0, 1.0)
                } else {
                    0.0
                },
                defined,
            });
        }
    }
    PosteriorSummary {
        marginals,
        joints,
        correlations,
    }
}

impl Joint {
    /// Whether `(px, py)` lies in the smallest set of bins holding at
    /// least `level` of the mass (highest-mass bins first).
    pub fn region_contains(&self, level: f64, px: f64, py: f64) -> bool {
        let nx = self.x_edges.len() - 1;
        let ny = self.y_edges.len() - 1;
        let (xl, xh) = (self.x_edges[0], self.x_edges[nx]);
        let (yl, yh) = (self.y_edges[0], self.y_edges[ny]);
        if !(xl..=xh).contains(&px) || !(yl..=yh).contains(&py) {
            return false;
        }
        let target = (bin_index(px, xl, xh, nx), bin_index(py, yl, yh, ny));
        let mut cells: Vec<(f64, (usize, usize))> = (0..nx)
            .flat_map(|i| (0..ny).map(move |j| (i, j)))
            .map(|(i, j)| (self.mass[i][j], (i, j)))
            .filter(|c| c.0 > 0.0)
            .collect();
        // ties broken by position for determinism
        cells.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut acc = 0.0;
        for (m, cell) in cells {
            if cell == target {
                return true;
            }
            acc += m;
            if acc >= level {
                return false;
            }
        }
        false
    }
}

/// Weighted quantile: smallest value whose cumulative weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &(v, w) in &pairs {
        acc += w / total;
        if acc >= q - 1e-12 {
            return v;
        }
    }
    pairs.last().map_or(f64::NAN, |p| p.0)
}

/// Indices of strict local maxima after a centred moving average of
/// `window` bins (shrunk at the edges). Plateaus count once.
pub fn smoothed_local_maxima(mass: &[f64], window: usize) -> Vec<usize> {
    let half = window / 2;
    let n = mass.len();
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            mass[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && smooth[j + 1] == smooth[i] {
            j += 1;
        }
        let left = i == 0 || smooth[i - 1] < smooth[i];
        let right = j == n - 1 || smooth[j + 1] < smooth[i];
        if left && right && smooth[i] > 0.0 {
            maxima.push(i);
        }
        i = j + 1;
    }
    maxima
}
