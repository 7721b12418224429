//! Diagonal Gaussians, reparameterized sampling and KL divergence to an
//! identity-covariance prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension {
                op: "diagonal_gaussian",
                left: vec![mean.len()],
                right: vec![std.len()],
            });
        }
        if let Some(bad) = std.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain {
                op: "diagonal_gaussian",
                detail: format!("std must be positive and finite, got {bad}"),
            });
        }
        Ok(DiagonalGaussian { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// `mean + std * noise`
    pub fn sample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.dim() {
            return Err(Error::Dimension {
                op: "sample",
                left: vec![self.dim()],
                right: vec![noise.len()],
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect())
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| {
                let u = (x - m) / s;
                -0.5 * u * u - s.ln() - half_ln_2pi
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Standard,
    FixedMean,
}

/// `N(mean, I)`; the mean is zero for the standard prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    kind: PriorKind,
    mean: Vec<f64>,
}

impl GaussianPrior {
    pub fn standard(dim: usize) -> Self {
        GaussianPrior {
            kind: PriorKind::Standard,
            mean: vec![0.0; dim],
        }
    }

    pub fn fixed_mean(mean: Vec<f64>) -> Result<Self> {
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Domain {
                op: "fixed_mean_prior",
                detail: "prior mean must be finite".into(),
            });
        }
        Ok(GaussianPrior {
            kind: PriorKind::FixedMean,
            mean,
        })
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        x.iter()
            .zip(&self.mean)
            .map(|(x, m)| -0.5 * (x - m) * (x - m) - half_ln_2pi)
            .sum()
    }
}

/// `KL(q || p) = 1/2 sum_d [(mu_d - m_d)^2 + sigma_d^2 - ln sigma_d^2 - 1]`
pub fn kl_to_prior(q: &DiagonalGaussian, p: &GaussianPrior) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Dimension {
            op: "kl_to_prior",
            left: vec![q.dim()],
            right: vec![p.dim()],
        });
    }
    let total: f64 = q
        .mean
        .iter()
        .zip(&q.std)
        .zip(&p.mean)
        .map(|((mu, s), m)| {
            let var = s * s;
            (mu - m) * (mu - m) + var - var.ln() - 1.0
        })
        .sum();
    Ok(0.5 * total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl McEstimate {
    /// Whether `value` lies within `k` standard errors of the estimate.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// Monte Carlo estimate of `KL(q || p)` as the sample mean of
/// `ln q(x) - ln p(x)` over reparameterized draws `x ~ q`.
pub fn kl_monte_carlo(q: &DiagonalGaussian, p: &GaussianPrior, n: usize, seed: u64) -> Result<McEstimate> {
    if n < 1000 {
        return Err(Error::contract(format!("kl_monte_carlo needs n >= 1000, got {n}")));
    }
    if q.dim() != p.dim() {
        return Err(Error::Dimension {
            op: "kl_monte_carlo",
            left: vec![q.dim()],
            right: vec![p.dim()],
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln_std: Vec<f64> = q.std.iter().map(|s| s.ln()).collect();
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let mut ratio = 0.0;
        for d in 0..q.dim() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let x = q.mean[d] + q.std[d] * eps;
            let dp = x - p.mean[d];
            ratio += -ln_std[d] - 0.5 * eps * eps + 0.5 * dp * dp;
        }
        let delta = ratio - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (ratio - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok(McEstimate {
        mean,
        std_error: (var / n as f64).sqrt(),
        samples: n,
    })
}

/// Row-batched diagonal Gaussian living on a graph. `std = exp(log_var / 2)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNode {
    pub mean: Var,
    pub log_var: Var,
    pub std: Var,
}

impl GaussianNode {
    pub fn from_log_var(g: &mut Graph, mean: Var, log_var: Var) -> Result<Self> {
        let half = g.scale(log_var, 0.5);
        let std = g.exp(half)?;
        Ok(GaussianNode { mean, log_var, std })
    }

    /// Build from an explicit positive `std` node (`log_var = 2 ln std`).
    pub fn from_std(g: &mut Graph, mean: Var, std: Var) -> Result<Self> {
        let ln = g.ln(std)?;
        let log_var = g.scale(ln, 2.0);
        Ok(GaussianNode { mean, log_var, std })
    }

    /// `mean + std * noise`, differentiable in mean and std.
    pub fn sample(&self, g: &mut Graph, noise: Var) -> Result<Var> {
        let spread = g.mul(self.std, noise)?;
        g.add(self.mean, spread)
    }

    /// Per-row KL to `N(prior_mean, I)` (standard prior when `None`), as `B x 1`.
    pub fn kl_rows(&self, g: &mut Graph, prior_mean: Option<Var>) -> Result<Var> {
        let centered = match prior_mean {
            Some(m) => g.sub(self.mean, m)?,
            None => self.mean,
        };
        let sq = g.mul(centered, centered)?;
        let var = g.exp(self.log_var)?;
        let a = g.add(sq, var)?;
        let b = g.sub(a, self.log_var)?;
        let c = g.shift(b, -1.0);
        let rows = g.row_sum(c);
        Ok(g.scale(rows, 0.5))
    }
}
