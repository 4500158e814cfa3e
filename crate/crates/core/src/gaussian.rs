//! Gaussian link travel-time distributions fitted to predicted quantiles.
//!
//! The scale is found by damped least squares on the CDF residuals
//! `Φ((q_i − mean)/σ) − p_i`, iterating in `log σ` so the step is
//! scale-free and σ stays positive.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Smallest admissible scale, seconds.
pub const SIGMA_FLOOR: f64 = 0.1;
/// Lower truncation point for sampled travel times, seconds.
pub const MIN_TRAVEL_TIME: f64 = 1.0;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinkFit {
    pub mean: f64,
    pub sigma: f64,
    /// RMS of the probability residuals at the fitted scale.
    pub residual: f64,
    pub levels: Vec<f64>,
    /// False when the iteration budget ran out; the best iterate is kept.
    pub converged: bool,
}

fn cost(log_sigma: f64, offsets: &[f64], levels: &[f64]) -> f64 {
    let sigma = log_sigma.exp();
    offsets
        .iter()
        .zip(levels)
        .map(|(d, p)| (normal::cdf(d / sigma) - p).powi(2))
        .sum()
}

fn rms(cost: f64, n: usize) -> f64 {
    (cost / n as f64).sqrt()
}

/// Closed-form probit regression through the origin: `σ₀ = Σ z_i d_i / Σ z_i²`.
fn probit_init(offsets: &[f64], levels: &[f64]) -> f64 {
    let (num, den) = offsets.iter().zip(levels).fold((0.0, 0.0), |(n, d), (&off, &p)| {
        let z = normal::quantile(p);
        (n + z * off, d + z * z)
    });
    num / den
}

/// Fits `σ` so that `N(mean, σ²)` reproduces the predicted quantiles.
pub fn fit_sigma(mean: f64, quantiles: &[f64], levels: &[f64]) -> Result<GaussianLinkFit> {
    if quantiles.len() != levels.len() {
        return Err(Error::invalid(format!(
            "{} quantiles for {} levels",
            quantiles.len(),
            levels.len()
        )));
    }
    if levels.len() < 2 {
        return Err(Error::invalid("need at least two quantile levels"));
    }
    if quantiles.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("quantiles must be sorted ascending"));
    }
    if !mean.is_finite() || quantiles.iter().any(|q| !q.is_finite()) {
        return Err(Error::Numerical("non-finite quantile input".into()));
    }
    let offsets: Vec<f64> = quantiles.iter().map(|q| q - mean).collect();
    let n = levels.len();

    if quantiles.first() == quantiles.last() {
        let s = SIGMA_FLOOR.ln();
        return Ok(GaussianLinkFit {
            mean,
            sigma: SIGMA_FLOOR,
            residual: rms(cost(s, &offsets, levels), n),
            levels: levels.to_vec(),
            converged: true,
        });
    }

    let mut sigma0 = probit_init(&offsets, levels);
    if !(sigma0 > 0.0) {
        let spread = quantiles[n - 1] - quantiles[0];
        let z_spread = normal::quantile(levels[n - 1]) - normal::quantile(levels[0]);
        sigma0 = spread / z_spread;
    }
    let mut s = sigma0.max(SIGMA_FLOOR).ln();
    let mut current = cost(s, &offsets, levels);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITER {
        let sigma = s.exp();
        // r_i = Φ(d_i/σ) − p_i,  dr_i/ds = −φ(z_i)·z_i with z_i = d_i/σ
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for (d, p) in offsets.iter().zip(levels) {
            let z = d / sigma;
            let r = normal::cdf(z) - p;
            let j = -normal::pdf(z) * z;
            jtj += j * j;
            jtr += j * r;
        }
        if jtj == 0.0 || (jtr / jtj).abs() < 1e-14 {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let step = -jtr / (jtj * (1.0 + lambda));
            let trial = s + step;
            let trial_cost = cost(trial, &offsets, levels);
            // Near the optimum cost differences drown in rounding; the
            // gradient still resolves the root, so short steps are taken as is.
            if trial_cost <= current || step.abs() < 1e-6 {
                let small = step.abs() < 1e-14;
                s = trial;
                current = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!("fit_sigma: no convergence after {MAX_ITER} iterations; returning best iterate");
    }

    let mut sigma = s.exp();
    if sigma < SIGMA_FLOOR {
        sigma = SIGMA_FLOOR;
        current = cost(sigma.ln(), &offsets, levels);
    }
    Ok(GaussianLinkFit {
        mean,
        sigma,
        residual: rms(current, n),
        levels: levels.to_vec(),
        converged,
    })
}

/// Draws `n` travel times from `N(mean, σ²)`; a draw below 1 s is redrawn once,
/// then clamped.
pub fn sample_link<R: Rng + ?Sized>(fit: &GaussianLinkFit, n: usize, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    sample_link_into(fit, n, rng, &mut out);
    out
}

pub(crate) fn sample_link_into<R: Rng + ?Sized>(fit: &GaussianLinkFit, n: usize, rng: &mut R, out: &mut Vec<f64>) {
    let normal = Normal::new(fit.mean, fit.sigma).expect("sigma is positive and finite");
    for _ in 0..n {
        out.push(draw_truncated(&normal, rng));
    }
}

pub(crate) fn draw_truncated<R: Rng + ?Sized>(normal: &Normal<f64>, rng: &mut R) -> f64 {
    let mut x = normal.sample(rng);
    if x < MIN_TRAVEL_TIME {
        x = normal.sample(rng);
    }
    x.max(MIN_TRAVEL_TIME)
}

/// One exported fit row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub window: usize,
    pub link: String,
    pub horizon: usize,
    pub mean_s: f64,
    pub sigma_s: f64,
    pub residual: f64,
}

pub fn write_fits_csv(path: &Path, rows: &[FitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
