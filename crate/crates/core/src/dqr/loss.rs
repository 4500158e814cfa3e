//! Squared-error, pinball and joint losses over flattened tensors.
//!
//! All losses are sums over masked-in elements; a mask entry of 0 removes the
//! element entirely.

use crate::error::{Error, Result};

/// Pinball loss of a single residual `y − q` at level `p`.
#[inline]
pub fn pinball(residual: f64, p: f64) -> f64 {
    (p * residual).max((p - 1.0) * residual)
}

fn check_len(name: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(name, format!("length {a} vs {b}")));
    }
    Ok(())
}

pub fn l2_loss(y: &[f64], y_hat: &[f64], mask: &[f64]) -> Result<f64> {
    check_len("l2_loss", y.len(), y_hat.len())?;
    check_len("l2_loss", y.len(), mask.len())?;
    Ok(y.iter()
        .zip(y_hat)
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|((y, q), m)| m * (y - q).powi(2))
        .sum())
}

pub fn pinball_loss(y: &[f64], q_hat: &[f64], p: f64, mask: &[f64]) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    check_len("pinball_loss", y.len(), q_hat.len())?;
    check_len("pinball_loss", y.len(), mask.len())?;
    Ok(y.iter()
        .zip(q_hat)
        .zip(mask)
        .filter(|(_, &m)| m != 0.0)
        .map(|((y, q), m)| m * pinball(y - q, p))
        .sum())
}

/// `l2_loss + Σ_j pinball_loss(p_j)`; `quantiles[j]` holds predictions for `levels[j]`.
pub fn joint_loss(
    y: &[f64],
    y_hat: &[f64],
    quantiles: &[&[f64]],
    levels: &[f64],
    mask: &[f64],
) -> Result<f64> {
    check_len("joint_loss", quantiles.len(), levels.len())?;
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("quantile levels must be strictly increasing"));
    }
    let mut total = l2_loss(y, y_hat, mask)?;
    for (q, &p) in quantiles.iter().zip(levels) {
        total += pinball_loss(y, q, p, mask)?;
    }
    Ok(total)
}
