use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing quantile levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileLevels(Vec<f64>);

/// Central intervals reported in evaluation tables, as coverage fractions.
pub const REPORT_INTERVALS: [f64; 5] = [0.20, 0.60, 0.80, 0.90, 0.95];

const LEVEL_MATCH_TOL: f64 = 1e-9;

impl QuantileLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::invalid(format!("quantile levels must lie in (0,1): {levels:?}")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("quantile levels must be strictly increasing: {levels:?}")));
        }
        Ok(Self(levels))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices of the levels `(1 − alpha)/2` and `(1 + alpha)/2`, if both are present.
    pub fn interval_indices(&self, alpha: f64) -> Option<(usize, usize)> {
        let find = |p: f64| self.0.iter().position(|&l| (l - p).abs() < LEVEL_MATCH_TOL);
        Some((find((1.0 - alpha) / 2.0)?, find((1.0 + alpha) / 2.0)?))
    }
}

impl Default for QuantileLevels {
    fn default() -> Self {
        Self(vec![0.025, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 0.90, 0.95, 0.975])
    }
}

impl TryFrom<Vec<f64>> for QuantileLevels {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevels> for Vec<f64> {
    fn from(l: QuantileLevels) -> Self {
        l.0
    }
}
