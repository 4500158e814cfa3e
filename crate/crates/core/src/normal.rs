//! Standard normal CDF and quantile function.

use statrs::function::erf::{erfc, erfc_inv};

/// `Φ(x)`.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `φ(x)`.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ⁻¹(p)` for `p ∈ (0, 1)`.
pub fn quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from high-precision tables.
    const TABLE: &[(f64, f64)] = &[
        (-3.0, 0.001_349_898_031_630_094_6),
        (-1.959_963_984_540_054, 0.025),
        (-1.0, 0.158_655_253_931_457_05),
        (0.0, 0.5),
        (0.5, 0.691_462_461_274_013_1),
        (1.281_551_565_544_600_5, 0.9),
        (2.5, 0.993_790_334_674_223_9),
    ];

    #[test]
    fn cdf_matches_table() {
        for &(x, p) in TABLE {
            assert!((cdf(x) - p).abs() < 1e-10, "Φ({x}) = {} vs {p}", cdf(x));
        }
    }

    #[test]
    fn quantile_matches_table() {
        for &(x, p) in TABLE {
            assert!((quantile(p) - x).abs() < 1e-9, "Φ⁻¹({p})");
        }
    }

    #[test]
    fn quantile_inverts_cdf_across_range() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!((cdf(quantile(p)) - p).abs() < 1e-10, "{p}: {}", cdf(quantile(p)));
        }
    }
}
