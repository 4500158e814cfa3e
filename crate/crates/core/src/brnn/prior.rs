use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Two-component zero-mean Gaussian scale mixture over each weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixturePrior {
    /// Weight of the wide component.
    pub pi: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for MixturePrior {
    fn default() -> Self {
        Self {
            pi: 0.8,
            sigma1: 1.0,
            sigma2: 0.05,
        }
    }
}

pub(crate) fn log_normal_pdf(x: f64, sigma: f64) -> f64 {
    -HALF_LN_2PI - sigma.ln() - 0.5 * (x / sigma).powi(2)
}

impl MixturePrior {
    pub fn new(pi: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        let prior = Self { pi, sigma1, sigma2 };
        prior.validate()?;
        Ok(prior)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::invalid(format!("mixture pi {} not in (0, 1]", self.pi)));
        }
        if !(self.sigma2 > 0.0 && self.sigma1 >= self.sigma2 && self.sigma1.is_finite()) {
            return Err(Error::invalid(format!(
                "mixture scales need sigma1 >= sigma2 > 0, got {} and {}",
                self.sigma1, self.sigma2
            )));
        }
        Ok(())
    }

    /// Log-weights and component log-densities at `w`, with the narrow
    /// component dropped when `pi == 1`.
    fn components(&self, w: f64) -> (f64, Option<f64>) {
        let wide = self.pi.ln() + log_normal_pdf(w, self.sigma1);
        let narrow = (self.pi < 1.0).then(|| (1.0 - self.pi).ln() + log_normal_pdf(w, self.sigma2));
        (wide, narrow)
    }

    pub fn log_density(&self, w: f64) -> f64 {
        match self.components(w) {
            (a, None) => a,
            (a, Some(b)) => {
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            }
        }
    }

    /// Derivative of [`Self::log_density`] with respect to `w`.
    pub fn d_log_density(&self, w: f64) -> f64 {
        match self.components(w) {
            (_, None) => -w / (self.sigma1 * self.sigma1),
            (a, Some(b)) => {
                let m = a.max(b);
                let (ea, eb) = ((a - m).exp(), (b - m).exp());
                let (r1, r2) = (ea / (ea + eb), eb / (ea + eb));
                -w * (r1 / (self.sigma1 * self.sigma1) + r2 / (self.sigma2 * self.sigma2))
            }
        }
    }
}

/// `Σ_m log(pi·N(w_m|0,σ1²) + (1−pi)·N(w_m|0,σ2²))`.
pub fn log_mixture_prior(weights: &[f64], prior: &MixturePrior) -> f64 {
    weights.iter().map(|&w| prior.log_density(w)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_at_mode() {
        let prior = MixturePrior::new(1.0, 1.0, 0.5).unwrap();
        assert!((log_mixture_prior(&[0.0], &prior) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn pi_one_reduces_to_single_gaussian() {
        let prior = MixturePrior::new(1.0, 2.0, 0.01).unwrap();
        let ws = [-3.0, -0.2, 0.0, 1.7, 40.0];
        let single: f64 = ws.iter().map(|&w| log_normal_pdf(w, 2.0)).sum();
        assert!((log_mixture_prior(&ws, &prior) - single).abs() < 1e-12);
    }

    /// Direct evaluation in extended precision: products of densities computed
    /// via the `f64` exponent only after scaling by the dominant component.
    fn oracle(w: f64, p: &MixturePrior) -> f64 {
        use std::f64::consts::PI;
        let d1 = p.pi / (p.sigma1 * (2.0 * PI).sqrt()) * (-(w * w) / (2.0 * p.sigma1 * p.sigma1)).exp();
        let d2 = (1.0 - p.pi) / (p.sigma2 * (2.0 * PI).sqrt())
            * (-(w * w) / (2.0 * p.sigma2 * p.sigma2)).exp();
        (d1 + d2).ln()
    }

    #[test]
    fn matches_direct_evaluation_on_random_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let prior = MixturePrior::new(
                rng.random_range(0.7..1.0),
                rng.random_range(1.0..3.0),
                rng.random_range(0.001..1.0),
            )
            .unwrap();
            // keep |w| where the direct densities do not underflow
            let w: f64 = rng.random_range(-5.0..5.0);
            let got = prior.log_density(w);
            let want = oracle(w, &prior);
            assert!((got - want).abs() < 1e-10 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn finite_across_table_bounds_for_large_weights() {
        for &pi in &[0.7, 0.85, 1.0] {
            for &s1 in &[1.0, 3.0] {
                for &s2 in &[0.001, 1.0] {
                    let prior = MixturePrior::new(pi, s1, s2).unwrap();
                    for w in [-100.0, -37.5, 0.0, 1e-3, 99.9, 100.0] {
                        assert!(prior.log_density(w).is_finite());
                        assert!(prior.d_log_density(w).is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let prior = MixturePrior::new(0.75, 1.5, 0.05).unwrap();
        for &w in &[-2.0, -0.1, 0.03, 0.2, 1.1] {
            let h = 1e-6;
            let fd = (prior.log_density(w + h) - prior.log_density(w - h)) / (2.0 * h);
            assert!((fd - prior.d_log_density(w)).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_invalid_configuration() {
        assert!(MixturePrior::new(0.0, 1.0, 0.1).is_err());
        assert!(MixturePrior::new(0.5, 0.1, 1.0).is_err());
        assert!(MixturePrior::new(1.2, 1.0, 0.1).is_err());
    }
}
