//! Seeded random search over box-bounded hyper-parameters.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brnn::BrnnConfig;
use crate::dqr::DqrConfig;
use crate::error::{Error, Result};

pub const DEFAULT_TRIALS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
    pub integer: bool,
}

impl ParamSpec {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), lower, upper, scale: Scale::Linear, integer: false }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), lower, upper, scale: Scale::Log, integer: false }
    }

    pub fn integer(name: &str, lower: f64, upper: f64) -> Self {
        Self { name: name.into(), lower, upper, scale: Scale::Linear, integer: true }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.integer {
            let v = rng.random_range(self.lower - 0.5..self.upper + 0.5).round();
            return v.clamp(self.lower, self.upper);
        }
        match self.scale {
            Scale::Linear => rng.random_range(self.lower..=self.upper),
            Scale::Log => rng.random_range(self.lower.ln()..=self.upper.ln()).exp().clamp(self.lower, self.upper),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper && (!self.integer || v.fract() == 0.0)
    }
}

pub type TrialConfig = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    /// LSTM state size, kernel size and dropout probability.
    pub fn dqr() -> Self {
        Self {
            params: vec![
                ParamSpec::integer("lstm_state_size", 10.0, 128.0),
                ParamSpec::integer("conv_kernel_size", 1.0, 20.0),
                ParamSpec::linear("dropout_probability", 0.0, 0.6),
            ],
        }
    }

    /// LSTM state size and the mixture prior `(pi, sigma1, sigma2)`.
    pub fn brnn() -> Self {
        Self {
            params: vec![
                ParamSpec::integer("lstm_state_size", 10.0, 50.0),
                ParamSpec::linear("pi", 0.7, 1.0),
                ParamSpec::linear("sigma1", 1.0, 3.0),
                ParamSpec::log("sigma2", 0.001, 1.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::invalid("search space has no parameters"));
        }
        for (i, p) in self.params.iter().enumerate() {
            if !(p.lower < p.upper) || !p.lower.is_finite() || !p.upper.is_finite() {
                return Err(Error::invalid(format!("`{}`: need finite lower < upper", p.name)));
            }
            if p.scale == Scale::Log && p.lower <= 0.0 {
                return Err(Error::invalid(format!("`{}`: log scale needs lower > 0", p.name)));
            }
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::invalid(format!("`{}` appears twice", p.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, cfg: &TrialConfig) -> bool {
        self.params.iter().all(|p| cfg.get(&p.name).is_some_and(|&v| p.contains(v)))
    }
}

/// `n` i.i.d. configurations; the same seed gives the same list.
pub fn sample_configs(space: &SearchSpace, n: usize, seed: u64) -> Result<Vec<TrialConfig>> {
    space.validate()?;
    if n == 0 {
        return Err(Error::invalid("at least one configuration must be drawn"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| space.params.iter().map(|p| (p.name.clone(), p.sample(&mut rng))).collect())
        .collect())
}

/// Overrides the searched fields of `base`. Even kernel sizes map to the
/// next smaller odd size.
pub fn apply_dqr(base: &DqrConfig, cfg: &TrialConfig) -> DqrConfig {
    let mut out = base.clone();
    if let Some(&v) = cfg.get("lstm_state_size") {
        out.lstm_state_size = v as usize;
    }
    if let Some(&v) = cfg.get("conv_kernel_size") {
        let k = (v as usize).max(1);
        out.conv_kernel_size = if k % 2 == 0 { k - 1 } else { k };
    }
    if let Some(&v) = cfg.get("dropout_probability") {
        out.dropout_probability = v;
    }
    out
}

pub fn apply_brnn(base: &BrnnConfig, cfg: &TrialConfig) -> BrnnConfig {
    let mut out = base.clone();
    if let Some(&v) = cfg.get("lstm_state_size") {
        out.lstm_state_size = v as usize;
    }
    for (name, slot) in [("pi", &mut out.prior.pi), ("sigma1", &mut out.prior.sigma1), ("sigma2", &mut out.prior.sigma2)] {
        if let Some(&v) = cfg.get(name) {
            *slot = v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub params: TrialConfig,
    /// `None` when the trial failed.
    pub val_loss: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_trial: usize,
    pub best_config: TrialConfig,
    pub best_val_loss: f64,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    /// Best validation loss seen up to and including each trial.
    pub fn running_best(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trials
            .iter()
            .map(|t| {
                if let Some(v) = t.val_loss {
                    best = best.min(v);
                }
                best
            })
            .collect()
    }

    /// `trial,params_json,val_loss,runtime_s`; failed trials leave `val_loss` empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        w.write_record(["trial", "params_json", "val_loss", "runtime_s"])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                serde_json::to_string(&t.params)?,
                t.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default(),
                format!("{:.3}", t.runtime_s),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Stops launching new trials once the wall-clock budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Budget {
    pub max_seconds: Option<f64>,
}

/// Evaluates `objective` on `n_trials` sampled configurations and returns
/// the one with the lowest validation loss (earliest trial on ties).
pub fn run_search<F>(space: &SearchSpace, n_trials: usize, seed: u64, budget: Budget, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(usize, &TrialConfig) -> Result<f64>,
{
    let configs = sample_configs(space, n_trials, seed)?;
    let start = Instant::now();
    let limit = budget.max_seconds.map(Duration::from_secs_f64);
    let mut trials = Vec::with_capacity(n_trials);
    for (i, params) in configs.into_iter().enumerate() {
        if limit.is_some_and(|l| start.elapsed() >= l) {
            log::warn!("hpo: time budget spent after {i} trials");
            break;
        }
        let t0 = Instant::now();
        let outcome = objective(i, &params);
        let runtime_s = t0.elapsed().as_secs_f64();
        let (val_loss, error) = match outcome {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("non-finite validation loss {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        match (&val_loss, &error) {
            (Some(v), _) => log::info!("hpo trial {i}: validation loss {v:.5} in {runtime_s:.1} s"),
            (_, Some(e)) => log::warn!("hpo trial {i} failed: {e}"),
            _ => {}
        }
        trials.push(Trial { trial: i, params, val_loss, runtime_s, error });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.val_loss.map(|v| (t.trial, v)))
        .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
            Some((_, b)) if b <= v => acc,
            _ => Some((i, v)),
        });
    let Some((best_trial, best_val_loss)) = best else {
        let detail: Vec<String> = trials
            .iter()
            .map(|t| format!("trial {}: {}", t.trial, t.error.as_deref().unwrap_or("not run")))
            .collect();
        return Err(Error::invalid(format!("every trial failed ({})", detail.join("; "))));
    };
    Ok(SearchResult { best_trial, best_config: trials[best_trial].params.clone(), best_val_loss, trials })
}
