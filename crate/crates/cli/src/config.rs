use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use holdwise::brnn::BrnnConfig;
use holdwise::dqr::DqrConfig;
use holdwise::evaluation::DEFAULT_SAMPLES;
use holdwise::hpo::DEFAULT_TRIALS;
use holdwise::kalman::EmConfig;
use holdwise::prep::{SplitSpec, TableConfig};
use holdwise::synth::SynthConfig;
use holdwise::transfer::{JourneyFixtureConfig, PolicyConfig};
use serde::{Deserialize, Serialize};

/// Grid settings; the period is derived from the data when left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    pub frequency: i64,
    pub window_u: usize,
    pub horizon_k: usize,
    pub utc_offset_s: i64,
    pub period_start: Option<DateTime<Utc>>,
    pub period_end: Option<DateTime<Utc>>,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self { frequency: 900, window_u: 32, horizon_k: 3, utc_offset_s: 0, period_start: None, period_end: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub coverages: Vec<f64>,
    pub max_windows: Option<usize>,
    /// Route as link ids; every link in order when empty.
    pub route: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { coverages: holdwise::dqr::REPORT_INTERVALS.to_vec(), max_windows: None, route: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoSettings {
    pub trials: usize,
    pub max_seconds: Option<f64>,
}

impl Default for HpoSettings {
    fn default() -> Self {
        Self { trials: DEFAULT_TRIALS, max_seconds: None }
    }
}

/// Everything a run can be configured with, read from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub samples: usize,
    pub grid: GridSettings,
    /// Whole-week split; derived from the data length in a 13:2:2 ratio when absent.
    pub split: Option<SplitSpec>,
    pub table: TableConfig,
    pub dqr: DqrConfig,
    pub brnn: BrnnConfig,
    pub kalman: EmConfig,
    pub eval: EvalSettings,
    pub hpo: HpoSettings,
    pub synth: SynthConfig,
    pub transfer: PolicyConfig,
    pub journeys: JourneyFixtureConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: DEFAULT_SAMPLES,
            grid: GridSettings::default(),
            split: None,
            table: TableConfig::default(),
            dqr: DqrConfig::default(),
            brnn: BrnnConfig::default(),
            kalman: EmConfig::default(),
            eval: EvalSettings::default(),
            hpo: HpoSettings::default(),
            synth: SynthConfig::default(),
            transfer: PolicyConfig::default(),
            journeys: JourneyFixtureConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| holdwise::Error::invalid(format!("config {}: {e}", path.display())).into())
    }

    /// Applies the universal flags and spreads the seed to every component.
    pub fn with_overrides(mut self, seed: Option<u64>, samples: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(n) = samples {
            self.samples = n;
        }
        if self.samples == 0 {
            return Err(holdwise::Error::invalid("sample count must be at least 1").into());
        }
        self.dqr.seed = self.seed;
        self.brnn.seed = self.seed;
        self.synth.seed = self.seed;
        self.transfer.seed = self.seed;
        self.journeys.seed = self.seed;
        self.journeys.n_samples = self.samples;
        Ok(self)
    }
}
