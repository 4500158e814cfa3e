//! Synthetic multi-link travel times with a known conditional distribution.
//!
//! Each cell value is `median(link, step) · exp(s(step) · z)` with `z ~ N(0,1)`,
//! where the median combines a per-link base time, weekday AM/PM peaks and
//! congestion spikes that travel one link downstream per step.

use std::collections::HashMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::prep::{GridConfig, Observation, DAYS_PER_WEEK, SECONDS_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_links: usize,
    pub weeks: usize,
    pub frequency: i64,
    /// Per-link free-flow time in seconds; drawn from `U(50, 150)` when empty.
    pub base_times: Vec<f64>,
    pub am_peak: f64,
    pub pm_peak: f64,
    /// Peak amplitudes on Saturday and Sunday are multiplied by this.
    pub weekend_scale: f64,
    /// Log-scale noise sigma off-peak.
    pub noise_base: f64,
    /// Additional log-scale sigma at full peak.
    pub noise_peak: f64,
    /// Probability per (link, step) of a congestion spike starting.
    pub event_rate: f64,
    /// Relative slowdown of a spike (0.8 → 80% slower).
    pub event_magnitude: f64,
    /// Number of downstream links a spike reaches, one step later per hop.
    pub event_reach: usize,
    pub missing_rate: f64,
    pub start: DateTime<Utc>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_links: 4,
            weeks: 8,
            frequency: 900,
            base_times: Vec::new(),
            am_peak: 0.6,
            pm_peak: 0.5,
            weekend_scale: 0.3,
            noise_base: 0.08,
            noise_peak: 0.12,
            event_rate: 0.005,
            event_magnitude: 0.3,
            event_reach: 1,
            missing_rate: 0.05,
            start: Utc.with_ymd_and_hms(2020, 8, 3, 0, 0, 0).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 || self.weeks == 0 || self.frequency <= 0 {
            return Err(Error::invalid("synthetic set needs links, weeks and a positive frequency"));
        }
        for (name, r) in [("event_rate", self.event_rate), ("missing_rate", self.missing_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} {r} outside [0, 1]")));
            }
        }
        if !self.base_times.is_empty() && self.base_times.len() != self.n_links {
            return Err(Error::invalid("base_times must list one value per link"));
        }
        if self.base_times.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::invalid("base times must be positive"));
        }
        if self.noise_base < 0.0 || self.noise_peak < 0.0 || self.event_magnitude < 0.0 {
            return Err(Error::invalid("noise and event magnitudes must be non-negative"));
        }
        if self.am_peak <= -1.0 || self.pm_peak <= -1.0 {
            return Err(Error::invalid("peak amplitudes must exceed -1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        self.weeks * (SECONDS_PER_DAY * DAYS_PER_WEEK / self.frequency) as usize
    }

    pub fn grid(&self) -> GridConfig {
        let mut g = GridConfig::new(
            self.n_links,
            self.start,
            self.start + Duration::seconds(self.n_steps() as i64 * self.frequency),
        );
        g.frequency = self.frequency;
        g
    }

    pub fn link_ids(&self) -> Vec<String> {
        (0..self.n_links).map(|i| format!("L{i:02}")).collect()
    }
}

/// Smooth bump in `[0, 1]` centred on `centre_h` hours with width `width_h`.
fn bump(hour: f64, centre_h: f64, width_h: f64) -> f64 {
    (-0.5 * ((hour - centre_h) / width_h).powi(2)).exp()
}

/// Everything needed to evaluate the exact conditional law of any cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub base_times: Vec<f64>,
    /// `(link, step)` cells carrying a congestion spike.
    pub events: Vec<(usize, usize)>,
    #[serde(skip)]
    event_set: HashMap<(usize, usize), ()>,
}

impl SynthTruth {
    fn new(config: SynthConfig, base_times: Vec<f64>, events: Vec<(usize, usize)>) -> Self {
        let event_set = events.iter().map(|&e| (e, ())).collect();
        Self { config, base_times, events, event_set }
    }

    /// Rebuilds the lookup after deserialization.
    pub fn reindex(mut self) -> Self {
        self.event_set = self.events.iter().map(|&e| (e, ())).collect();
        self
    }

    fn hour_and_weekend(&self, step: usize) -> (f64, bool) {
        let secs = step as i64 * self.config.frequency;
        let t = self.config.start + Duration::seconds(secs);
        let day_secs = (t - t.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc()).num_seconds();
        let hour = (day_secs as f64 + 0.5 * self.config.frequency as f64) / 3600.0;
        let weekend = chrono::Datelike::weekday(&t).num_days_from_monday() >= 5;
        (hour, weekend)
    }

    /// Peak intensity in `[0, 1]`.
    pub fn peak_shape(&self, step: usize) -> f64 {
        let (hour, _) = self.hour_and_weekend(step);
        bump(hour, 8.0, 1.0).max(bump(hour, 16.5, 1.5))
    }

    /// Relative slowdown from the AM/PM peaks.
    pub fn peak(&self, step: usize) -> f64 {
        let (hour, weekend) = self.hour_and_weekend(step);
        let scale = if weekend { self.config.weekend_scale } else { 1.0 };
        scale * (self.config.am_peak * bump(hour, 8.0, 1.0) + self.config.pm_peak * bump(hour, 16.5, 1.5))
    }

    pub fn has_event(&self, link: usize, step: usize) -> bool {
        self.event_set.contains_key(&(link, step))
    }

    /// Deterministic profile value, which is also the cell's median.
    pub fn median(&self, link: usize, step: usize) -> f64 {
        let spike = if self.has_event(link, step) { 1.0 + self.config.event_magnitude } else { 1.0 };
        self.base_times[link] * (1.0 + self.peak(step)) * spike
    }

    /// Log-scale noise sigma of a step.
    pub fn log_sigma(&self, step: usize) -> f64 {
        self.config.noise_base + self.config.noise_peak * self.peak_shape(step)
    }

    /// Exact `p`-quantile of the cell's travel time in seconds.
    pub fn quantile(&self, link: usize, step: usize, p: f64) -> f64 {
        self.median(link, step) * (self.log_sigma(step) * normal::quantile(p)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub observations: Vec<Observation>,
    pub truth: SynthTruth,
    pub grid: GridConfig,
    pub link_ids: Vec<String>,
}

/// Draws one observation per non-missing cell, at a uniform second within the cell.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let base_times = if config.base_times.is_empty() {
        (0..config.n_links).map(|_| rng.random_range(50.0..150.0)).collect()
    } else {
        config.base_times.clone()
    };
    let n_steps = config.n_steps();
    let mut events = Vec::new();
    for step in 0..n_steps {
        for link in 0..config.n_links {
            if config.event_rate > 0.0 && rng.random::<f64>() < config.event_rate {
                for hop in 0..=config.event_reach {
                    if link + hop < config.n_links && step + hop < n_steps {
                        events.push((link + hop, step + hop));
                    }
                }
            }
        }
    }
    events.sort_unstable();
    events.dedup();
    let truth = SynthTruth::new(config.clone(), base_times, events);
    let ids = config.link_ids();
    let grid = config.grid();
    let mut observations = Vec::with_capacity(n_steps * config.n_links);
    for step in 0..n_steps {
        let sigma = truth.log_sigma(step);
        for (link, id) in ids.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            let offset = rng.random_range(0..config.frequency);
            let missing = rng.random::<f64>() < config.missing_rate;
            if missing {
                continue;
            }
            observations.push(Observation {
                link_id: id.clone(),
                observed_at: grid.step_start(step) + Duration::seconds(offset),
                travel_time: truth.median(link, step) * (sigma * z).exp(),
            });
        }
    }
    Ok(SynthDataset { observations, truth, grid, link_ids: ids })
}
