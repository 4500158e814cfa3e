use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::grid::{GridConfig, RawGrid};
use crate::error::{Error, Result};

const DAYS: usize = 7;
const DAY_CLASSES: usize = 2;

fn day_class(dow: usize) -> usize {
    usize::from(dow >= 5)
}

/// Population statistics of observed cells in one conditioning bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn finish(self) -> BinStats {
        if self.n == 0 {
            return BinStats::default();
        }
        BinStats {
            mean: self.mean,
            variance: (self.m2 / self.n as f64).max(0.0),
            count: self.n,
        }
    }
}

/// Knobs for the conditional-mean table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TableConfig {
    /// A bin is used only when it holds at least this many observed cells.
    pub min_bin_count: usize,
    /// Insert a (link, day class, ToD) level between the (link, DoW, ToD) bin
    /// and the link-global fallback. Day classes: Monday–Friday, weekend.
    pub day_class_fallback: bool,
    /// Variances below this (s²) are replaced by it.
    pub variance_floor: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            min_bin_count: 1,
            day_class_fallback: false,
            variance_floor: 1.0,
        }
    }
}

/// Per-(link, DoW, ToD) mean and variance with fallbacks for sparse bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMeanTable {
    pub config: TableConfig,
    pub n_links: usize,
    pub tod_bins: usize,
    /// Indexed `[link][dow][tod]`.
    pub bins: Vec<BinStats>,
    /// Indexed `[link][day class][tod]`.
    pub class_pooled: Vec<BinStats>,
    pub links: Vec<BinStats>,
    pub global: BinStats,
    pub warnings: Vec<String>,
}

impl ConditionalMeanTable {
    pub fn bin(&self, link: usize, dow: usize, tod: usize) -> &BinStats {
        &self.bins[(link * DAYS + dow) * self.tod_bins + tod]
    }

    /// `(mean, variance)` after fallbacks and the variance floor.
    pub fn lookup(&self, link: usize, dow: usize, tod: usize) -> (f64, f64) {
        let need = self.config.min_bin_count.max(1);
        let bin = self.bin(link, dow, tod);
        let chosen = if bin.count >= need {
            bin
        } else {
            let pooled = &self.class_pooled[(link * DAY_CLASSES + day_class(dow)) * self.tod_bins + tod];
            if self.config.day_class_fallback && pooled.count >= need {
                pooled
            } else if self.links[link].count > 0 {
                &self.links[link]
            } else {
                &self.global
            }
        };
        (chosen.mean, chosen.variance.max(self.config.variance_floor))
    }

    pub fn lookup_step(&self, grid: &GridConfig, link: usize, step: usize) -> (f64, f64) {
        self.lookup(link, grid.day_of_week(step), grid.time_of_day_bin(step))
    }

    pub fn standardize(&self, grid: &GridConfig, seconds: f64, link: usize, step: usize) -> f64 {
        let (mean, var) = self.lookup_step(grid, link, step);
        (seconds - mean) / var.sqrt()
    }

    pub fn destandardize(&self, grid: &GridConfig, value: f64, link: usize, step: usize) -> f64 {
        let (mean, var) = self.lookup_step(grid, link, step);
        value * var.sqrt() + mean
    }

    /// Standard deviation in seconds for a cell, used to rescale spreads.
    pub fn scale(&self, grid: &GridConfig, link: usize, step: usize) -> f64 {
        self.lookup_step(grid, link, step).1.sqrt()
    }
}

/// Builds the table from observed cells whose step lies in `train_steps`.
pub fn build_conditional_means(
    raw: &RawGrid,
    grid: &GridConfig,
    train_steps: Range<usize>,
    config: TableConfig,
) -> Result<ConditionalMeanTable> {
    if train_steps.end > raw.n_steps || train_steps.is_empty() {
        return Err(Error::invalid(format!(
            "training steps {train_steps:?} not inside grid of {} steps",
            raw.n_steps
        )));
    }
    if !(config.variance_floor > 0.0) {
        return Err(Error::invalid("variance floor must be positive"));
    }
    let n_links = raw.n_links;
    let tod_bins = grid.steps_per_day();
    let mut bins = vec![Welford::default(); n_links * DAYS * tod_bins];
    let mut pooled = vec![Welford::default(); n_links * DAY_CLASSES * tod_bins];
    let mut links = vec![Welford::default(); n_links];
    let mut global = Welford::default();

    for step in train_steps.clone() {
        let dow = grid.day_of_week(step);
        let tod = grid.time_of_day_bin(step);
        for link in 0..n_links {
            if let Some(v) = raw.value(step, link) {
                bins[(link * DAYS + dow) * tod_bins + tod].push(v);
                pooled[(link * DAY_CLASSES + day_class(dow)) * tod_bins + tod].push(v);
                links[link].push(v);
                global.push(v);
            }
        }
    }
    if global.n == 0 {
        return Err(Error::invalid("training period contains no observations"));
    }

    let mut warnings = Vec::new();
    if train_steps.len() < grid.steps_per_week() {
        warnings.push(format!(
            "training period spans {} steps, shorter than one week ({}); some day-of-week bins fall back",
            train_steps.len(),
            grid.steps_per_week()
        ));
    }
    let unseen: Vec<usize> = (0..n_links).filter(|&l| links[l].n == 0).collect();
    if !unseen.is_empty() {
        warnings.push(format!("links without training observations use the global mean: {unseen:?}"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(ConditionalMeanTable {
        config,
        n_links,
        tod_bins,
        bins: bins.into_iter().map(Welford::finish).collect(),
        class_pooled: pooled.into_iter().map(Welford::finish).collect(),
        links: links.into_iter().map(Welford::finish).collect(),
        global: global.finish(),
        warnings,
    })
}

/// Standardized `steps × links` grid with its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedGrid {
    pub n_steps: usize,
    pub n_links: usize,
    pub values: Vec<f64>,
    /// 1.0 observed, 0.0 imputed.
    pub mask: Vec<f64>,
}

/// Fills empty cells with the conditional mean, then centres and scales every cell.
pub fn impute_and_standardize(raw: &RawGrid, grid: &GridConfig, table: &ConditionalMeanTable) -> StandardizedGrid {
    let mut values = Vec::with_capacity(raw.values.len());
    let mut mask = Vec::with_capacity(raw.values.len());
    for step in 0..raw.n_steps {
        for link in 0..raw.n_links {
            let (mean, var) = table.lookup_step(grid, link, step);
            match raw.value(step, link) {
                Some(v) => {
                    values.push((v - mean) / var.sqrt());
                    mask.push(1.0);
                }
                None => {
                    values.push(0.0);
                    mask.push(0.0);
                }
            }
        }
    }
    StandardizedGrid {
        n_steps: raw.n_steps,
        n_links: raw.n_links,
        values,
        mask,
    }
}
