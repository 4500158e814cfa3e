use std::collections::HashMap;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};
use serde::{Deserialize, Serialize};

use super::{DAYS_PER_WEEK, SECONDS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub link_id: String,
    pub observed_at: DateTime<Utc>,
    /// Seconds, strictly positive.
    pub travel_time: f64,
}

/// Fixed-frequency reference time axis plus window geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Seconds per reference step.
    pub frequency: i64,
    pub window_u: usize,
    pub horizon_k: usize,
    pub n_links: usize,
    pub period_start: DateTime<Utc>,
    pub period_end: DateTime<Utc>,
    /// Fixed offset from UTC used for day-of-week / time-of-day features.
    #[serde(default)]
    pub utc_offset_s: i64,
}

impl GridConfig {
    pub fn new(n_links: usize, period_start: DateTime<Utc>, period_end: DateTime<Utc>) -> Self {
        Self {
            frequency: 900,
            window_u: 32,
            horizon_k: 3,
            n_links,
            period_start,
            period_end,
            utc_offset_s: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frequency <= 0 {
            return Err(Error::invalid("grid frequency must be positive"));
        }
        if self.window_u == 0 || self.horizon_k == 0 {
            return Err(Error::invalid("window and horizon must be at least 1"));
        }
        if self.n_links == 0 {
            return Err(Error::invalid("grid needs at least one link"));
        }
        if self.period_end <= self.period_start {
            return Err(Error::invalid("period end must follow period start"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.period_end - self.period_start).num_seconds() / self.frequency) as usize
    }

    pub fn steps_per_day(&self) -> usize {
        ((SECONDS_PER_DAY + self.frequency - 1) / self.frequency) as usize
    }

    pub fn steps_per_week(&self) -> usize {
        (SECONDS_PER_DAY * DAYS_PER_WEEK / self.frequency) as usize
    }

    pub fn step_start(&self, step: usize) -> DateTime<Utc> {
        self.period_start + Duration::seconds(step as i64 * self.frequency)
    }

    /// Step containing `t`, or `None` outside `[period_start, period_end)`.
    pub fn step_of(&self, t: DateTime<Utc>) -> Option<usize> {
        if t < self.period_start || t >= self.period_end {
            return None;
        }
        let step = ((t - self.period_start).num_seconds() / self.frequency) as usize;
        (step < self.n_steps()).then_some(step)
    }

    /// Day of week (Monday = 0) of a step in local time.
    pub fn day_of_week(&self, step: usize) -> usize {
        let local = self.step_start(step) + Duration::seconds(self.utc_offset_s);
        local.weekday().num_days_from_monday() as usize
    }

    /// Time-of-day bin of a step at grid resolution.
    pub fn time_of_day_bin(&self, step: usize) -> usize {
        let local = self.step_start(step) + Duration::seconds(self.utc_offset_s);
        (local.num_seconds_from_midnight() as i64 / self.frequency) as usize
    }
}

/// Ordered link identifiers; position = tensor column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LinkIndex {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for LinkIndex {
    type Error = Error;
    fn try_from(ids: Vec<String>) -> Result<Self> {
        Self::new(ids)
    }
}

impl From<LinkIndex> for Vec<String> {
    fn from(index: LinkIndex) -> Self {
        index.ids
    }
}

impl LinkIndex {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate link id `{id}`")));
            }
        }
        Ok(Self { ids, lookup })
    }

    /// Links in order of first appearance.
    pub fn from_observations(obs: &[Observation]) -> Self {
        let mut ids: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        for o in obs {
            if !seen.contains_key(&o.link_id) {
                seen.insert(o.link_id.clone(), ids.len());
                ids.push(o.link_id.clone());
            }
        }
        Self { ids, lookup: seen }
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Per-cell mean travel time and observation count, `steps × links` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub n_steps: usize,
    pub n_links: usize,
    /// Mean seconds; `NaN` where `count == 0`.
    pub values: Vec<f64>,
    pub counts: Vec<u32>,
}

impl RawGrid {
    pub fn value(&self, step: usize, link: usize) -> Option<f64> {
        let i = step * self.n_links + link;
        (self.counts[i] > 0).then(|| self.values[i])
    }

    pub fn observed_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Averages observations into the grid step containing their timestamp.
pub fn snap_to_grid(observations: &[Observation], grid: &GridConfig, links: &LinkIndex) -> Result<RawGrid> {
    grid.validate()?;
    if links.len() != grid.n_links {
        return Err(Error::invalid(format!(
            "link index has {} links but grid expects {}",
            links.len(),
            grid.n_links
        )));
    }
    let n_steps = grid.n_steps();
    let cells = n_steps * grid.n_links;
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0u32; cells];
    for o in observations {
        let link = links.get(&o.link_id).ok_or_else(|| Error::UnknownLink(o.link_id.clone()))?;
        let step = grid.step_of(o.observed_at).ok_or_else(|| {
            Error::invalid(format!("observation at {} outside the grid period", o.observed_at))
        })?;
        if !(o.travel_time > 0.0 && o.travel_time.is_finite()) {
            return Err(Error::invalid(format!("non-positive travel time {}", o.travel_time)));
        }
        let i = step * grid.n_links + link;
        sums[i] += o.travel_time;
        counts[i] += 1;
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    Ok(RawGrid {
        n_steps,
        n_links: grid.n_links,
        values,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t(h: u32, m: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 8, 3, h, m, s).unwrap()
    }

    fn day_grid(n_links: usize) -> GridConfig {
        GridConfig::new(n_links, t(0, 0, 0), t(0, 0, 0) + Duration::days(1))
    }

    fn obs(link: &str, at: DateTime<Utc>, tt: f64) -> Observation {
        Observation { link_id: link.into(), observed_at: at, travel_time: tt }
    }

    #[test]
    fn observation_lands_in_containing_step() {
        let grid = day_grid(1);
        let links = LinkIndex::new(vec!["a".into()]).unwrap();
        let raw = snap_to_grid(&[obs("a", t(12, 7, 30), 50.0)], &grid, &links).unwrap();
        assert_eq!(grid.step_of(t(12, 7, 30)), Some(48));
        assert_eq!(raw.value(48, 0), Some(50.0));
        assert_eq!(raw.counts[48], 1);
    }

    #[test]
    fn cell_averages_multiple_observations() {
        let grid = day_grid(1);
        let links = LinkIndex::new(vec!["a".into()]).unwrap();
        let raw = snap_to_grid(&[obs("a", t(8, 1, 0), 80.0), obs("a", t(8, 14, 59), 100.0)], &grid, &links).unwrap();
        assert_eq!(raw.value(32, 0), Some(90.0));
        assert_eq!(raw.counts[32], 2);
        assert_eq!(raw.value(33, 0), None);
        assert_eq!(raw.counts[33], 0);
    }

    #[test]
    fn empty_input_gives_all_missing_grid() {
        let grid = day_grid(2);
        let links = LinkIndex::new(vec!["a".into(), "b".into()]).unwrap();
        let raw = snap_to_grid(&[], &grid, &links).unwrap();
        assert_eq!(raw.observed_cells(), 0);
        assert_eq!(raw.values.len(), 96 * 2);
    }

    #[test]
    fn unknown_link_is_rejected_by_name() {
        let grid = day_grid(1);
        let links = LinkIndex::new(vec!["a".into()]).unwrap();
        match snap_to_grid(&[obs("zz", t(1, 0, 0), 10.0)], &grid, &links) {
            Err(Error::UnknownLink(id)) => assert_eq!(id, "zz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn calendar_features() {
        let grid = day_grid(1);
        assert_eq!(grid.day_of_week(0), 0); // 2020-08-03 was a Monday
        assert_eq!(grid.time_of_day_bin(95), 95);
        assert_eq!(grid.steps_per_day(), 96);
        let shifted = GridConfig { utc_offset_s: 7200, ..grid };
        assert_eq!(shifted.time_of_day_bin(0), 8);
    }
}
