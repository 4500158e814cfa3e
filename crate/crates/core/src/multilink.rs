//! Route-level travel-time distributions from per-link laws, with horizon
//! rollover, and the feeder-minus-receiver difference distribution.

use std::path::Path;

use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{draw_truncated, GaussianLinkFit, MIN_TRAVEL_TIME};
use crate::io::write_json;

/// Levels reported in sample-set summaries.
pub const SUMMARY_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
/// Fewest samples accepted by [`empirical_interval`].
pub const MIN_INTERVAL_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Dqr,
    Brnn,
    Kalman,
}

impl ModelTag {
    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Dqr => "dqr",
            ModelTag::Brnn => "brnn",
            ModelTag::Kalman => "kalman",
        }
    }
}

impl std::str::FromStr for ModelTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dqr" => Ok(ModelTag::Dqr),
            "brnn" => Ok(ModelTag::Brnn),
            "kalman" => Ok(ModelTag::Kalman),
            _ => Err(Error::invalid(format!("unknown model `{s}` (expected dqr, brnn or kalman)"))),
        }
    }
}

/// How route samples were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPath {
    /// Each link drawn independently from its own law.
    IndependentLinks,
    /// Each route sample sums the links of one joint network draw.
    JointDraws,
}

/// Ordered links from the current position to the target stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub links: Vec<usize>,
    /// 0-based horizon of the first link (0 = t+1).
    pub start_horizon: usize,
    /// Grid step length in seconds.
    pub frequency: f64,
}

impl RoutePlan {
    pub fn new(links: Vec<usize>, start_horizon: usize, frequency: f64) -> Result<Self> {
        let plan = Self { links, start_horizon, frequency };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::invalid("route plan has no links"));
        }
        if self.links.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::invalid(format!("route links must be unique and contiguous: {:?}", self.links)));
        }
        if !(self.frequency > 0.0) {
            return Err(Error::invalid("route plan frequency must be positive"));
        }
        Ok(())
    }

    /// Horizon used by a link entered after `clock` seconds, capped at `k − 1`.
    pub fn horizon_at(&self, clock: f64, k: usize) -> usize {
        let shift = (clock / self.frequency).floor() as usize;
        (self.start_horizon + shift).min(k - 1)
    }
}

/// Travel-time law of one (link, horizon) cell.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkLaw {
    Gaussian(GaussianLinkFit),
    /// Resampled uniformly; values below 1 s are clamped.
    Empirical(Vec<f64>),
}

impl LinkLaw {
    fn draw<R: Rng + ?Sized>(&self, normal: Option<&Normal<f64>>, rng: &mut R) -> f64 {
        match (self, normal) {
            (LinkLaw::Gaussian(_), Some(n)) => draw_truncated(n, rng),
            (LinkLaw::Empirical(v), _) => v[rng.random_range(0..v.len())].max(MIN_TRAVEL_TIME),
            (LinkLaw::Gaussian(f), None) => {
                draw_truncated(&Normal::new(f.mean, f.sigma).expect("valid Gaussian"), rng)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            LinkLaw::Gaussian(f) => f.mean,
            LinkLaw::Empirical(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

/// Per-(horizon, link) laws for one prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkDistributions {
    pub horizons: usize,
    pub n_links: usize,
    cells: Vec<Option<LinkLaw>>,
}

impl LinkDistributions {
    pub fn new(horizons: usize, n_links: usize) -> Self {
        Self {
            horizons,
            n_links,
            cells: vec![None; horizons * n_links],
        }
    }

    pub fn set(&mut self, horizon: usize, link: usize, law: LinkLaw) -> Result<()> {
        if horizon >= self.horizons || link >= self.n_links {
            return Err(Error::invalid(format!("cell (link {link}, horizon {}) out of range", horizon + 1)));
        }
        if let LinkLaw::Empirical(v) = &law {
            if v.is_empty() {
                return Err(Error::invalid(format!("empty sample pool for link {link}, horizon {}", horizon + 1)));
            }
        }
        self.cells[horizon * self.n_links + link] = Some(law);
        Ok(())
    }

    pub fn get(&self, horizon: usize, link: usize) -> Result<&LinkLaw> {
        if horizon >= self.horizons || link >= self.n_links {
            return Err(Error::invalid(format!("cell (link {link}, horizon {}) out of range", horizon + 1)));
        }
        self.cells[horizon * self.n_links + link]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no distribution for link {link}, horizon {}", horizon + 1)))
    }
}

/// Monte Carlo cumulative route times with the horizon used for every link.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSampleSet {
    pub samples: Vec<f64>,
    /// `n × links` 0-based horizon indices.
    pub horizon_trace: Vec<u8>,
    pub n_links: usize,
    pub model: ModelTag,
    pub path: SamplingPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// `(level, value)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

impl RouteSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Horizons used along the route by sample `i`.
    pub fn trace(&self, i: usize) -> &[u8] {
        &self.horizon_trace[i * self.n_links..(i + 1) * self.n_links]
    }

    pub fn summary(&self) -> Result<SampleSummary> {
        summarize(&self.samples)
    }

    /// Single-column CSV of seconds.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["seconds"])?;
        for s in &self.samples {
            w.write_record([s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            model: ModelTag,
            path: SamplingPath,
            links: usize,
            #[serde(flatten)]
            summary: &'a SampleSummary,
        }
        let summary = self.summary()?;
        write_json(path, &Out { model: self.model, path: self.path, links: self.n_links, summary: &summary })
    }
}

pub fn summarize(samples: &[f64]) -> Result<SampleSummary> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot summarize an empty sample set"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SampleSummary {
        n: samples.len(),
        mean,
        std: var.sqrt(),
        quantiles: SUMMARY_LEVELS.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect(),
    })
}

/// Walks the plan once per sample; each sample carries its own clock.
pub fn sample_route_time<R: Rng + ?Sized>(
    dists: &LinkDistributions,
    plan: &RoutePlan,
    n: usize,
    model: ModelTag,
    rng: &mut R,
) -> Result<RouteSampleSet> {
    plan.validate()?;
    if plan.start_horizon >= dists.horizons {
        return Err(Error::invalid(format!(
            "start horizon {} beyond the {} available",
            plan.start_horizon + 1,
            dists.horizons
        )));
    }
    // Resolve every cell the walk might touch up front so a gap fails before sampling.
    let mut laws = Vec::with_capacity(plan.links.len() * dists.horizons);
    for &link in &plan.links {
        for h in 0..dists.horizons {
            let law = if h >= plan.start_horizon { Some(dists.get(h, link)?) } else { None };
            let normal = match law {
                Some(LinkLaw::Gaussian(f)) => Some(
                    Normal::new(f.mean, f.sigma)
                        .map_err(|e| Error::invalid(format!("link {link}, horizon {}: {e}", h + 1)))?,
                ),
                _ => None,
            };
            laws.push((law, normal));
        }
    }
    let nl = plan.links.len();
    let mut samples = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n * nl);
    for _ in 0..n {
        let mut clock = 0.0;
        for li in 0..nl {
            let h = plan.horizon_at(clock, dists.horizons);
            let (law, normal) = &laws[li * dists.horizons + h];
            clock += law.expect("resolved above").draw(normal.as_ref(), rng);
            trace.push(h as u8);
        }
        samples.push(clock);
    }
    Ok(RouteSampleSet {
        samples,
        horizon_trace: trace,
        n_links: nl,
        model,
        path: SamplingPath::IndependentLinks,
    })
}

/// Route times from joint draws laid out `n_draws × K × L` (seconds): sample
/// `s` walks the plan through draw `s` with the same rollover rule.
pub fn route_from_joint_draws(
    draws: &[f64],
    horizons: usize,
    n_links: usize,
    plan: &RoutePlan,
    model: ModelTag,
) -> Result<RouteSampleSet> {
    plan.validate()?;
    let per = horizons * n_links;
    if per == 0 || draws.len() % per != 0 {
        return Err(Error::invalid(format!("{} draw values do not tile {horizons}×{n_links}", draws.len())));
    }
    if plan.links.iter().any(|&l| l >= n_links) || plan.start_horizon >= horizons {
        return Err(Error::invalid("route plan exceeds the draw tensor"));
    }
    let n = draws.len() / per;
    let nl = plan.links.len();
    let mut samples = Vec::with_capacity(n);
    let mut trace = Vec::with_capacity(n * nl);
    for s in 0..n {
        let mut clock = 0.0;
        for &link in &plan.links {
            let h = plan.horizon_at(clock, horizons);
            clock += draws[s * per + h * n_links + link].max(MIN_TRAVEL_TIME);
            trace.push(h as u8);
        }
        samples.push(clock);
    }
    Ok(RouteSampleSet {
        samples,
        horizon_trace: trace,
        n_links: nl,
        model,
        path: SamplingPath::JointDraws,
    })
}

/// Realized route time through known per-(horizon, link) values with the
/// same rollover rule as the samplers. `values` is `K × L`.
pub fn realized_route_time(values: &[f64], horizons: usize, n_links: usize, plan: &RoutePlan) -> f64 {
    let mut clock = 0.0;
    for &link in &plan.links {
        let h = plan.horizon_at(clock, horizons);
        clock += values[h * n_links + link];
    }
    clock
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffDistribution {
    pub samples: Vec<f64>,
    pub quantiles: Vec<(f64, f64)>,
}

impl DiffDistribution {
    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        quantile_sorted(&s, 0.5)
    }
}

/// Index-wise paired differences `a_i − b_i` over the shorter set.
pub fn diff_distribution(a: &[f64], b: &[f64]) -> Result<DiffDistribution> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("difference of an empty sample set"));
    }
    let samples: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let quantiles = SUMMARY_LEVELS.iter().map(|&p| (p, quantile_sorted(&sorted, p))).collect();
    Ok(DiffDistribution { samples, quantiles })
}

/// Linear interpolation between order statistics at position `(n − 1)·p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central `alpha` interval `(q_{(1−α)/2}, q_{(1+α)/2})` of the samples.
pub fn empirical_interval(samples: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("interval coverage {alpha} outside (0, 1)")));
    }
    if samples.len() < MIN_INTERVAL_SAMPLES {
        return Err(Error::invalid(format!(
            "{} samples; at least {MIN_INTERVAL_SAMPLES} are needed for an interval",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&sorted, (1.0 - alpha) / 2.0), quantile_sorted(&sorted, (1.0 + alpha) / 2.0)))
}
