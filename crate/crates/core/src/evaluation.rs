//! Route-level forecasting harness: model outputs → per-link laws → route
//! samples → intervals, aligned with realized route times for the metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brnn::{sample_predict_batch, BrnnModel, SampleOptions};
use crate::dqr::{DqrModel, REPORT_INTERVALS};
use crate::error::{Error, Result};
use crate::gaussian::{fit_sigma, GaussianLinkFit};
use crate::kalman::{em_fit, kf_predict_k, EmConfig, EmFit, KalmanParams, KalmanStepper, MaskedSeries};
use crate::metrics::{build_report, EvalReport, HorizonForecasts, IntervalBounds, ModelForecasts};
use crate::multilink::{
    empirical_interval, realized_route_time, route_from_joint_draws, sample_route_time, LinkDistributions, LinkLaw,
    ModelTag, RoutePlan, RouteSampleSet,
};
use crate::prep::{LinkSeriesTensor, PreparedDataset, Split};

pub const DEFAULT_SAMPLES: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Central interval coverages as fractions.
    pub coverages: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
    /// Route links; all links in order when `None`.
    pub route: Option<Vec<usize>>,
    /// Evaluate at most this many windows (evenly strided) when set.
    pub max_windows: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            coverages: REPORT_INTERVALS.to_vec(),
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            route: None,
            max_windows: None,
        }
    }
}

/// Everything a model contributes for one window.
pub enum WindowForecast {
    /// Independent per-(horizon, link) laws.
    Laws(LinkDistributions),
    /// Joint draws laid out `n × K × L`, seconds.
    Draws(Vec<f64>),
}

/// Selected window indices of a split.
pub fn window_indices(t: &LinkSeriesTensor, max_windows: Option<usize>) -> Vec<usize> {
    let n = t.n_samples();
    match max_windows {
        Some(m) if m > 0 && m < n => (0..m).map(|j| j * n / m).collect(),
        _ => (0..n).collect(),
    }
}

/// Realized `K × L` seconds and mask of window `i`.
pub fn window_truth(data: &PreparedDataset, t: &LinkSeriesTensor, i: usize) -> (Vec<f64>, Vec<f64>) {
    let (k_len, l) = (t.grid.horizon_k, t.n_links());
    let y = t.sample_y(i);
    let m = t.sample_mask_y(i);
    let mut values = vec![0.0; k_len * l];
    for k in 0..k_len {
        for link in 0..l {
            values[k * l + link] = data.destandardize(y[k * l + link], link, t.y_step(i, k));
        }
    }
    (values, m.to_vec())
}

/// Mask of the cells visited by the realized walk (1 only if all were observed).
fn walk_observed(values: &[f64], mask: &[f64], k_len: usize, l: usize, plan: &RoutePlan) -> f64 {
    let mut clock = 0.0;
    for &link in &plan.links {
        let h = plan.horizon_at(clock, k_len);
        if mask[h * l + link] == 0.0 {
            return 0.0;
        }
        clock += values[h * l + link];
    }
    1.0
}

/// Runs `forecast(i) → (window forecast, K × L point seconds)` over a split.
pub fn route_forecasts<F>(
    data: &PreparedDataset,
    split: Split,
    model: ModelTag,
    opts: &EvalOptions,
    mut forecast: F,
) -> Result<ModelForecasts>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<(WindowForecast, Vec<f64>)>,
{
    let t = data.split(split);
    let (k_len, l) = (t.grid.horizon_k, t.n_links());
    let links = opts.route.clone().unwrap_or_else(|| (0..l).collect());
    if links.iter().any(|&x| x >= l) {
        return Err(Error::invalid(format!("route {links:?} exceeds {l} links")));
    }
    if opts.n_samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let freq = t.grid.frequency as f64;
    let plans: Vec<RoutePlan> = (0..k_len)
        .map(|h| RoutePlan::new(links.clone(), h, freq))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut horizons: Vec<HorizonForecasts> = (0..k_len)
        .map(|_| HorizonForecasts {
            intervals: opts
                .coverages
                .iter()
                .map(|&c| IntervalBounds { coverage: c, ..Default::default() })
                .collect(),
            ..Default::default()
        })
        .collect();

    for i in window_indices(t, opts.max_windows) {
        let (truth, mask) = window_truth(data, t, i);
        let (wf, point) = forecast(i, &mut rng)?;
        for (h, plan) in plans.iter().enumerate() {
            let set: RouteSampleSet = match &wf {
                WindowForecast::Laws(d) => sample_route_time(d, plan, opts.n_samples, model, &mut rng)?,
                WindowForecast::Draws(d) => route_from_joint_draws(d, k_len, l, plan, model)?,
            };
            let hf = &mut horizons[h];
            hf.truth.push(realized_route_time(&truth, k_len, l, plan));
            hf.mask.push(walk_observed(&truth, &mask, k_len, l, plan));
            hf.point.push(realized_route_time(&point, k_len, l, plan));
            for b in hf.intervals.iter_mut() {
                let (lo, hi) = empirical_interval(&set.samples, b.coverage)?;
                b.lower.push(lo);
                b.upper.push(hi);
            }
            for &link in &links {
                hf.link_truth.push(truth[h * l + link]);
                hf.link_point.push(point[h * l + link]);
                hf.link_mask.push(mask[h * l + link]);
            }
        }
    }
    Ok(ModelForecasts { model: model.name().to_string(), horizons })
}

fn dqr_laws(
    data: &PreparedDataset,
    t: &LinkSeriesTensor,
    i: usize,
    levels: &[f64],
    point: impl Fn(usize, usize) -> f64,
    quantiles: impl Fn(usize, usize) -> Vec<f64>,
) -> Result<(WindowForecast, Vec<f64>)> {
    let (k_len, l) = (t.grid.horizon_k, t.n_links());
    let mut laws = LinkDistributions::new(k_len, l);
    let mut out = vec![0.0; k_len * l];
    for k in 0..k_len {
        let step = t.y_step(i, k);
        for link in 0..l {
            let mean = data.destandardize(point(k, link), link, step);
            let q: Vec<f64> = quantiles(k, link).into_iter().map(|v| data.destandardize(v, link, step)).collect();
            let fit = fit_sigma(mean, &q, levels)?;
            out[k * l + link] = mean;
            laws.set(k, link, LinkLaw::Gaussian(fit))?;
        }
    }
    Ok((WindowForecast::Laws(laws), out))
}

/// DQR path: destandardize point and quantiles, fit one Gaussian per cell.
pub fn forecast_dqr(model: &DqrModel, data: &PreparedDataset, split: Split, opts: &EvalOptions) -> Result<ModelForecasts> {
    let t = data.split(split);
    let pred = model.predict_batch(&t.x)?;
    let levels = model.levels().as_slice().to_vec();
    route_forecasts(data, split, ModelTag::Dqr, opts, |i, _| {
        dqr_laws(data, t, i, &levels, |k, l| pred.point_at(i, k, l), |k, l| pred.quantiles_at(i, k, l))
    })
}

/// BRNN path: joint weight-sample draws per window, destandardized; the point
/// forecast is the per-cell draw mean.
pub fn forecast_brnn(
    model: &BrnnModel,
    data: &PreparedDataset,
    split: Split,
    opts: &EvalOptions,
    observation_noise: bool,
) -> Result<ModelForecasts> {
    let t = data.split(split);
    let selected = window_indices(t, opts.max_windows);
    let (x, _, _) = t.batch(&selected);
    let n = opts.n_samples;
    let draws = sample_predict_batch(model, &x, n, SampleOptions { observation_noise, seed: opts.seed })?;
    let windows = selected.len();
    let mut position = std::collections::HashMap::with_capacity(windows);
    for (j, &i) in selected.iter().enumerate() {
        position.insert(i, j);
    }
    route_forecasts(data, split, ModelTag::Brnn, opts, |i, _| {
        Ok(brnn_joint(data, t, i, &draws, position[&i], windows, n))
    })
}

/// Destandardized joint draws of window `i`, stored at position `j` of a
/// `n × windows × K × L` draw block, with their per-cell mean.
fn brnn_joint(data: &PreparedDataset, t: &LinkSeriesTensor, i: usize, draws: &[f64], j: usize, windows: usize, n: usize) -> (WindowForecast, Vec<f64>) {
    let (k_len, l) = (t.grid.horizon_k, t.n_links());
    let per = k_len * l;
    let mut joint = vec![0.0; n * per];
    let mut point = vec![0.0; per];
    for d in 0..n {
        let src = &draws[(d * windows + j) * per..(d * windows + j + 1) * per];
        for k in 0..k_len {
            let step = t.y_step(i, k);
            for link in 0..l {
                let v = data.destandardize(src[k * l + link], link, step);
                joint[d * per + k * l + link] = v;
                point[k * l + link] += v / n as f64;
            }
        }
    }
    (WindowForecast::Draws(joint), point)
}

/// EM fit on the observed training cells of the standardized grid.
pub fn fit_kalman(data: &PreparedDataset, config: EmConfig) -> Result<EmFit> {
    let series = MaskedSeries::from_grid(&data.grid_values, data.split_range(Split::Train))?;
    em_fit(&series, config, None)
}

fn advance_to(kf: &mut KalmanStepper<'_>, g: &crate::prep::StandardizedGrid, origin: usize) -> Result<()> {
    let l = g.n_links;
    if kf.steps() > origin {
        return Err(Error::invalid("windows must be visited in increasing time order"));
    }
    while kf.steps() < origin {
        let row = kf.steps() * l..(kf.steps() + 1) * l;
        kf.step(&g.values[row.clone()], &g.mask[row])?;
    }
    Ok(())
}

fn kalman_laws(
    params: &KalmanParams,
    kf: &KalmanStepper<'_>,
    data: &PreparedDataset,
    t: &LinkSeriesTensor,
    i: usize,
) -> Result<(WindowForecast, Vec<f64>)> {
    let (k_len, l) = (t.grid.horizon_k, t.n_links());
    let f = kf_predict_k(&kf.mean, &kf.cov, params, k_len)?;
    let mut laws = LinkDistributions::new(k_len, l);
    let mut point = vec![0.0; k_len * l];
    for k in 0..k_len {
        let step = t.y_step(i, k);
        for link in 0..l {
            let mean = data.destandardize(f.means[k][link], link, step);
            let sigma = (f.obs_sd(k, link) * data.scale(link, step)).max(f64::MIN_POSITIVE);
            point[k * l + link] = mean;
            laws.set(
                k,
                link,
                LinkLaw::Gaussian(GaussianLinkFit { mean, sigma, residual: 0.0, levels: Vec::new(), converged: true }),
            )?;
        }
    }
    Ok((WindowForecast::Laws(laws), point))
}

/// Kalman path: the filter runs causally over the grid from step 0 and
/// forecasts `K` steps from each window's last input step.
pub fn forecast_kalman(
    params: &KalmanParams,
    data: &PreparedDataset,
    split: Split,
    opts: &EvalOptions,
) -> Result<ModelForecasts> {
    let t = data.split(split);
    if params.n() != t.n_links() {
        return Err(Error::invalid(format!("Kalman state has {} links, data has {}", params.n(), t.n_links())));
    }
    let mut kf = KalmanStepper::new(params)?;
    route_forecasts(data, split, ModelTag::Kalman, opts, |i, _| {
        advance_to(&mut kf, &data.grid_values, t.y_step(i, 0))?;
        kalman_laws(params, &kf, data, t, i)
    })
}

/// Any trained model, as loaded from its checkpoint directory.
#[derive(Debug, Clone)]
pub enum ModelHandle {
    Dqr(DqrModel),
    Brnn(BrnnModel),
    Kalman(KalmanParams),
}

impl ModelHandle {
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        match crate::nn::checkpoint::peek_kind(dir)?.as_str() {
            crate::dqr::model::CHECKPOINT_KIND => Ok(Self::Dqr(DqrModel::load(dir)?)),
            crate::brnn::model::CHECKPOINT_KIND => Ok(Self::Brnn(BrnnModel::load(dir)?)),
            crate::kalman::CHECKPOINT_KIND => Ok(Self::Kalman(KalmanParams::load(dir)?)),
            other => Err(Error::invalid(format!("unknown checkpoint kind `{other}`"))),
        }
    }

    pub fn tag(&self) -> ModelTag {
        match self {
            Self::Dqr(_) => ModelTag::Dqr,
            Self::Brnn(_) => ModelTag::Brnn,
            Self::Kalman(_) => ModelTag::Kalman,
        }
    }

    pub fn n_links(&self) -> usize {
        match self {
            Self::Dqr(m) => m.n_links,
            Self::Brnn(m) => m.n_links,
            Self::Kalman(p) => p.n(),
        }
    }

    /// Route-level report on `split` through the model's own sampling path.
    pub fn forecast(&self, data: &PreparedDataset, split: Split, opts: &EvalOptions) -> Result<ModelForecasts> {
        if self.n_links() != data.n_links() {
            return Err(Error::invalid(format!(
                "model has {} links, prepared data has {}",
                self.n_links(),
                data.n_links()
            )));
        }
        match self {
            Self::Dqr(m) => forecast_dqr(m, data, split, opts),
            Self::Brnn(m) => forecast_brnn(m, data, split, opts, true),
            Self::Kalman(p) => forecast_kalman(p, data, split, opts),
        }
    }
}

/// Split and window index whose first forecast step is `step`.
pub fn locate_window(data: &PreparedDataset, step: usize) -> Option<(Split, usize)> {
    Split::ALL.into_iter().find_map(|s| {
        let t = data.split(s);
        let first = t.first_step + t.grid.window_u;
        (step >= first && step - first < t.n_samples()).then(|| (s, step - first))
    })
}

/// Single-window forecasts for ad-hoc queries (route aggregation, holding
/// decisions). Kalman windows should be requested in time order.
pub struct WindowForecaster<'a> {
    model: &'a ModelHandle,
    data: &'a PreparedDataset,
    kalman: Option<KalmanStepper<'a>>,
}

impl<'a> WindowForecaster<'a> {
    pub fn new(model: &'a ModelHandle, data: &'a PreparedDataset) -> Result<Self> {
        if model.n_links() != data.n_links() {
            return Err(Error::invalid(format!(
                "model has {} links, prepared data has {}",
                model.n_links(),
                data.n_links()
            )));
        }
        Ok(Self { model, data, kalman: None })
    }

    /// Forecast of window `i` of `split`; BRNN draws use `n` weight samples.
    pub fn window(&mut self, split: Split, i: usize, n: usize, seed: u64) -> Result<(WindowForecast, Vec<f64>)> {
        let data = self.data;
        let t = data.split(split);
        if i >= t.n_samples() {
            return Err(Error::invalid(format!("window {i} outside the {} windows of {}", t.n_samples(), split.name())));
        }
        match self.model {
            ModelHandle::Dqr(m) => {
                let (x, _, _) = t.batch(&[i]);
                let pred = m.predict_batch(&x)?;
                let levels = m.levels().as_slice().to_vec();
                dqr_laws(data, t, i, &levels, |k, l| pred.point_at(0, k, l), |k, l| pred.quantiles_at(0, k, l))
            }
            ModelHandle::Brnn(m) => {
                let (x, _, _) = t.batch(&[i]);
                let draws = sample_predict_batch(m, &x, n, SampleOptions { observation_noise: true, seed })?;
                Ok(brnn_joint(data, t, i, &draws, 0, 1, n))
            }
            ModelHandle::Kalman(p) => {
                let origin = t.y_step(i, 0);
                let restart = self.kalman.as_ref().is_none_or(|kf| kf.steps() > origin);
                if restart {
                    self.kalman = Some(KalmanStepper::new(p)?);
                }
                let kf = self.kalman.as_mut().expect("initialized above");
                advance_to(kf, &data.grid_values, origin)?;
                kalman_laws(p, kf, data, t, i)
            }
        }
    }

    /// Route travel-time samples of window `i` for `plan`.
    pub fn route_samples(
        &mut self,
        split: Split,
        i: usize,
        plan: &RoutePlan,
        n: usize,
        seed: u64,
    ) -> Result<RouteSampleSet> {
        let (wf, _) = self.window(split, i, n, seed)?;
        let t = self.data.split(split);
        let tag = self.model.tag();
        match wf {
            WindowForecast::Laws(d) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample_route_time(&d, plan, n, tag, &mut rng)
            }
            WindowForecast::Draws(d) => route_from_joint_draws(&d, t.grid.horizon_k, t.n_links(), plan, tag),
        }
    }
}

pub fn report(forecasts: &ModelForecasts, opts: &EvalOptions) -> Result<EvalReport> {
    build_report(forecasts, &opts.coverages)
}
