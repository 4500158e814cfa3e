//! Linear-Gaussian state-space baseline with one state per link and an
//! identity observation model, fitted by EM with RTS smoothing.
//!
//! The initial state law `N(mu0, v0)` is the prior of the first observed
//! step, so step 0 is an update without a preceding prediction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{checkpoint, ParamStore, Tensor};
use crate::prep::StandardizedGrid;

pub const CHECKPOINT_KIND: &str = "kalman";
/// Smallest eigenvalue kept in any covariance matrix.
pub const EIGEN_FLOOR: f64 = 1e-8;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanParams {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub v0: DMatrix<f64>,
}

impl KalmanParams {
    /// `A = Q = R = V0 = I`, `mu0 = 0`.
    pub fn identity(n: usize) -> Self {
        Self {
            a: DMatrix::identity(n, n),
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(n, n),
            mu0: DVector::zeros(n),
            v0: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        for (name, m) in [("A", &self.a), ("Q", &self.q), ("R", &self.r), ("V0", &self.v0)] {
            if m.shape() != (n, n) {
                return Err(Error::shape("kalman", format!("{name} is {:?}, expected ({n}, {n})", m.shape())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    fn to_store(&self) -> ParamStore {
        let n = self.n();
        let mut store = ParamStore::new();
        let mat = |m: &DMatrix<f64>| Tensor::from_fn(&[n, n], |i| m[(i / n, i % n)]);
        store.add("A", mat(&self.a));
        store.add("Q", mat(&self.q));
        store.add("R", mat(&self.r));
        store.add("mu0", Tensor::from_fn(&[n], |i| self.mu0[i]));
        store.add("V0", mat(&self.v0));
        store
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let hyper = serde_json::json!({ "n_links": self.n() });
        checkpoint::save(dir, CHECKPOINT_KIND, 0, hyper, extra, &self.to_store())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, store) = checkpoint::load(dir)?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!("checkpoint kind `{}` is not `{CHECKPOINT_KIND}`", manifest.kind)));
        }
        let get = |name: &str| {
            store
                .find(name)
                .map(|id| store.get(id).clone())
                .ok_or_else(|| Error::invalid(format!("kalman checkpoint lacks `{name}`")))
        };
        let mu0 = get("mu0")?;
        let n = mu0.len();
        let mat = |t: Tensor| -> Result<DMatrix<f64>> {
            if t.shape() != [n, n] {
                return Err(Error::shape("kalman", format!("matrix shape {:?}, expected [{n}, {n}]", t.shape())));
            }
            Ok(DMatrix::from_row_slice(n, n, t.data()))
        };
        let params = Self {
            a: mat(get("A")?)?,
            q: mat(get("Q")?)?,
            r: mat(get("R")?)?,
            mu0: DVector::from_column_slice(mu0.data()),
            v0: mat(get("V0")?)?,
        };
        params.validate()?;
        Ok(params)
    }
}

/// `T × N` observations (row-major) with a 0/1 mask; masked entries are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSeries {
    pub n_links: usize,
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

impl MaskedSeries {
    pub fn new(n_links: usize, values: Vec<f64>, mask: Vec<f64>) -> Result<Self> {
        if n_links == 0 || values.len() != mask.len() || values.len() % n_links != 0 {
            return Err(Error::shape(
                "kalman.series",
                format!("{} values, {} mask entries, {n_links} links", values.len(), mask.len()),
            ));
        }
        Ok(Self { n_links, values, mask })
    }

    /// Standardized grid values over `steps`, imputed cells masked out.
    pub fn from_grid(grid: &StandardizedGrid, steps: std::ops::Range<usize>) -> Result<Self> {
        let n = grid.n_links;
        if steps.end > grid.n_steps || steps.is_empty() {
            return Err(Error::invalid(format!("step range {steps:?} outside 0..{}", grid.n_steps)));
        }
        let cells = steps.start * n..steps.end * n;
        Self::new(n, grid.values[cells.clone()].to_vec(), grid.mask[cells].to_vec())
    }

    /// Fully observed series.
    pub fn dense(n_links: usize, values: Vec<f64>) -> Result<Self> {
        let mask = vec![1.0; values.len()];
        Self::new(n_links, values, mask)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_links
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn observed(&self, t: usize) -> Vec<usize> {
        let n = self.n_links;
        (0..n).filter(|&i| self.mask[t * n + i] != 0.0).collect()
    }

    fn steps_observed(&self) -> usize {
        (0..self.len()).filter(|&t| !self.observed(t).is_empty()).count()
    }
}

/// Symmetrizes `m` and lifts eigenvalues below [`EIGEN_FLOOR`]. Returns
/// whether the floor had to be applied.
pub fn symmetrize_and_floor(m: &mut DMatrix<f64>) -> bool {
    let sym = (&*m + m.transpose()) * 0.5;
    *m = sym;
    let n = m.nrows();
    let shifted = &*m - DMatrix::identity(n, n) * EIGEN_FLOOR;
    if shifted.cholesky().is_some() {
        return false;
    }
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    *m = (&rebuilt + rebuilt.transpose()) * 0.5;
    true
}

fn floor_logged(m: &mut DMatrix<f64>, what: &str, t: usize) -> usize {
    if symmetrize_and_floor(m) {
        log::warn!("kalman: {what} at step {t} was not PSD; eigenvalues floored at {EIGEN_FLOOR}");
        1
    } else {
        0
    }
}

/// Output of [`kf_filter`]; index `t` refers to observation step `t`.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// One-step predictive (prior) moments before each update.
    pub pred_means: Vec<DVector<f64>>,
    pub pred_covs: Vec<DMatrix<f64>>,
    pub log_likelihood: f64,
    /// Standardized innovations of every observed entry (Cholesky-whitened).
    pub innovations: Vec<f64>,
    pub floor_incidents: usize,
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// One-step-at-a-time filter state.
#[derive(Debug, Clone)]
pub struct KalmanStepper<'a> {
    params: &'a KalmanParams,
    at: DMatrix<f64>,
    steps: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub pred_mean: DVector<f64>,
    pub pred_cov: DMatrix<f64>,
    pub log_likelihood: f64,
    pub floor_incidents: usize,
}

impl<'a> KalmanStepper<'a> {
    pub fn new(params: &'a KalmanParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            at: params.a.transpose(),
            steps: 0,
            mean: params.mu0.clone(),
            cov: params.v0.clone(),
            pred_mean: params.mu0.clone(),
            pred_cov: params.v0.clone(),
            log_likelihood: 0.0,
            floor_incidents: 0,
        })
    }

    /// Number of steps consumed so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Predicts to the next step and updates on the entries of `y` whose
    /// `mask` is non-zero. Returns the whitened innovations.
    pub fn step(&mut self, y: &[f64], mask: &[f64]) -> Result<Vec<f64>> {
        let p = self.params;
        let n = p.n();
        if y.len() != n || mask.len() != n {
            return Err(Error::shape("kalman.filter", format!("{} values for {n} links", y.len())));
        }
        let t = self.steps;
        if t == 0 {
            self.pred_mean = p.mu0.clone();
            self.pred_cov = p.v0.clone();
        } else {
            self.pred_mean = &p.a * &self.mean;
            self.pred_cov = &p.a * &self.cov * &self.at + &p.q;
        }
        self.floor_incidents += floor_logged(&mut self.pred_cov, "predicted covariance", t);
        self.steps += 1;
        let obs: Vec<usize> = (0..n).filter(|&i| mask[i] != 0.0).collect();
        if obs.is_empty() {
            self.mean = self.pred_mean.clone();
            self.cov = self.pred_cov.clone();
            return Ok(Vec::new());
        }
        let d = obs.len();
        let innov = DVector::from_iterator(d, obs.iter().map(|&i| y[i] - self.pred_mean[i]));
        let s = select(&self.pred_cov, &obs, &obs) + select(&p.r, &obs, &obs);
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("innovation covariance at step {t} is not positive definite")))?;
        let whitened = chol.l().solve_lower_triangular(&innov).expect("triangular factor is invertible");
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        self.log_likelihood += -0.5 * (d as f64 * LN_2PI + log_det + whitened.norm_squared());
        let all: Vec<usize> = (0..n).collect();
        let p_cols = select(&self.pred_cov, &all, &obs);
        let gain = chol.solve(&p_cols.transpose()).transpose();
        self.mean = &self.pred_mean + &gain * innov;
        self.cov = &self.pred_cov - &gain * p_cols.transpose();
        self.floor_incidents += floor_logged(&mut self.cov, "filtered covariance", t);
        Ok(whitened.iter().copied().collect())
    }
}

/// Kalman predict/update recursions with masked rows omitted from each update.
pub fn kf_filter(params: &KalmanParams, series: &MaskedSeries) -> Result<FilterOutput> {
    let n = params.n();
    if series.n_links != n {
        return Err(Error::shape("kalman.filter", format!("{} links vs state dimension {n}", series.n_links)));
    }
    let steps = series.len();
    let mut out = FilterOutput {
        means: Vec::with_capacity(steps),
        covs: Vec::with_capacity(steps),
        pred_means: Vec::with_capacity(steps),
        pred_covs: Vec::with_capacity(steps),
        log_likelihood: 0.0,
        innovations: Vec::new(),
        floor_incidents: 0,
    };
    let mut kf = KalmanStepper::new(params)?;
    for t in 0..steps {
        let row = t * n..(t + 1) * n;
        out.innovations.extend(kf.step(&series.values[row.clone()], &series.mask[row])?);
        out.pred_means.push(kf.pred_mean.clone());
        out.pred_covs.push(kf.pred_cov.clone());
        out.means.push(kf.mean.clone());
        out.covs.push(kf.cov.clone());
    }
    out.log_likelihood = kf.log_likelihood;
    out.floor_incidents = kf.floor_incidents;
    if !out.log_likelihood.is_finite() {
        return Err(Error::Numerical("non-finite Kalman log-likelihood".into()));
    }
    Ok(out)
}

/// Predictive moments `h = 1..=k` steps after a filtered state.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanForecast {
    pub means: Vec<DVector<f64>>,
    /// State covariance per horizon.
    pub state_covs: Vec<DMatrix<f64>>,
    /// Observation covariance per horizon (`state + R`).
    pub obs_covs: Vec<DMatrix<f64>>,
}

impl KalmanForecast {
    /// Per-link observation standard deviation at horizon index `h` (0-based).
    pub fn obs_sd(&self, h: usize, link: usize) -> f64 {
        self.obs_covs[h][(link, link)].max(0.0).sqrt()
    }
}

pub fn kf_predict_k(mean: &DVector<f64>, cov: &DMatrix<f64>, params: &KalmanParams, k: usize) -> Result<KalmanForecast> {
    if k == 0 {
        return Err(Error::invalid("forecast horizon k must be at least 1"));
    }
    params.validate()?;
    let at = params.a.transpose();
    let mut m = mean.clone();
    let mut p = cov.clone();
    let mut out = KalmanForecast { means: Vec::new(), state_covs: Vec::new(), obs_covs: Vec::new() };
    for _ in 0..k {
        m = &params.a * &m;
        p = &params.a * &p * &at + &params.q;
        symmetrize_and_floor(&mut p);
        out.obs_covs.push(&p + &params.r);
        out.means.push(m.clone());
        out.state_covs.push(p.clone());
    }
    Ok(out)
}

/// RTS smoother output: smoothed moments and lag-one cross-covariances
/// `Cov(x_{t+1}, x_t | all data)` for `t = 0..T-1`.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub lag_one: Vec<DMatrix<f64>>,
}

pub fn rts_smooth(params: &KalmanParams, filtered: &FilterOutput) -> Result<SmootherOutput> {
    let steps = filtered.means.len();
    if steps == 0 {
        return Err(Error::invalid("cannot smooth an empty series"));
    }
    let mut means = filtered.means.clone();
    let mut covs = filtered.covs.clone();
    let mut lag_one = vec![DMatrix::zeros(params.n(), params.n()); steps - 1];
    for t in (0..steps - 1).rev() {
        let p_next = &filtered.pred_covs[t + 1];
        let chol = p_next
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("predicted covariance at step {} is singular", t + 1)))?;
        let j = chol.solve(&(&params.a * &filtered.covs[t])).transpose();
        means[t] = &filtered.means[t] + &j * (&means[t + 1] - &filtered.pred_means[t + 1]);
        let mut c = &filtered.covs[t] + &j * (&covs[t + 1] - p_next) * j.transpose();
        symmetrize_and_floor(&mut c);
        lag_one[t] = &covs[t + 1] * j.transpose();
        covs[t] = c;
    }
    Ok(SmootherOutput { means, covs, lag_one })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub n_iter: usize,
    /// Stop once the log-likelihood gain falls below this value.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { n_iter: 50, tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: KalmanParams,
    /// Log-likelihood of the initial parameters followed by one entry per iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn m_step(old: &KalmanParams, series: &MaskedSeries, sm: &SmootherOutput) -> KalmanParams {
    let n = old.n();
    let steps = sm.means.len();
    let second = |t: usize| &sm.covs[t] + &sm.means[t] * sm.means[t].transpose();
    let mut s00 = DMatrix::zeros(n, n);
    let mut s11 = DMatrix::zeros(n, n);
    let mut s10 = DMatrix::zeros(n, n);
    for t in 1..steps {
        s11 += second(t);
        s00 += second(t - 1);
        s10 += &sm.lag_one[t - 1] + &sm.means[t] * sm.means[t - 1].transpose();
    }
    let (a, mut q) = if steps > 1 {
        let a = match s00.clone().cholesky() {
            Some(c) => c.solve(&s10.transpose()).transpose(),
            None => old.a.clone(),
        };
        let q = (&s11 - &a * s10.transpose()) / (steps - 1) as f64;
        (a, q)
    } else {
        (old.a.clone(), old.q.clone())
    };
    symmetrize_and_floor(&mut q);

    let mut r = DMatrix::zeros(n, n);
    for t in 0..steps {
        let obs = series.observed(t);
        if obs.is_empty() {
            r += &old.r;
            continue;
        }
        let miss: Vec<usize> = (0..n).filter(|i| !obs.contains(i)).collect();
        let e = DVector::from_iterator(obs.len(), obs.iter().map(|&i| series.values[t * n + i] - sm.means[t][i]));
        let e_oo = &e * e.transpose() + select(&sm.covs[t], &obs, &obs);
        let mut block = DMatrix::zeros(n, n);
        for (a_i, &i) in obs.iter().enumerate() {
            for (b_i, &j) in obs.iter().enumerate() {
                block[(i, j)] = e_oo[(a_i, b_i)];
            }
        }
        if !miss.is_empty() {
            let r_oo = select(&old.r, &obs, &obs);
            let r_mo = select(&old.r, &miss, &obs);
            let r_mm = select(&old.r, &miss, &miss);
            let g = match r_oo.clone().cholesky() {
                Some(c) => c.solve(&r_mo.transpose()).transpose(),
                None => DMatrix::zeros(miss.len(), obs.len()),
            };
            let e_mo = &g * &e_oo;
            let e_mm = &g * &e_oo * g.transpose() + (&r_mm - &g * r_mo.transpose());
            for (a_i, &i) in miss.iter().enumerate() {
                for (b_i, &j) in obs.iter().enumerate() {
                    block[(i, j)] = e_mo[(a_i, b_i)];
                    block[(j, i)] = e_mo[(a_i, b_i)];
                }
                for (b_i, &j) in miss.iter().enumerate() {
                    block[(i, j)] = e_mm[(a_i, b_i)];
                }
            }
        }
        r += block;
    }
    r /= steps as f64;
    symmetrize_and_floor(&mut r);

    let mut v0 = sm.covs[0].clone();
    symmetrize_and_floor(&mut v0);
    KalmanParams { a, q, r, mu0: sm.means[0].clone(), v0 }
}

/// Expectation-maximization over `A`, `Q`, `R`, `mu0` and `V0` starting
/// from `init` (identity parameters when `None`).
pub fn em_fit(series: &MaskedSeries, config: EmConfig, init: Option<KalmanParams>) -> Result<EmFit> {
    let n = series.n_links;
    if series.steps_observed() < 2 * n {
        return Err(Error::invalid(format!(
            "EM needs at least {} observed steps, got {}",
            2 * n,
            series.steps_observed()
        )));
    }
    let mut params = init.unwrap_or_else(|| KalmanParams::identity(n));
    let mut filtered = kf_filter(&params, series)?;
    let mut trace = vec![filtered.log_likelihood];
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.n_iter {
        let smoothed = rts_smooth(&params, &filtered)?;
        let next = m_step(&params, series, &smoothed);
        let next_filtered = kf_filter(&next, series)?;
        let gain = next_filtered.log_likelihood - filtered.log_likelihood;
        params = next;
        filtered = next_filtered;
        trace.push(filtered.log_likelihood);
        iterations = it + 1;
        log::debug!("kalman EM iteration {iterations}: log-likelihood {:.6}", filtered.log_likelihood);
        if gain.abs() < config.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit { params, log_likelihood: trace, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, q: f64, r: f64) -> KalmanParams {
        KalmanParams {
            a: DMatrix::from_element(1, 1, a),
            q: DMatrix::from_element(1, 1, q),
            r: DMatrix::from_element(1, 1, r),
            mu0: DVector::zeros(1),
            v0: DMatrix::identity(1, 1),
        }
    }

    #[test]
    fn scalar_step_matches_closed_form() {
        let series = MaskedSeries::dense(1, vec![2.0]).unwrap();
        let out = kf_filter(&scalar(1.0, 1.0, 1.0), &series).unwrap();
        assert!((out.means[0][0] - 1.0).abs() < 1e-12);
        assert!((out.covs[0][(0, 0)] - 0.5).abs() < 1e-12);
        let expected = -0.5 * (LN_2PI + 2f64.ln() + 4.0 / 2.0);
        assert!((out.log_likelihood - expected).abs() < 1e-12);
    }

    #[test]
    fn masked_step_is_pure_prediction() {
        let series = MaskedSeries::new(1, vec![2.0, 9.0], vec![1.0, 0.0]).unwrap();
        let out = kf_filter(&scalar(1.0, 0.3, 1.0), &series).unwrap();
        assert!((out.means[1][0] - out.means[0][0]).abs() < 1e-12);
        assert!((out.covs[1][(0, 0)] - out.covs[0][(0, 0)] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn floor_repairs_indefinite_matrix() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(symmetrize_and_floor(&mut m));
        let eig = m.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= EIGEN_FLOOR * 0.999));
        let mut ok = DMatrix::identity(2, 2);
        assert!(!symmetrize_and_floor(&mut ok));
    }

    #[test]
    fn em_with_zero_iterations_keeps_init() {
        let series = MaskedSeries::dense(1, (0..10).map(|i| i as f64).collect()).unwrap();
        let init = scalar(0.5, 2.0, 3.0);
        let fit = em_fit(&series, EmConfig { n_iter: 0, tol: 0.0 }, Some(init.clone())).unwrap();
        assert_eq!(fit.params, init);
        assert_eq!(fit.log_likelihood.len(), 1);
    }

    #[test]
    fn params_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = KalmanParams::identity(3);
        p.a[(0, 2)] = 0.25;
        p.mu0[1] = -1.5;
        p.save(dir.path(), serde_json::Value::Null).unwrap();
        assert_eq!(KalmanParams::load(dir.path()).unwrap(), p);
    }
}
