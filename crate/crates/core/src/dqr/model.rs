use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::levels::QuantileLevels;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Affine, ConvLstmCellParams, LstmState, NodeId, ParamStore, Tape, Tensor};

pub const CHECKPOINT_KIND: &str = "dqr";
const PREDICT_CHUNK: usize = 256;

/// Hyper-parameters of the quantile ConvLSTM and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqrConfig {
    pub lstm_state_size: usize,
    /// Odd width of the link-axis convolutions.
    pub conv_kernel_size: usize,
    pub dropout_probability: f64,
    pub levels: QuantileLevels,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for DqrConfig {
    fn default() -> Self {
        Self {
            lstm_state_size: 32,
            conv_kernel_size: 3,
            dropout_probability: 0.1,
            levels: QuantileLevels::default(),
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

impl DqrConfig {
    pub const STATE_SIZE_BOUNDS: (usize, usize) = (10, 128);
    pub const KERNEL_BOUNDS: (usize, usize) = (1, 20);
    pub const DROPOUT_BOUNDS: (f64, f64) = (0.0, 0.6);

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::STATE_SIZE_BOUNDS;
        if !(lo..=hi).contains(&self.lstm_state_size) {
            return Err(Error::invalid(format!("lstm_state_size {} outside [{lo}, {hi}]", self.lstm_state_size)));
        }
        let (lo, hi) = Self::KERNEL_BOUNDS;
        if !(lo..=hi).contains(&self.conv_kernel_size) || self.conv_kernel_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv_kernel_size {} must be odd and within [{lo}, {hi}]",
                self.conv_kernel_size
            )));
        }
        let (lo, hi) = Self::DROPOUT_BOUNDS;
        if !(lo..=hi).contains(&self.dropout_probability) {
            return Err(Error::invalid(format!("dropout_probability {} outside [{lo}, {hi}]", self.dropout_probability)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Point and quantile forecast for one window, in standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    /// `K × L`.
    pub point: Tensor,
    /// `J × K × L`, non-decreasing along `J`.
    pub quantiles: Tensor,
    pub levels: QuantileLevels,
}

/// Batched forecasts: `point` is `N × K × L`, `quantiles` is `N × J × K × L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DqrPredictions {
    pub point: Tensor,
    pub quantiles: Tensor,
    pub levels: QuantileLevels,
}

impl DqrPredictions {
    pub fn n_samples(&self) -> usize {
        self.point.shape()[0]
    }

    pub fn point_at(&self, i: usize, k: usize, link: usize) -> f64 {
        let s = self.point.shape();
        self.point.data()[(i * s[1] + k) * s[2] + link]
    }

    /// Sorted quantile vector of one cell.
    pub fn quantiles_at(&self, i: usize, k: usize, link: usize) -> Vec<f64> {
        let s = self.quantiles.shape();
        let (j, kk, l) = (s[1], s[2], s[3]);
        (0..j).map(|q| self.quantiles.data()[((i * j + q) * kk + k) * l + link]).collect()
    }

    pub fn get(&self, i: usize) -> QuantilePrediction {
        let ps = self.point.shape();
        let qs = self.quantiles.shape();
        let pn = ps[1] * ps[2];
        let qn = qs[1] * qs[2] * qs[3];
        QuantilePrediction {
            point: Tensor::new(ps[1..].to_vec(), self.point.data()[i * pn..(i + 1) * pn].to_vec()).unwrap(),
            quantiles: Tensor::new(qs[1..].to_vec(), self.quantiles.data()[i * qn..(i + 1) * qn].to_vec()).unwrap(),
            levels: self.levels.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Hyper {
    config: DqrConfig,
    n_links: usize,
    window_u: usize,
    horizon_k: usize,
}

/// ConvLSTM encoder–decoder with a shared per-position head emitting the
/// mean (channel 0) and `J` quantiles (channels `1..=J`).
#[derive(Debug, Clone)]
pub struct DqrModel {
    pub config: DqrConfig,
    pub n_links: usize,
    pub window_u: usize,
    pub horizon_k: usize,
    pub(crate) store: ParamStore,
    encoder: ConvLstmCellParams,
    decoder: ConvLstmCellParams,
    head: Affine,
}

impl DqrModel {
    pub fn new(config: DqrConfig, n_links: usize, window_u: usize, horizon_k: usize) -> Result<Self> {
        config.validate()?;
        if n_links == 0 || window_u == 0 || horizon_k == 0 {
            return Err(Error::invalid("model needs at least one link, input step and horizon"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let h = config.lstm_state_size;
        let width = config.conv_kernel_size;
        let encoder = ConvLstmCellParams::new(&mut store, "encoder", 1, h, width, &mut rng)?;
        let decoder = ConvLstmCellParams::new(&mut store, "decoder", h, h, width, &mut rng)?;
        let head = Affine::new(&mut store, "head", h, 1 + config.levels.len(), &mut rng);
        Ok(Self {
            config,
            n_links,
            window_u,
            horizon_k,
            store,
            encoder,
            decoder,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.config.levels
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.window_u || s[2] != self.n_links {
            return Err(Error::shape(
                "dqr.input",
                format!("expected [N, {}, {}], got {s:?}", self.window_u, self.n_links),
            ));
        }
        Ok(s[0])
    }

    /// Records the forward pass; returns one `B × L × (1+J)` node per horizon.
    /// Dropout is active only when `dropout_rng` is given.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor, mut dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Vec<NodeId>> {
        let b = self.check_input(x)?;
        let (u_len, l) = (self.window_u, self.n_links);
        let h = self.config.lstm_state_size;
        let p = self.config.dropout_probability;
        let mut state = LstmState::zeros(tape, &[b, l, h]);
        for u in 0..u_len {
            let step = Tensor::from_fn(&[b, l, 1], |i| {
                let (bi, li) = (i / l, i % l);
                x.data()[(bi * u_len + u) * l + li]
            });
            let xu = tape.input(step);
            state = self.encoder.step(tape, &self.store, xu, state)?;
        }
        let mut dec_in = state.h;
        if let Some(rng) = dropout_rng.as_deref_mut() {
            dec_in = tape.dropout(dec_in, p, rng);
        }
        let mut outputs = Vec::with_capacity(self.horizon_k);
        for _ in 0..self.horizon_k {
            state = self.decoder.step(tape, &self.store, dec_in, state)?;
            let mut hk = state.h;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                hk = tape.dropout(hk, p, rng);
            }
            outputs.push(self.head.forward(tape, &self.store, hk)?);
        }
        Ok(outputs)
    }

    /// Summed joint loss over horizons and the number of observed target cells.
    /// `y` and `mask` are `B × K × L`.
    pub fn loss(&self, tape: &mut Tape, outputs: &[NodeId], y: &Tensor, mask: &Tensor) -> Result<(NodeId, f64)> {
        let (k_len, l) = (self.horizon_k, self.n_links);
        let b = y.len() / (k_len * l);
        if y.shape() != [b, k_len, l] || mask.shape() != y.shape() || outputs.len() != k_len {
            return Err(Error::shape("dqr.loss", format!("targets {:?} / mask {:?}", y.shape(), mask.shape())));
        }
        let slice = |t: &Tensor, k: usize| Tensor::from_fn(&[b, l], |i| t.data()[((i / l) * k_len + k) * l + i % l]);
        let mut terms = Vec::with_capacity(k_len);
        for (k, &out) in outputs.iter().enumerate() {
            terms.push(tape.joint_loss("dqr.joint_loss", out, &slice(y, k), &slice(mask, k), self.config.levels.as_slice())?);
        }
        let observed = mask.data().iter().sum::<f64>();
        Ok((tape.sum(&terms), observed))
    }

    /// Forecasts every window of `x` (`N × U × L`) with dropout disabled and
    /// quantiles sorted per cell.
    pub fn predict_batch(&self, x: &Tensor) -> Result<DqrPredictions> {
        let n = self.check_input(x)?;
        let (k_len, l, j) = (self.horizon_k, self.n_links, self.config.levels.len());
        let heads = 1 + j;
        let per = self.window_u * l;
        let mut point = vec![0.0; n * k_len * l];
        let mut quantiles = vec![0.0; n * j * k_len * l];
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let chunk = Tensor::new(vec![end - start, self.window_u, l], x.data()[start * per..end * per].to_vec())?;
            let mut tape = Tape::new();
            let outs = self.forward(&mut tape, &chunk, None)?;
            for (k, &node) in outs.iter().enumerate() {
                let v = tape.value(node).data();
                for bi in 0..end - start {
                    let i = start + bi;
                    for li in 0..l {
                        let row = &v[(bi * l + li) * heads..(bi * l + li + 1) * heads];
                        point[(i * k_len + k) * l + li] = row[0];
                        let mut q = row[1..].to_vec();
                        q.sort_by(f64::total_cmp);
                        for (qi, val) in q.into_iter().enumerate() {
                            quantiles[((i * j + qi) * k_len + k) * l + li] = val;
                        }
                    }
                }
            }
            start = end;
        }
        let out = DqrPredictions {
            point: Tensor::new(vec![n, k_len, l], point)?,
            quantiles: Tensor::new(vec![n, j, k_len, l], quantiles)?,
            levels: self.config.levels.clone(),
        };
        if !out.point.all_finite() || !out.quantiles.all_finite() {
            return Err(Error::Numerical("DQR produced non-finite predictions".into()));
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let hyper = Hyper {
            config: self.config.clone(),
            n_links: self.n_links,
            window_u: self.window_u,
            horizon_k: self.horizon_k,
        };
        checkpoint::save(dir, CHECKPOINT_KIND, self.config.seed, serde_json::to_value(hyper)?, extra, &self.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, store) = checkpoint::load(dir)?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!("checkpoint kind `{}` is not `{CHECKPOINT_KIND}`", manifest.kind)));
        }
        let hyper: Hyper = serde_json::from_value(manifest.hyper_parameters)?;
        let mut model = Self::new(hyper.config, hyper.n_links, hyper.window_u, hyper.horizon_k)?;
        model.store.copy_from(&store)?;
        Ok(model)
    }
}

/// Convenience wrapper for a single `U × L` window.
pub fn predict_dqr(model: &DqrModel, x: &Tensor) -> Result<QuantilePrediction> {
    if x.shape() != [model.window_u, model.n_links] {
        return Err(Error::shape(
            "dqr.input",
            format!("expected [{}, {}], got {:?}", model.window_u, model.n_links, x.shape()),
        ));
    }
    let batched = Tensor::new(vec![1, model.window_u, model.n_links], x.data().to_vec())?;
    Ok(model.predict_batch(&batched)?.get(0))
}
