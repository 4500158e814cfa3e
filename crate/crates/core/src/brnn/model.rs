use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::prior::MixturePrior;
use crate::error::{Error, Result};
use crate::nn::activation::softplus;
use crate::nn::layers::{lstm_step, LstmWeights};
use crate::nn::{checkpoint, LstmState, NodeId, ParamId, ParamStore, Tape, Tensor};

pub const CHECKPOINT_KIND: &str = "brnn";
const MU_INIT_STD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BrnnConfig {
    pub lstm_state_size: usize,
    pub prior: MixturePrior,
    /// Minibatch size `N_B`; the batch count `B` follows from the data size.
    pub batch_size: usize,
    /// Weight samples per minibatch step `N_MC`.
    pub n_mc: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Initial `rho` of every weight; `sigma = softplus(rho)`.
    pub init_rho: f64,
    /// Weight draws used for the validation predictive log-likelihood.
    pub val_draws: usize,
}

impl Default for BrnnConfig {
    fn default() -> Self {
        Self {
            lstm_state_size: 32,
            prior: MixturePrior::default(),
            batch_size: 64,
            n_mc: 1,
            learning_rate: 1e-3,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            init_rho: -5.0,
            val_draws: 5,
        }
    }
}

impl BrnnConfig {
    pub const STATE_SIZE_BOUNDS: (usize, usize) = (10, 50);
    pub const PI_BOUNDS: (f64, f64) = (0.7, 1.0);
    pub const SIGMA1_BOUNDS: (f64, f64) = (1.0, 3.0);
    pub const SIGMA2_BOUNDS: (f64, f64) = (0.001, 1.0);

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = Self::STATE_SIZE_BOUNDS;
        if !(lo..=hi).contains(&self.lstm_state_size) {
            return Err(Error::invalid(format!("lstm_state_size {} outside [{lo}, {hi}]", self.lstm_state_size)));
        }
        self.prior.validate()?;
        for (name, v, (lo, hi)) in [
            ("pi", self.prior.pi, Self::PI_BOUNDS),
            ("sigma1", self.prior.sigma1, Self::SIGMA1_BOUNDS),
            ("sigma2", self.prior.sigma2, Self::SIGMA2_BOUNDS),
        ] {
            if !(lo..=hi).contains(&v) {
                return Err(Error::invalid(format!("prior {name} {v} outside [{lo}, {hi}]")));
            }
        }
        if self.n_mc == 0 || self.batch_size == 0 || self.val_draws == 0 {
            return Err(Error::invalid("n_mc, batch_size and val_draws must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !self.init_rho.is_finite() {
            return Err(Error::invalid("learning rate and init_rho must be finite (lr ≥ 0)"));
        }
        Ok(())
    }
}

/// One logical weight tensor with its variational pair.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParam {
    pub name: String,
    pub shape: Vec<usize>,
    pub mu: ParamId,
    pub rho: ParamId,
}

/// Gaussian posterior `N(mu, softplus(rho)²)` over every network weight.
#[derive(Debug, Clone)]
pub struct VariationalWeights {
    pub store: ParamStore,
    pub params: Vec<VariationalParam>,
}

impl VariationalWeights {
    fn new() -> Self {
        Self { store: ParamStore::new(), params: Vec::new() }
    }

    fn add(&mut self, name: &str, mu: Tensor, rho: f64) -> usize {
        let shape = mu.shape().to_vec();
        let rho_t = Tensor::filled(&shape, rho);
        let mu = self.store.add(format!("{name}.mu"), mu);
        let rho = self.store.add(format!("{name}.rho"), rho_t);
        self.params.push(VariationalParam { name: name.to_string(), shape, mu, rho });
        self.params.len() - 1
    }

    pub fn n_weights(&self) -> usize {
        self.params.iter().map(|p| self.store.get(p.mu).len()).sum()
    }

    /// All posterior standard deviations, flattened.
    pub fn sigmas(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| self.store.get(p.rho).data().iter().map(|&r| softplus(r)))
            .collect()
    }

    /// Standard-normal noise for every weight, in parameter order.
    pub fn draw_eps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| (0..self.store.get(p.mu).len()).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }
}

/// Concrete weights `w = mu + softplus(rho)·eps` with fresh noise per call.
pub fn sample_weights<R: Rng + ?Sized>(vw: &VariationalWeights, rng: &mut R) -> Vec<Tensor> {
    vw.params
        .iter()
        .map(|p| {
            let (mu, rho) = (vw.store.get(p.mu), vw.store.get(p.rho));
            Tensor::from_fn(mu.shape(), |i| {
                let e: f64 = StandardNormal.sample(rng);
                mu.data()[i] + softplus(rho.data()[i]) * e
            })
        })
        .collect()
}

/// Nodes produced by one sampled forward pass.
#[derive(Debug, Clone)]
pub struct SampledForward {
    /// One `B × L` node per horizon.
    pub outputs: Vec<NodeId>,
    /// Scalar node holding the sampled observation log-variance.
    pub log_var: NodeId,
    pub log_q: NodeId,
    pub log_prior: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    enc: [usize; 3],
    dec: [usize; 3],
    head_w: usize,
    head_b: usize,
    log_var: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Hyper {
    config: BrnnConfig,
    n_links: usize,
    window_u: usize,
    horizon_k: usize,
}

/// Dense LSTM encoder–decoder with variational weights. The decoder is fed
/// the final encoder state at every horizon and shares its recurrent state.
#[derive(Debug, Clone)]
pub struct BrnnModel {
    pub config: BrnnConfig,
    pub n_links: usize,
    pub window_u: usize,
    pub horizon_k: usize,
    pub weights: VariationalWeights,
    slots: Slots,
}

impl BrnnModel {
    pub fn new(config: BrnnConfig, n_links: usize, window_u: usize, horizon_k: usize) -> Result<Self> {
        config.validate()?;
        if n_links == 0 || window_u == 0 || horizon_k == 0 {
            return Err(Error::invalid("model needs at least one link, input step and horizon"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let init = Normal::new(0.0, MU_INIT_STD).expect("valid init scale");
        let mut normal = |shape: &[usize]| Tensor::from_fn(shape, |_| init.sample(&mut rng));
        let h = config.lstm_state_size;
        let rho = config.init_rho;
        let mut vw = VariationalWeights::new();
        let forget_bias = crate::nn::layers::lstm_bias_init(h);
        let enc = [
            vw.add("encoder.w_ih", normal(&[n_links, 4 * h]), rho),
            vw.add("encoder.w_hh", normal(&[h, 4 * h]), rho),
            vw.add("encoder.bias", forget_bias.clone(), rho),
        ];
        let dec = [
            vw.add("decoder.w_ih", normal(&[h, 4 * h]), rho),
            vw.add("decoder.w_hh", normal(&[h, 4 * h]), rho),
            vw.add("decoder.bias", forget_bias, rho),
        ];
        let head_w = vw.add("head.w", normal(&[h, n_links]), rho);
        let head_b = vw.add("head.b", Tensor::zeros(&[n_links]), rho);
        let log_var = vw.add("noise.log_var", Tensor::zeros(&[1]), rho);
        Ok(Self {
            config,
            n_links,
            window_u,
            horizon_k,
            weights: vw,
            slots: Slots { enc, dec, head_w, head_b, log_var },
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.weights.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.weights.store
    }

    /// Number of parameter tensors shaped like a convolution kernel (always 0).
    pub fn conv_layer_count(&self) -> usize {
        self.weights.params.iter().filter(|p| p.shape.len() == 3).count()
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.window_u || s[2] != self.n_links {
            return Err(Error::shape(
                "brnn.input",
                format!("expected [N, {}, {}], got {s:?}", self.window_u, self.n_links),
            ));
        }
        Ok(s[0])
    }

    /// Samples every weight through the reparameterization (given noise) and
    /// runs the network on `x` (`B × U × L`).
    pub fn forward_sampled(&self, tape: &mut Tape, x: &Tensor, eps: &[Vec<f64>]) -> Result<SampledForward> {
        let b = self.check_input(x)?;
        if eps.len() != self.weights.params.len() {
            return Err(Error::shape("brnn.eps", "one noise vector per variational tensor"));
        }
        let store = &self.weights.store;
        let mut w = Vec::with_capacity(eps.len());
        let mut log_q_terms = Vec::with_capacity(eps.len());
        let mut log_p_terms = Vec::with_capacity(eps.len());
        for (p, e) in self.weights.params.iter().zip(eps) {
            let mu = tape.param(store, p.mu);
            let rho = tape.param(store, p.rho);
            let node = tape.reparam(&p.name, mu, rho, e.clone())?;
            log_q_terms.push(tape.log_q(&p.name, rho, e.clone())?);
            log_p_terms.push(tape.log_prior(node, self.config.prior));
            w.push(node);
        }
        let log_q = tape.sum(&log_q_terms);
        let log_prior = tape.sum(&log_p_terms);
        let s = self.slots;
        let enc = LstmWeights { w_ih: w[s.enc[0]], w_hh: w[s.enc[1]], bias: w[s.enc[2]] };
        let dec = LstmWeights { w_ih: w[s.dec[0]], w_hh: w[s.dec[1]], bias: w[s.dec[2]] };
        let (u_len, l, h) = (self.window_u, self.n_links, self.config.lstm_state_size);

        let mut state = LstmState::zeros(tape, &[b, h]);
        for u in 0..u_len {
            let xu = Tensor::from_fn(&[b, l], |i| x.data()[((i / l) * u_len + u) * l + i % l]);
            let xu = tape.input(xu);
            state = lstm_step(tape, "brnn.encoder", &enc, h, xu, state)?;
        }
        let dec_in = state.h;
        let mut outputs = Vec::with_capacity(self.horizon_k);
        for _ in 0..self.horizon_k {
            state = lstm_step(tape, "brnn.decoder", &dec, h, dec_in, state)?;
            outputs.push(tape.affine("brnn.head", state.h, w[s.head_w], Some(w[s.head_b]))?);
        }
        Ok(SampledForward { outputs, log_var: w[s.log_var], log_q, log_prior })
    }

    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let hyper = Hyper {
            config: self.config.clone(),
            n_links: self.n_links,
            window_u: self.window_u,
            horizon_k: self.horizon_k,
        };
        checkpoint::save(dir, CHECKPOINT_KIND, self.config.seed, serde_json::to_value(hyper)?, extra, &self.weights.store)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, store) = checkpoint::load(dir)?;
        if manifest.kind != CHECKPOINT_KIND {
            return Err(Error::invalid(format!("checkpoint kind `{}` is not `{CHECKPOINT_KIND}`", manifest.kind)));
        }
        let hyper: Hyper = serde_json::from_value(manifest.hyper_parameters)?;
        let mut model = Self::new(hyper.config, hyper.n_links, hyper.window_u, hyper.horizon_k)?;
        model.weights.store.copy_from(&store)?;
        Ok(model)
    }
}

/// Per-term breakdown of a minibatch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `mean_s[(1/B)(log q − log P) + NLL]`.
    pub loss: f64,
    /// `mean_s[(log q − log P)]` before the `1/B` weighting.
    pub kl_estimate: f64,
    pub nll: f64,
    pub observed_cells: f64,
}

fn horizon_slice(t: &Tensor, k: usize, k_len: usize, l: usize) -> Tensor {
    let b = t.len() / (k_len * l);
    Tensor::from_fn(&[b, l], |i| t.data()[((i / l) * k_len + k) * l + i % l])
}

/// Records the minibatch loss on `tape` for pre-drawn noise (one entry per
/// Monte Carlo sample). Returns the scalar loss node.
pub fn elbo_on_tape(
    tape: &mut Tape,
    model: &BrnnModel,
    x: &Tensor,
    y: &Tensor,
    mask: &Tensor,
    n_batches: usize,
    eps: &[Vec<Vec<f64>>],
) -> Result<(NodeId, ElboTerms)> {
    if n_batches == 0 || eps.is_empty() {
        return Err(Error::invalid("need at least one batch and one Monte Carlo sample"));
    }
    let (k_len, l) = (model.horizon_k, model.n_links);
    if y.shape() != [x.shape()[0], k_len, l] || mask.shape() != y.shape() {
        return Err(Error::shape("brnn.loss", format!("targets {:?} / mask {:?}", y.shape(), mask.shape())));
    }
    let kl_weight = 1.0 / n_batches as f64;
    let mc_weight = 1.0 / eps.len() as f64;
    let mut terms = Vec::new();
    let (mut kl, mut nll) = (0.0, 0.0);
    for e in eps {
        let fwd = model.forward_sampled(tape, x, e)?;
        let mut sample_terms = Vec::with_capacity(k_len + 2);
        for (k, &out) in fwd.outputs.iter().enumerate() {
            let t = tape.gaussian_nll(
                "brnn.likelihood",
                out,
                fwd.log_var,
                &horizon_slice(y, k, k_len, l),
                &horizon_slice(mask, k, k_len, l),
            )?;
            nll += tape.value(t).data()[0] * mc_weight;
            sample_terms.push(t);
        }
        let neg_prior = tape.scale(fwd.log_prior, -1.0);
        kl += (tape.value(fwd.log_q).data()[0] - tape.value(fwd.log_prior).data()[0]) * mc_weight;
        let kl_term = tape.sum(&[fwd.log_q, neg_prior]);
        sample_terms.push(tape.scale(kl_term, kl_weight));
        let total = tape.sum(&sample_terms);
        terms.push(tape.scale(total, mc_weight));
    }
    let loss = tape.sum(&terms);
    let value = tape.value(loss).data()[0];
    Ok((
        loss,
        ElboTerms { loss: value, kl_estimate: kl, nll, observed_cells: mask.data().iter().sum() },
    ))
}

/// Value of the minibatch loss with `n_mc` fresh weight samples.
#[allow(clippy::too_many_arguments)]
pub fn elbo_minibatch_loss<R: Rng + ?Sized>(
    model: &BrnnModel,
    x: &Tensor,
    y: &Tensor,
    mask: &Tensor,
    n_batches: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<ElboTerms> {
    let eps: Vec<_> = (0..n_mc).map(|_| model.weights.draw_eps(rng)).collect();
    let mut tape = Tape::new();
    let (_, terms) = elbo_on_tape(&mut tape, model, x, y, mask, n_batches, &eps)?;
    if !terms.loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite minibatch loss (kl {}, nll {})",
            terms.kl_estimate, terms.nll
        )));
    }
    Ok(terms)
}

/// Sampling options for predictive draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Add `N(0, exp(log_var))` observation noise to each draw.
    pub observation_noise: bool,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { observation_noise: true, seed: 0 }
    }
}

/// Independent RNG stream of draw `d`.
pub fn draw_rng(seed: u64, draw: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64 + 1);
    rng
}

/// `n × N × K × L` standardized draws for windows `x` (`N × U × L`). Draw `d`
/// uses one weight sample from stream `(seed, d)` for every window.
pub fn sample_predict_batch(model: &BrnnModel, x: &Tensor, n: usize, opts: SampleOptions) -> Result<Vec<f64>> {
    let windows = model.check_input(x)?;
    if n == 0 {
        return Err(Error::invalid("at least one draw is required"));
    }
    let per = model.horizon_k * model.n_links;
    let mut out = Vec::with_capacity(n * windows * per);
    for d in 0..n {
        let mut rng = draw_rng(opts.seed, d);
        let eps = model.weights.draw_eps(&mut rng);
        let mut tape = Tape::new();
        let fwd = model.forward_sampled(&mut tape, x, &eps)?;
        let noise_sd = (0.5 * tape.value(fwd.log_var).data()[0]).exp();
        let outs: Vec<&[f64]> = fwd.outputs.iter().map(|&o| tape.value(o).data()).collect();
        for i in 0..windows {
            for k in 0..model.horizon_k {
                for link in 0..model.n_links {
                    let mut v = outs[k][i * model.n_links + link];
                    if opts.observation_noise {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v += noise_sd * z;
                    }
                    out.push(v);
                }
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("BRNN produced non-finite draws".into()));
    }
    Ok(out)
}

/// `n × K × L` standardized draws for one `U × L` window.
pub fn sample_predict(model: &BrnnModel, x: &Tensor, n: usize, opts: SampleOptions) -> Result<Vec<f64>> {
    if x.shape() != [model.window_u, model.n_links] {
        return Err(Error::shape(
            "brnn.input",
            format!("expected [{}, {}], got {:?}", model.window_u, model.n_links, x.shape()),
        ));
    }
    let batched = Tensor::new(vec![1, model.window_u, model.n_links], x.data().to_vec())?;
    sample_predict_batch(model, &batched, n, opts)
}
