//! Finite-difference gradient sweeps. Each returns the worst relative error
//! over its random instances.

use super::fd_max_rel_error;
use holdwise::brnn::{elbo_on_tape, BrnnConfig, BrnnModel, MixturePrior};
use holdwise::nn::layers::{lstm_step, LstmState};
use holdwise::nn::{Affine, Conv1dParams, ConvLstmCellParams, LstmCellParams, NodeId, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-6;
pub const INSTANCES: u64 = 20;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random fixed linear functional so every output element matters.
fn weighted_sum(tape: &mut Tape, x: NodeId, weights: &Tensor) -> NodeId {
    let w = tape.input(weights.clone());
    let prod = tape.mul("probe", x, w).unwrap();
    tape.sum(&[prod])
}

fn check(store: &ParamStore, build: impl Fn(&mut Tape, &ParamStore) -> NodeId) -> f64 {
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let grads = tape.backward(loss).unwrap().to_dense(store);
    fd_max_rel_error(store, &grads, H, FLOOR, |s| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.value(l).data()[0]
    })
}

fn worst(per_instance: impl Fn(u64) -> f64) -> f64 {
    (0..INSTANCES).map(per_instance).fold(0.0, f64::max)
}

pub fn affine() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, fin, fout) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let mut store = ParamStore::new();
        let layer = Affine::new(&mut store, "affine", fin, fout, &mut rng);
        store.get_mut(layer.b).data_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let x = random_tensor(&mut rng, &[rows, fin]);
        let probe = random_tensor(&mut rng, &[rows, fout]);
        check(&store, |tape, s| {
            let xi = tape.input(x.clone());
            let y = layer.forward(tape, s, xi).unwrap();
            weighted_sum(tape, y, &probe)
        })
    })
}

pub fn conv1d_same() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let width = [1, 3, 5, 7][rng.random_range(0..4)];
        let (b, len, cin, cout) = (rng.random_range(1..3), rng.random_range(1..8), rng.random_range(1..4), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let conv = Conv1dParams::new(&mut store, "conv", width, cin, cout, true, &mut rng).unwrap();
        store.get_mut(conv.bias.unwrap()).data_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let x = random_tensor(&mut rng, &[b, len, cin]);
        let probe = random_tensor(&mut rng, &[b, len, cout]);
        check(&store, |tape, s| {
            let xi = tape.input(x.clone());
            let y = conv.forward(tape, s, xi).unwrap();
            weighted_sum(tape, y, &probe)
        })
    })
}

pub fn lstm_unrolled() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (b, input, hidden, steps) = (rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let mut store = ParamStore::new();
        let cell = LstmCellParams::new(&mut store, "lstm", input, hidden, &mut rng);
        let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut rng, &[b, input])).collect();
        let probe = random_tensor(&mut rng, &[b, hidden]);
        check(&store, |tape, s| {
            let w = cell.bind(tape, s);
            let mut state = LstmState::zeros(tape, &[b, hidden]);
            for x in &xs {
                let xi = tape.input(x.clone());
                state = lstm_step(tape, "lstm", &w, hidden, xi, state).unwrap();
            }
            weighted_sum(tape, state.h, &probe)
        })
    })
}

pub fn conv_lstm_unrolled() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let width = [1, 3, 5][rng.random_range(0..3)];
        let (b, links, hidden, steps) = (rng.random_range(1..3), rng.random_range(2..6), rng.random_range(1..4), rng.random_range(1..4));
        let mut store = ParamStore::new();
        let cell = ConvLstmCellParams::new(&mut store, "convlstm", 1, hidden, width, &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..steps).map(|_| random_tensor(&mut rng, &[b, links, 1])).collect();
        let probe = random_tensor(&mut rng, &[b, links, hidden]);
        check(&store, |tape, s| {
            let mut state = LstmState::zeros(tape, &[b, links, hidden]);
            for x in &xs {
                let xi = tape.input(x.clone());
                state = cell.step(tape, s, xi, state).unwrap();
            }
            weighted_sum(tape, state.c, &probe)
        })
    })
}

pub fn dropout_and_elementwise() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = rng.random_range(2..10);
        let mut store = ParamStore::new();
        let a = store.add("a", random_tensor(&mut rng, &[n]));
        let bb = store.add("b", random_tensor(&mut rng, &[n]));
        let p = rng.random_range(0.0..0.6);
        let mask_seed = rng.random::<u64>();
        let probe = random_tensor(&mut rng, &[n]);
        check(&store, |tape, s| {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let (a, b) = (tape.param(s, a), tape.param(s, bb));
            let prod = tape.mul("m", a, b).unwrap();
            let t = tape.tanh(prod);
            let sg = tape.sigmoid(b);
            let sum = tape.add("add", t, sg).unwrap();
            let d = tape.dropout(sum, p, &mut drop_rng);
            let sc = tape.scale(d, -1.7);
            weighted_sum(tape, sc, &probe)
        })
    })
}

/// Joint point-plus-quantile loss. Also panics if the taped forward value
/// disagrees with the plain loss function.
pub fn joint_loss() -> f64 {
    let levels = [0.05, 0.2, 0.5, 0.8, 0.95];
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = rng.random_range(1..8);
        let heads = 1 + levels.len();
        let mut store = ParamStore::new();
        let pred = store.add("pred", random_tensor(&mut rng, &[n, heads]));
        // Keep every residual at least 0.01 away from the pinball kink.
        let target = Tensor::from_fn(&[n], |d| {
            let row = &store.get(pred).data()[d * heads..(d + 1) * heads];
            let mut y: f64 = rng.random_range(-1.5..1.5);
            while row.iter().any(|q| (y - q).abs() < 0.01) {
                y += 0.013;
            }
            y
        });
        let mask = Tensor::from_fn(&[n], |_| if rng.random::<f64>() < 0.8 { 1.0 } else { 0.0 });
        let build = |tape: &mut Tape, s: &ParamStore| {
            let p = tape.param(s, pred);
            tape.joint_loss("loss", p, &target, &mask, &levels).unwrap()
        };
        let mut tape = Tape::new();
        let l = build(&mut tape, &store);
        let pd = store.get(pred).data();
        let col = |j: usize| (0..n).map(|d| pd[d * heads + j]).collect::<Vec<_>>();
        let qs: Vec<Vec<f64>> = (1..heads).map(col).collect();
        let qrefs: Vec<&[f64]> = qs.iter().map(Vec::as_slice).collect();
        let reference = holdwise::dqr::loss::joint_loss(target.data(), &col(0), &qrefs, &levels, mask.data()).unwrap();
        assert!((tape.value(l).data()[0] - reference).abs() < 1e-12);
        check(&store, build)
    })
}

pub fn gaussian_nll() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let n = rng.random_range(1..10);
        let mut store = ParamStore::new();
        let pred = store.add("pred", random_tensor(&mut rng, &[n]));
        let lv = store.add("log_var", Tensor::scalar(rng.random_range(-1.0..1.0)));
        let target = random_tensor(&mut rng, &[n]);
        let mask = Tensor::from_fn(&[n], |_| if rng.random::<f64>() < 0.8 { 1.0 } else { 0.0 });
        check(&store, |tape, s| {
            let (p, v) = (tape.param(s, pred), tape.param(s, lv));
            tape.gaussian_nll("nll", p, v, &target, &mask).unwrap()
        })
    })
}

/// Reparameterized ELBO with the noise held fixed (common random numbers),
/// over random priors, posteriors and shapes. Coarser step and floor than the
/// deterministic layers because the loss is a sum over every weight's KL.
pub fn elbo() -> f64 {
    worst(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (l, u, k, b) = (rng.random_range(1..3), rng.random_range(2..4), rng.random_range(1..3), rng.random_range(1..3));
        let prior =
            MixturePrior::new(rng.random_range(0.7..1.0), rng.random_range(1.0..3.0), rng.random_range(0.05..1.0)).unwrap();
        let config = BrnnConfig { lstm_state_size: 10, prior, seed, ..BrnnConfig::default() };
        let mut model = BrnnModel::new(config, l, u, k).unwrap();
        for p in model.weights.params.clone() {
            let store = model.params_mut();
            store.get_mut(p.mu).data_mut().iter_mut().for_each(|m| *m = rng.random_range(-0.5..0.5));
            store.get_mut(p.rho).data_mut().iter_mut().for_each(|r| *r = rng.random_range(-4.0..-1.0));
        }
        let x = Tensor::from_fn(&[b, u, l], |_| rng.random_range(-1.5..1.5));
        let y = Tensor::from_fn(&[b, k, l], |_| rng.random_range(-1.5..1.5));
        let mask = Tensor::from_fn(&[b, k, l], |_| if rng.random_bool(0.8) { 1.0 } else { 0.0 });
        let n_mc = rng.random_range(1..3);
        let eps: Vec<_> = (0..n_mc).map(|_| model.weights.draw_eps(&mut rng)).collect();
        let n_batches = rng.random_range(1..5);

        let mut tape = Tape::new();
        let (loss, _) = elbo_on_tape(&mut tape, &model, &x, &y, &mask, n_batches, &eps).unwrap();
        let grads = tape.backward(loss).unwrap().to_dense(model.params());
        fd_max_rel_error(model.params(), &grads, 1e-5, 1e-3, |s| {
            let mut m = model.clone();
            m.weights.store = s.clone();
            let mut t = Tape::new();
            elbo_on_tape(&mut t, &m, &x, &y, &mask, n_batches, &eps).unwrap().1.loss
        })
    })
}
