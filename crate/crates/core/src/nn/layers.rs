//! Layer parameter bundles and their forward rules on the tape.
//!
//! Forward rules take weight *nodes* rather than parameter ids so the same
//! code runs with point weights (bound via [`Tape::param`]) and with sampled
//! variational weights.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Glorot-uniform-like scale for a `fan_in → fan_out` map.
fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone)]
pub struct Affine {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_normal(format!("{name}.w"), &[fan_in, fan_out], glorot_std(fan_in, fan_out), rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self {
            name: name.to_string(),
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(&self.name, x, w, Some(b))
    }
}

/// Kernel `width × in_channels × out_channels` with symmetric "same" padding.
#[derive(Debug, Clone)]
pub struct Conv1dParams {
    pub name: String,
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub width: usize,
}

impl Conv1dParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        cin: usize,
        cout: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(Error::invalid(format!("{name}: conv kernel width {width} must be odd")));
        }
        let kernel = store.add_normal(
            format!("{name}.kernel"),
            &[width, cin, cout],
            glorot_std(width * cin, cout),
            rng,
        );
        let bias = with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Ok(Self {
            name: name.to_string(),
            kernel,
            bias,
            width,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let k = tape.param(store, self.kernel);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.conv1d_same(&self.name, x, k, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl LstmState {
    /// All-zero state of the given shape (last axis = hidden size).
    pub fn zeros(tape: &mut Tape, shape: &[usize]) -> Self {
        let h = tape.input(Tensor::zeros(shape));
        let c = tape.input(Tensor::zeros(shape));
        Self { h, c }
    }
}

/// Applies the LSTM state update to pre-activation gates laid out as
/// `[input, forget, cell, output]` along the last axis.
pub fn lstm_update(tape: &mut Tape, name: &str, gates: NodeId, c_prev: NodeId, hidden: usize) -> Result<LstmState> {
    let i = tape.slice_last(name, gates, 0, hidden)?;
    let f = tape.slice_last(name, gates, hidden, hidden)?;
    let g = tape.slice_last(name, gates, 2 * hidden, hidden)?;
    let o = tape.slice_last(name, gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(name, f, c_prev)?;
    let write = tape.mul(name, i, g)?;
    let c = tape.add(name, keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(name, o, tc)?;
    Ok(LstmState { h, c })
}

/// Dense LSTM cell: input-to-gate weights `input×4H`, state-to-state weights
/// `H×4H`, gate biases `4H`.
#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub name: String,
    pub input_size: usize,
    pub hidden: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

/// Weight nodes for one LSTM cell, bound once per tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub bias: NodeId,
}

/// Forget-gate bias starts at 1 so early training does not wipe the cell.
pub fn lstm_bias_init(hidden: usize) -> Tensor {
    Tensor::from_fn(&[4 * hidden], |i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
}

impl LstmCellParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_ih = store.add_normal(format!("{name}.w_ih"), &[input_size, 4 * hidden], glorot_std(input_size, hidden), rng);
        let w_hh = store.add_normal(format!("{name}.w_hh"), &[hidden, 4 * hidden], glorot_std(hidden, hidden), rng);
        let bias = store.add(format!("{name}.bias"), lstm_bias_init(hidden));
        Self {
            name: name.to_string(),
            input_size,
            hidden,
            w_ih,
            w_hh,
            bias,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            w_ih: tape.param(store, self.w_ih),
            w_hh: tape.param(store, self.w_hh),
            bias: tape.param(store, self.bias),
        }
    }
}

/// One dense LSTM step. `x` is `batch×input`, state tensors `batch×H`.
pub fn lstm_step(
    tape: &mut Tape,
    name: &str,
    weights: &LstmWeights,
    hidden: usize,
    x: NodeId,
    state: LstmState,
) -> Result<LstmState> {
    let from_input = tape.affine(name, x, weights.w_ih, Some(weights.bias))?;
    let from_state = tape.affine(name, state.h, weights.w_hh, None)?;
    let gates = tape.add(name, from_input, from_state)?;
    lstm_update(tape, name, gates, state.c, hidden)
}

/// LSTM cell whose input-to-gate and state-to-state maps are 1-D
/// convolutions over the link axis.
#[derive(Debug, Clone)]
pub struct ConvLstmCellParams {
    pub name: String,
    pub input_channels: usize,
    pub hidden: usize,
    pub width: usize,
    pub input_conv: Conv1dParams,
    pub state_conv: Conv1dParams,
}

impl ConvLstmCellParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_channels: usize,
        hidden: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_conv = Conv1dParams::new(store, &format!("{name}.input_conv"), width, input_channels, 4 * hidden, true, rng)?;
        store.get_mut(input_conv.bias.unwrap()).data_mut().copy_from_slice(lstm_bias_init(hidden).data());
        let state_conv = Conv1dParams::new(store, &format!("{name}.state_conv"), width, hidden, 4 * hidden, false, rng)?;
        Ok(Self {
            name: name.to_string(),
            input_channels,
            hidden,
            width,
            input_conv,
            state_conv,
        })
    }

    /// `x` is `batch×links×input_channels`; state tensors are `batch×links×H`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, state: LstmState) -> Result<LstmState> {
        let from_input = self.input_conv.forward(tape, store, x)?;
        let from_state = self.state_conv.forward(tape, store, state.h)?;
        let gates = tape.add(&self.name, from_input, from_state)?;
        lstm_update(tape, &self.name, gates, state.c, self.hidden)
    }
}
