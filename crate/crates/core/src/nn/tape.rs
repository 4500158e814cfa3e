//! Reverse-mode gradient tape over a fixed operation vocabulary.
//!
//! Every operation records its output value and the ids of its operands.
//! [`Tape::backward`] walks the records in reverse and accumulates adjoints;
//! only leaves created through [`Tape::param`] report gradients.

use rand::Rng;

use super::activation::{sigmoid, softplus};
use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::brnn::prior::MixturePrior;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SliceLast {
        x: NodeId,
        start: usize,
        width: usize,
        src_last: usize,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Scale {
        x: NodeId,
        factor: f64,
    },
    Sum(Vec<NodeId>),
    JointLoss {
        pred: NodeId,
        target: Vec<f64>,
        mask: Vec<f64>,
        levels: Vec<f64>,
    },
    GaussianNll {
        pred: NodeId,
        log_var: NodeId,
        target: Vec<f64>,
        mask: Vec<f64>,
    },
    Reparam {
        mu: NodeId,
        rho: NodeId,
        eps: Vec<f64>,
    },
    LogQ {
        rho: NodeId,
        eps: Vec<f64>,
    },
    LogPrior {
        w: NodeId,
        prior: MixturePrior,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    len: usize,
    cin: usize,
    cout: usize,
    width: usize,
}

impl ConvGeom {
    fn pad(&self) -> usize {
        self.width / 2
    }

    /// Unfolds `x` (`batch×len×cin`) into `(batch·len)×(width·cin)` rows with
    /// zero padding at both ends of the link axis.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.width * self.cin;
        let mut col = vec![0.0; self.batch * self.len * cols];
        for b in 0..self.batch {
            for l in 0..self.len {
                let row = &mut col[(b * self.len + l) * cols..][..cols];
                for o in 0..self.width {
                    let src = l as isize + o as isize - self.pad() as isize;
                    if src < 0 || src >= self.len as isize {
                        continue;
                    }
                    let from = (b * self.len + src as usize) * self.cin;
                    row[o * self.cin..(o + 1) * self.cin].copy_from_slice(&x[from..from + self.cin]);
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let cols = self.width * self.cin;
        for b in 0..self.batch {
            for l in 0..self.len {
                let row = &col[(b * self.len + l) * cols..][..cols];
                for o in 0..self.width {
                    let src = l as isize + o as isize - self.pad() as isize;
                    if src < 0 || src >= self.len as isize {
                        continue;
                    }
                    let to = (b * self.len + src as usize) * self.cin;
                    for c in 0..self.cin {
                        dx[to + c] += row[o * self.cin + c];
                    }
                }
            }
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Records one forward pass. Build a fresh tape per minibatch.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Adjoints produced by [`Tape::backward`], addressable by parameter.
pub struct Gradients {
    by_param: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(id.index()).and_then(|g| g.as_deref())
    }

    /// One gradient tensor per parameter in `store`; parameters absent from
    /// the tape receive zeros.
    pub fn to_dense(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        store
            .ids()
            .map(|id| match self.get(id) {
                Some(g) => g.to_vec(),
                None => vec![0.0; store.get(id).len()],
            })
            .collect()
    }
}

fn check_same(layer: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            layer,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Non-trainable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf. Each parameter enters the tape once; repeated calls
    /// return the same node, so unrolled layers share storage.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if self.param_nodes.len() <= id.index() {
            self.param_nodes.resize(id.index() + 1, None);
        }
        if let Some(node) = self.param_nodes[id.index()] {
            return node;
        }
        let node = self.push(store.get(id).clone(), Op::Leaf);
        self.nodes[node.0].param = Some(id);
        self.param_nodes[id.index()] = Some(node);
        node
    }

    /// Number of tape leaves bound to `id` (0 or 1).
    pub fn param_leaf_count(&self, id: ParamId) -> usize {
        self.nodes.iter().filter(|n| n.param == Some(id)).count()
    }

    /// `x·W + b` over the last axis of `x`. `W` is `fan_in×fan_out`.
    pub fn affine(&mut self, layer: &str, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 {
            return Err(Error::shape(layer, format!("weight must be 2-D, got {:?}", wv.shape())));
        }
        let (fan_in, fan_out) = (wv.shape()[0], wv.shape()[1]);
        if xv.last_dim() != fan_in {
            return Err(Error::shape(
                layer,
                format!("input last dim {} but weight expects {fan_in}", xv.last_dim()),
            ));
        }
        let rows = xv.len() / fan_in;
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != fan_out {
                return Err(Error::shape(layer, format!("bias len {} != {fan_out}", bv.len())));
            }
            for r in 0..rows {
                out[r * fan_out..(r + 1) * fan_out].copy_from_slice(bv.data());
            }
        }
        gemm(rows, fan_in, fan_out, xv.data(), false, wv.data(), false, &mut out, 1.0);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Affine {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            },
        ))
    }

    /// One-dimensional convolution along the link axis with "same" zero
    /// padding. `x` is `batch×len×cin`, `W` is `width×cin×cout` with odd width.
    pub fn conv1d_same(
        &mut self,
        layer: &str,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.shape().len() != 3 || wv.shape().len() != 3 {
            return Err(Error::shape(
                layer,
                format!("conv expects 3-D input and kernel, got {:?} and {:?}", xv.shape(), wv.shape()),
            ));
        }
        let geom = ConvGeom {
            batch: xv.shape()[0],
            len: xv.shape()[1],
            cin: xv.shape()[2],
            cout: wv.shape()[2],
            width: wv.shape()[0],
        };
        if wv.shape()[1] != geom.cin {
            return Err(Error::shape(
                layer,
                format!("kernel in-channels {} but input has {}", wv.shape()[1], geom.cin),
            ));
        }
        if geom.width % 2 == 0 {
            return Err(Error::shape(layer, format!("kernel width {} is not odd", geom.width)));
        }
        let rows = geom.batch * geom.len;
        let mut out = vec![0.0; rows * geom.cout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != geom.cout {
                return Err(Error::shape(layer, format!("bias len {} != {}", bv.len(), geom.cout)));
            }
            for r in 0..rows {
                out[r * geom.cout..(r + 1) * geom.cout].copy_from_slice(bv.data());
            }
        }
        let col = geom.im2col(xv.data());
        gemm(rows, geom.width * geom.cin, geom.cout, &col, false, wv.data(), false, &mut out, 1.0);
        let value = Tensor::new(vec![geom.batch, geom.len, geom.cout], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, geom }))
    }

    pub fn add(&mut self, layer: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same(layer, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, layer: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        check_same(layer, self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let v = self.value(x);
        let value = Tensor::from_fn(v.shape(), |i| f(v.data()[i]));
        self.push(value, op)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.map(x, |v| v * factor, Op::Scale { x, factor })
    }

    /// Columns `start..start+width` of the last axis.
    pub fn slice_last(&mut self, layer: &str, x: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let v = self.value(x);
        let src_last = v.last_dim();
        if start + width > src_last {
            return Err(Error::shape(
                layer,
                format!("slice {start}..{} out of last dim {src_last}", start + width),
            ));
        }
        let rows = v.len() / src_last;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * src_last + start..r * src_last + start + width]);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::SliceLast {
                x,
                start,
                width,
                src_last,
            },
        ))
    }

    /// Inverted dropout; identity (no record) when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(x);
        let value = Tensor::from_fn(v.shape(), |i| v.data()[i] * mask[i]);
        self.push(value, Op::Dropout { x, mask })
    }

    /// Sum of all elements of all operands, as a scalar.
    pub fn sum(&mut self, xs: &[NodeId]) -> NodeId {
        let total: f64 = xs.iter().map(|&x| self.value(x).data().iter().sum::<f64>()).sum();
        self.push(Tensor::scalar(total), Op::Sum(xs.to_vec()))
    }

    /// Masked squared error on channel 0 of `pred` plus one pinball term per
    /// level on channels `1..=J`. `pred` has last dim `1 + levels.len()`;
    /// `target` and `mask` match `pred` without its last axis.
    pub fn joint_loss(
        &mut self,
        layer: &str,
        pred: NodeId,
        target: &Tensor,
        mask: &Tensor,
        levels: &[f64],
    ) -> Result<NodeId> {
        let pv = self.value(pred);
        let heads = 1 + levels.len();
        if pv.last_dim() != heads || pv.len() / heads != target.len() || target.len() != mask.len() {
            return Err(Error::shape(
                layer,
                format!(
                    "prediction {:?} with {heads} heads vs target {:?} / mask {:?}",
                    pv.shape(),
                    target.shape(),
                    mask.shape()
                ),
            ));
        }
        let mut total = 0.0;
        for (d, (&y, &m)) in target.data().iter().zip(mask.data()).enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = &pv.data()[d * heads..(d + 1) * heads];
            total += m * (y - row[0]).powi(2);
            for (j, &p) in levels.iter().enumerate() {
                total += m * crate::dqr::loss::pinball(y - row[1 + j], p);
            }
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::JointLoss {
                pred,
                target: target.data().to_vec(),
                mask: mask.data().to_vec(),
                levels: levels.to_vec(),
            },
        ))
    }

    /// Masked Gaussian negative log-likelihood with a scalar log-variance node.
    pub fn gaussian_nll(
        &mut self,
        layer: &str,
        pred: NodeId,
        log_var: NodeId,
        target: &Tensor,
        mask: &Tensor,
    ) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.len() != target.len() || target.len() != mask.len() || self.value(log_var).len() != 1 {
            return Err(Error::shape(
                layer,
                format!("prediction {:?} vs target {:?}", pv.shape(), target.shape()),
            ));
        }
        let lv = self.value(log_var).data()[0];
        let inv_var = (-lv).exp();
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .zip(mask.data())
            .map(|((&p, &y), &m)| m * (HALF_LN_2PI + 0.5 * lv + 0.5 * (y - p).powi(2) * inv_var))
            .sum();
        Ok(self.push(
            Tensor::scalar(total),
            Op::GaussianNll {
                pred,
                log_var,
                target: target.data().to_vec(),
                mask: mask.data().to_vec(),
            },
        ))
    }

    /// `w = mu + softplus(rho)·eps`.
    pub fn reparam(&mut self, layer: &str, mu: NodeId, rho: NodeId, eps: Vec<f64>) -> Result<NodeId> {
        check_same(layer, self.value(mu), self.value(rho))?;
        if eps.len() != self.value(mu).len() {
            return Err(Error::shape(layer, "noise length differs from parameter"));
        }
        let (m, r) = (self.value(mu), self.value(rho));
        let value = Tensor::from_fn(m.shape(), |i| m.data()[i] + softplus(r.data()[i]) * eps[i]);
        Ok(self.push(value, Op::Reparam { mu, rho, eps }))
    }

    /// `log q(w|mu, sigma)` at `w = mu + sigma·eps`; depends on `rho` only.
    pub fn log_q(&mut self, layer: &str, rho: NodeId, eps: Vec<f64>) -> Result<NodeId> {
        if eps.len() != self.value(rho).len() {
            return Err(Error::shape(layer, "noise length differs from parameter"));
        }
        let total: f64 = self
            .value(rho)
            .data()
            .iter()
            .zip(&eps)
            .map(|(&r, &e)| -HALF_LN_2PI - softplus(r).ln() - 0.5 * e * e)
            .sum();
        Ok(self.push(Tensor::scalar(total), Op::LogQ { rho, eps }))
    }

    pub fn log_prior(&mut self, w: NodeId, prior: MixturePrior) -> NodeId {
        let total = crate::brnn::prior::log_mixture_prior(self.value(w).data(), &prior);
        self.push(Tensor::scalar(total), Op::LogPrior { w, prior })
    }

    /// Propagates `d loss / d node` back to every parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let len_of = |id: NodeId| self.nodes[id.0].value.len();
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::Affine {
                    x,
                    w,
                    b,
                    rows,
                    fan_in,
                    fan_out,
                } => {
                    let (rows, fan_in, fan_out) = (*rows, *fan_in, *fan_out);
                    let xv = self.value(*x).data();
                    let wv = self.value(*w).data();
                    let dx = acc(&mut adj, *x, rows * fan_in);
                    gemm(rows, fan_out, fan_in, &g, false, wv, true, dx, 1.0);
                    let dw = acc(&mut adj, *w, fan_in * fan_out);
                    gemm(fan_in, rows, fan_out, xv, true, &g, false, dw, 1.0);
                    if let Some(b) = b {
                        let db = acc(&mut adj, *b, fan_out);
                        for r in 0..rows {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += g[r * fan_out + o];
                            }
                        }
                    }
                }
                Op::Conv1d { x, w, b, geom } => {
                    let rows = geom.batch * geom.len;
                    let cols = geom.width * geom.cin;
                    let col = geom.im2col(self.value(*x).data());
                    let dw = acc(&mut adj, *w, cols * geom.cout);
                    gemm(cols, rows, geom.cout, &col, true, &g, false, dw, 1.0);
                    let mut dcol = vec![0.0; rows * cols];
                    gemm(rows, geom.cout, cols, &g, false, self.value(*w).data(), true, &mut dcol, 0.0);
                    let dx = acc(&mut adj, *x, rows * geom.cin);
                    geom.col2im(&dcol, dx);
                    if let Some(b) = b {
                        let db = acc(&mut adj, *b, geom.cout);
                        for r in 0..rows {
                            for (o, d) in db.iter_mut().enumerate() {
                                *d += g[r * geom.cout + o];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for id in [*a, *b] {
                        let d = acc(&mut adj, id, g.len());
                        d.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = acc(&mut adj, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                    let db = acc(&mut adj, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let dx = acc(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = acc(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Scale { x, factor } => {
                    let dx = acc(&mut adj, *x, g.len());
                    dx.iter_mut().zip(&g).for_each(|(d, g)| *d += g * factor);
                }
                Op::SliceLast {
                    x,
                    start,
                    width,
                    src_last,
                } => {
                    let rows = g.len() / width;
                    let dx = acc(&mut adj, *x, rows * src_last);
                    for r in 0..rows {
                        for c in 0..*width {
                            dx[r * src_last + start + c] += g[r * width + c];
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = acc(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::Sum(xs) => {
                    for &x in xs {
                        let n = len_of(x);
                        let dx = acc(&mut adj, x, n);
                        dx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::JointLoss {
                    pred,
                    target,
                    mask,
                    levels,
                } => {
                    let heads = 1 + levels.len();
                    let pv = self.value(*pred).data();
                    let dp = acc(&mut adj, *pred, pv.len());
                    for (d, (&y, &m)) in target.iter().zip(mask).enumerate() {
                        if m == 0.0 {
                            continue;
                        }
                        let row = &pv[d * heads..(d + 1) * heads];
                        dp[d * heads] += g[0] * m * -2.0 * (y - row[0]);
                        for (j, &p) in levels.iter().enumerate() {
                            let slope = if y > row[1 + j] { -p } else { 1.0 - p };
                            dp[d * heads + 1 + j] += g[0] * m * slope;
                        }
                    }
                }
                Op::GaussianNll {
                    pred,
                    log_var,
                    target,
                    mask,
                } => {
                    let lv = self.value(*log_var).data()[0];
                    let inv_var = (-lv).exp();
                    let pv = self.value(*pred).data();
                    let mut dlv = 0.0;
                    let dp = acc(&mut adj, *pred, pv.len());
                    for i in 0..pv.len() {
                        let r = target[i] - pv[i];
                        dp[i] += g[0] * mask[i] * -r * inv_var;
                        dlv += mask[i] * (0.5 - 0.5 * r * r * inv_var);
                    }
                    acc(&mut adj, *log_var, 1)[0] += g[0] * dlv;
                }
                Op::Reparam { mu, rho, eps } => {
                    let rv = self.value(*rho).data();
                    let dmu = acc(&mut adj, *mu, g.len());
                    dmu.iter_mut().zip(&g).for_each(|(d, g)| *d += g);
                    let drho = acc(&mut adj, *rho, g.len());
                    for i in 0..g.len() {
                        drho[i] += g[i] * eps[i] * sigmoid(rv[i]);
                    }
                }
                Op::LogQ { rho, eps } => {
                    let rv = self.value(*rho).data();
                    let drho = acc(&mut adj, *rho, eps.len());
                    for i in 0..eps.len() {
                        drho[i] += g[0] * -sigmoid(rv[i]) / softplus(rv[i]);
                    }
                }
                Op::LogPrior { w, prior } => {
                    let wv = self.value(*w).data();
                    let dw = acc(&mut adj, *w, wv.len());
                    for i in 0..wv.len() {
                        dw[i] += g[0] * prior.d_log_density(wv[i]);
                    }
                }
            }
        }

        let mut by_param = vec![None; self.param_nodes.len()];
        for (pid, node) in self.param_nodes.iter().enumerate() {
            if let Some(node) = node {
                by_param[pid] = adj[node.0].take();
            }
        }
        Ok(Gradients { by_param })
    }
}
