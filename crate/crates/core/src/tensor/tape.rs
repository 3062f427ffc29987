use super::kernels::{self, ConvDims, LinearDims, MixDims};
use super::Tensor;
use crate::error::{Error, Result};
use crate::linalg::{gemm, View};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Linear { x: Var, w: Var, b: Option<Var>, dims: LinearDims },
    Conv { x: Var, w: Var, b: Option<Var>, dims: ConvDims },
    NodeMix { x: Var, m: Var, dims: MixDims },
    SliceTime { x: Var, start: usize },
    Reshape(Var),
    SwapAxes { x: Var, a: usize, b: usize },
    ConcatLast(Vec<Var>),
    Sum(Var),
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], keyed by leaf [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf that requires one; `None` when the loss does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, v)| *a += v);
}

/// Permutes `data` of `shape` by exchanging axes `a` and `b`.
fn swap_axes_data(data: &[f64], shape: &[usize], a: usize, b: usize) -> Vec<f64> {
    let mut out_shape = shape.to_vec();
    out_shape.swap(a, b);
    let mut in_strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    in_strides.swap(a, b);
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..data.len() {
        out.push(data[idx.iter().zip(&in_strides).map(|(i, s)| i * s).sum::<usize>()]);
        for ax in (0..idx.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(format!("matmul {:?} by {:?}", ta.shape(), tb.shape())));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm(1.0, View::row_major(ta.data(), n, k), View::row_major(tb.data(), k, m), 0.0, &mut out, m, 1);
        let t = Tensor::from_parts(vec![n, m], out)?;
        self.push(t, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "add")?;
        let t = Tensor::from_parts(ta.shape().to_vec(), kernels::map_binary(ta.data(), tb.data(), |x, y| x + y))?;
        self.push(t, Op::Add(a, b), &[a, b], "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mul")?;
        let t = Tensor::from_parts(ta.shape().to_vec(), kernels::map_binary(ta.data(), tb.data(), |x, y| x * y))?;
        self.push(t, Op::Mul(a, b), &[a, b], "mul")
    }

    /// Multiplies every element by the constant `k`.
    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), kernels::map_unary(ta.data(), |x| x * k))?;
        self.push(t, Op::Scale(a, k), &[a], "scale")
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let c = *tx.shape().last().unwrap_or(&1);
        if tb.ndim() != 1 || tb.numel() != c {
            return Err(Error::shape(format!("bias {:?} for input {:?}", tb.shape(), tx.shape())));
        }
        let mut out = tx.data().to_vec();
        out.chunks_mut(c).for_each(|r| add_into(r, tb.data()));
        let t = Tensor::from_parts(tx.shape().to_vec(), out)?;
        self.push(t, Op::AddBias(x, b), &[x, b], "add_bias")
    }

    /// Multiplies row `i` (first axis) of `a` by `d[i]`.
    pub fn scale_rows(&mut self, a: Var, d: Var) -> Result<Var> {
        let (ta, td) = (self.value(a), self.value(d));
        if ta.ndim() == 0 || td.ndim() != 1 || td.numel() != ta.shape()[0] {
            return Err(Error::shape(format!("scale_rows {:?} by {:?}", ta.shape(), td.shape())));
        }
        let width = ta.numel() / ta.shape()[0].max(1);
        let mut out = ta.data().to_vec();
        for (row, &k) in out.chunks_mut(width.max(1)).zip(td.data()) {
            row.iter_mut().for_each(|v| *v *= k);
        }
        let t = Tensor::from_parts(ta.shape().to_vec(), out)?;
        self.push(t, Op::ScaleRows(a, d), &[a, d], "scale_rows")
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64 + Sync + Send, op: Op, name: &str) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), kernels::map_unary(ta.data(), f))?;
        self.push(t, op, &[a], name)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.max(0.0), Op::Relu(a), "relu")
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Returns `a`
    /// itself when not training or when `p` is zero.
    pub fn dropout<R: rand::Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let ta = self.value(a);
        let mask: Vec<f64> = (0..ta.numel())
            .map(|_| if rng.random::<f64>() >= p { keep } else { 0.0 })
            .collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), kernels::map_binary(ta.data(), &mask, |x, m| x * m))?;
        self.push(t, Op::Dropout(a, mask), &[a], "dropout")
    }

    /// `y = x · wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.ndim() != 2 || tx.ndim() == 0 || *tx.shape().last().unwrap() != tw.shape()[1] {
            return Err(Error::shape(format!("linear {:?} with weight {:?}", tx.shape(), tw.shape())));
        }
        let (cout, cin) = (tw.shape()[0], tw.shape()[1]);
        let bias = match b {
            Some(b) => {
                let tb = self.value(b);
                if tb.shape() != [cout] {
                    return Err(Error::shape(format!("linear bias {:?}, expected [{cout}]", tb.shape())));
                }
                Some(tb.data())
            }
            None => None,
        };
        let items = if tx.ndim() >= 2 { tx.shape()[0] } else { 1 };
        let rows = if items == 0 { 0 } else { tx.numel() / cin.max(1) / items };
        let dims = LinearDims { items, rows, cin, cout };
        let out = kernels::linear_forward(tx.data(), tw.data(), bias, dims);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let t = Tensor::from_parts(shape, out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(t, Op::Linear { x, w, b, dims }, &inputs, "linear")
    }

    /// Dilated causal convolution along axis 1 of `x [B, T, N, C_in]` with
    /// kernel `w [C_out, C_in, width]`:
    /// `y[t] = Σ_i w[.., i] x[t - dilation·i]`, zero before the start.
    /// Only output slots `out_start..T` are produced.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Option<Var>, dilation: usize, out_start: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.ndim() != 4 || tw.ndim() != 3 || tx.shape()[3] != tw.shape()[1] {
            return Err(Error::shape(format!("temporal_conv {:?} with kernel {:?}", tx.shape(), tw.shape())));
        }
        if dilation == 0 || tw.shape()[2] == 0 {
            return Err(Error::shape("dilation and kernel width must be at least 1"));
        }
        let s = tx.shape();
        if out_start >= s[1] {
            return Err(Error::shape(format!("output start {out_start} beyond {} time steps", s[1])));
        }
        let dims = ConvDims {
            items: s[0],
            t: s[1],
            n: s[2],
            cin: s[3],
            cout: tw.shape()[0],
            width: tw.shape()[2],
            dilation,
            out_start,
        };
        let bias = match b {
            Some(b) => {
                let tb = self.value(b);
                if tb.shape() != [dims.cout] {
                    return Err(Error::shape(format!("conv bias {:?}, expected [{}]", tb.shape(), dims.cout)));
                }
                Some(tb.data())
            }
            None => None,
        };
        let out = kernels::conv_forward(tx.data(), tw.data(), bias, dims);
        let t = Tensor::from_parts(vec![dims.items, dims.t - out_start, dims.n, dims.cout], out)?;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(t, Op::Conv { x, w, b, dims }, &inputs, "temporal_conv")
    }

    /// Channels-first convolution `x [B, C_in, T]`, `f [C_out, C_in, width]`
    /// to `[B, C_out, T]` with left zero padding.
    pub fn dilated_causal_conv1d(&mut self, x: Var, f: Var, dilation: usize) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("conv1d input {s:?}, expected [batch, channels, time]")));
        }
        let cout = match self.value(f).shape() {
            [c, _, _] => *c,
            other => return Err(Error::shape(format!("conv1d kernel {other:?}"))),
        };
        let xt = self.swap_axes(x, 1, 2)?;
        let x4 = self.reshape(xt, &[s[0], s[2], 1, s[1]])?;
        let y4 = self.temporal_conv(x4, f, None, dilation, 0)?;
        let y3 = self.reshape(y4, &[s[0], s[2], cout])?;
        self.swap_axes(y3, 1, 2)
    }

    /// Applies `m [N, N]` to the node axis: `y[b, t] = m · x[b, t]` for
    /// `x [B, T, N, C]`.
    pub fn node_mix(&mut self, x: Var, m: Var) -> Result<Var> {
        let (tx, tm) = (self.value(x), self.value(m));
        let s = tx.shape();
        if s.len() != 4 || tm.shape() != [s[2], s[2]] {
            return Err(Error::shape(format!("node_mix {:?} with {:?}", s, tm.shape())));
        }
        let dims = MixDims { items: s[0], t: s[1], n: s[2], c: s[3] };
        let out = kernels::node_mix_forward(tx.data(), tm.data(), dims);
        let t = Tensor::from_parts(s.to_vec(), out)?;
        self.push(t, Op::NodeMix { x, m, dims }, &[x, m], "node_mix")
    }

    /// Drops the first `start` entries of axis 1.
    pub fn slice_time(&mut self, x: Var, start: usize) -> Result<Var> {
        if start == 0 {
            return Ok(x);
        }
        let tx = self.value(x);
        let s = tx.shape();
        if s.len() < 2 || start >= s[1] {
            return Err(Error::shape(format!("slice from {start} of {s:?}")));
        }
        let inner: usize = s[2..].iter().product();
        let (t, b) = (s[1], s[0]);
        let mut out = Vec::with_capacity(b * (t - start) * inner);
        for i in 0..b {
            out.extend_from_slice(&tx.data()[(i * t + start) * inner..(i + 1) * t * inner]);
        }
        let mut shape = s.to_vec();
        shape[1] = t - start;
        let v = Tensor::from_parts(shape, out)?;
        self.push(v, Op::SliceTime { x, start }, &[x], "slice_time")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push(t, Op::Reshape(x), &[x], "reshape")
    }

    pub fn swap_axes(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let tx = self.value(x);
        if a >= tx.ndim() || b >= tx.ndim() {
            return Err(Error::shape(format!("swap axes {a},{b} of {:?}", tx.shape())));
        }
        let mut shape = tx.shape().to_vec();
        let data = swap_axes_data(tx.data(), &shape, a, b);
        shape.swap(a, b);
        let t = Tensor::from_parts(shape, data)?;
        self.push(t, Op::SwapAxes { x, a, b }, &[x], "swap_axes")
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat of nothing"))?;
        let lead = self.value(*first).shape().split_last().map(|(_, l)| l.to_vec()).unwrap_or_default();
        let mut widths = Vec::with_capacity(xs.len());
        for v in xs {
            let s = self.value(*v).shape();
            match s.split_last() {
                Some((w, l)) if l == lead.as_slice() => widths.push(*w),
                _ => return Err(Error::shape(format!("concat {s:?} with leading {lead:?}"))),
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let t = Tensor::from_parts(shape, out)?;
        self.push(t, Op::ConcatLast(xs.to_vec()), xs, "concat_last")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        same_shape(tp, tt, "mse_loss")?;
        if tp.numel() == 0 {
            return Err(Error::shape("mse_loss of empty tensors"));
        }
        let s: f64 = tp.data().iter().zip(tt.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let loss = s / tp.numel() as f64;
        self.push(Tensor::scalar(loss), Op::Mse(pred, target), &[pred, target], "mse_loss")
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut pending: Vec<Option<Vec<f64>>> = Vec::new();
        pending.resize_with(loss.0 + 1, || None);
        pending[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = Vec::new();
        out.resize_with(self.nodes.len(), || None);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let mut send = |v: Var, contrib: Vec<f64>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut pending[v.0] {
                    Some(acc) => add_into(acc, &contrib),
                    slot => *slot = Some(contrib),
                }
            };
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => out[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g)?),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let gv = View::row_major(&g, n, m);
                    if wants(*a) {
                        let mut da = vec![0.0; n * k];
                        gemm(1.0, gv, View::row_major(tb.data(), k, m).t(), 0.0, &mut da, k, 1);
                        send(*a, da);
                    }
                    if wants(*b) {
                        let mut db = vec![0.0; k * m];
                        gemm(1.0, View::row_major(ta.data(), n, k).t(), gv, 0.0, &mut db, m, 1);
                        send(*b, db);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*b) {
                        send(*b, g.clone());
                    }
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        send(*a, kernels::map_binary(&g, self.value(*b).data(), |x, y| x * y));
                    }
                    if wants(*b) {
                        send(*b, kernels::map_binary(&g, self.value(*a).data(), |x, y| x * y));
                    }
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    send(*a, kernels::map_unary(&g, |x| x * k));
                }
                Op::AddBias(x, b) => {
                    if wants(*b) {
                        let c = self.value(*b).numel();
                        let mut db = vec![0.0; c];
                        g.chunks(c).for_each(|r| add_into(&mut db, r));
                        send(*b, db);
                    }
                    send(*x, g);
                }
                Op::ScaleRows(a, d) => {
                    let (ta, td) = (self.value(*a), self.value(*d));
                    let width = (ta.numel() / td.numel().max(1)).max(1);
                    if wants(*d) {
                        let dd = g
                            .chunks(width)
                            .zip(ta.data().chunks(width))
                            .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                            .collect();
                        send(*d, dd);
                    }
                    if wants(*a) {
                        let mut da = g;
                        for (row, &k) in da.chunks_mut(width).zip(td.data()) {
                            row.iter_mut().for_each(|v| *v *= k);
                        }
                        send(*a, da);
                    }
                }
                Op::Tanh(a) => send(*a, kernels::map_binary(&g, node.value.data(), |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => send(*a, kernels::map_binary(&g, node.value.data(), |g, y| g * y * (1.0 - y))),
                Op::Relu(a) => send(*a, kernels::map_binary(&g, node.value.data(), |g, y| if y > 0.0 { g } else { 0.0 })),
                Op::Dropout(a, mask) => send(*a, kernels::map_binary(&g, mask, |g, m| g * m)),
                Op::Linear { x, w, b, dims } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = kernels::linear_backward(tx.data(), tw.data(), &g, *dims, wants(*x));
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, db);
                    }
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                }
                Op::Conv { x, w, b, dims } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let (dx, dw, db) = kernels::conv_backward(tx.data(), tw.data(), &g, *dims, wants(*x));
                    send(*w, dw);
                    if let Some(b) = b {
                        send(*b, db);
                    }
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                }
                Op::NodeMix { x, m, dims } => {
                    let (tx, tm) = (self.value(*x), self.value(*m));
                    let (dx, dm) = kernels::node_mix_backward(tx.data(), tm.data(), &g, *dims, wants(*x), wants(*m));
                    if let Some(dm) = dm {
                        send(*m, dm);
                    }
                    if let Some(dx) = dx {
                        send(*x, dx);
                    }
                }
                Op::SliceTime { x, start } => {
                    let s = self.value(*x).shape();
                    let inner: usize = s[2..].iter().product();
                    let (b, t) = (s[0], s[1]);
                    let mut dx = vec![0.0; b * t * inner];
                    let kept = (t - start) * inner;
                    for i in 0..b {
                        dx[(i * t + start) * inner..(i + 1) * t * inner].copy_from_slice(&g[i * kept..(i + 1) * kept]);
                    }
                    send(*x, dx);
                }
                Op::Reshape(x) => send(*x, g),
                Op::SwapAxes { x, a, b } => send(*x, swap_axes_data(&g, node.value.shape(), *a, *b)),
                Op::ConcatLast(xs) => {
                    let widths: Vec<usize> = xs.iter().map(|v| *self.value(*v).shape().last().unwrap()).collect();
                    let total: usize = widths.iter().sum();
                    let rows = g.len() / total.max(1);
                    let mut offset = 0;
                    for (v, &w) in xs.iter().zip(&widths) {
                        let mut part = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            part.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        send(*v, part);
                    }
                }
                Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
                Op::Mse(p, t) => {
                    let (tp, tt) = (self.value(*p), self.value(*t));
                    let k = 2.0 * g[0] / tp.numel() as f64;
                    let dp = kernels::map_binary(tp.data(), tt.data(), |a, b| k * (a - b));
                    if wants(*t) {
                        send(*t, dp.iter().map(|v| -v).collect());
                    }
                    send(*p, dp);
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}
