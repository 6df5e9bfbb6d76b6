//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks the tape once in reverse and leaves gradients on every node that
//! requires them. A graph supports a single backward pass; call
//! [`Graph::reset`] (or build a new graph) before recording again.
//!
//! Binary ops broadcast only a one-element operand against a tensor; all
//! other shapes must match exactly.

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Pointwise kinds accepted by [`Graph::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    LeakyRelu,
    Sigmoid,
    Log,
    Clamp(f32, f32),
}

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f32),
    Relu(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    Log(Var),
    Clamp(Var, f32, f32),
    MatMul(Var, Var),
    Conv2d { input: Var, kernel: Var, geom: ConvGeom },
    AddChannelBias(Var, Var),
    SelectRow(Var, usize),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    MeanPerSample(Var),
    Concat(Vec<Var>),
    SliceChannels(Var, usize),
    Upsample(Var, usize),
    AvgPool(Var, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Log(..) => "log",
            Op::Clamp(..) => "clamp",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::SelectRow(..) => "select_row",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Mse(..) => "mse",
            Op::MeanPerSample(..) => "mean_per_sample",
            Op::Concat(..) => "concat_channels",
            Op::SliceChannels(..) => "slice_channels",
            Op::Upsample(..) => "upsample_nearest",
            Op::AvgPool(..) => "avg_pool",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    non_finite: Option<usize>,
    consumed: bool,
}

fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    let (na, nb) = (a.numel(), b.numel());
    let (shape, data): (Vec<usize>, Vec<f32>) = if a.shape() == b.shape() {
        (a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
    } else if nb == 1 {
        let y = b.data()[0];
        (a.shape().to_vec(), a.data().iter().map(|&x| f(x, y)).collect())
    } else if na == 1 {
        let x = a.data()[0];
        (b.shape().to_vec(), b.data().iter().map(|&y| f(x, y)).collect())
    } else {
        return Err(shape_err!(
            "operands {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        ));
    };
    Tensor::from_vec(&shape, data)
}

/// Reduces a gradient to the operand's shape (sums when the operand was broadcast).
fn unbroadcast(grad: Vec<f32>, operand_len: usize) -> Vec<f32> {
    if grad.len() == operand_len {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(shape_err!("{what} expects (N,C,H,W), got {s:?}")),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops the tape so the graph can record a fresh computation.
    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// First node whose value was non-finite, if any.
    pub fn non_finite_node(&self) -> Option<(usize, &'static str)> {
        self.non_finite.map(|i| (i, self.nodes[i].op.name()))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(id);
        }
        self.nodes.push(Node { value, op, requires_grad });
        Var(id)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; gradient tracking follows `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.detached(), Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    /// Records a leaf that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, true)
    }

    /// A constant copy of `v`'s current value: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f32 {
        self.nodes[v.0].value.data()[0]
    }

    /// Gradient of the last backward root with respect to `v`, if it reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let binary = matches!(kind, Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div);
        match (binary, b) {
            (true, None) => return Err(shape_err!("{kind:?} needs two operands")),
            (false, Some(_)) => return Err(shape_err!("{kind:?} takes one operand")),
            _ => {}
        }
        match kind {
            Elementwise::Add => self.add(a, b.unwrap()),
            Elementwise::Sub => self.sub(a, b.unwrap()),
            Elementwise::Mul => self.mul(a, b.unwrap()),
            Elementwise::Div => self.div(a, b.unwrap()),
            Elementwise::Relu => Ok(self.relu(a)),
            Elementwise::LeakyRelu => Ok(self.leaky_relu(a)),
            Elementwise::Sigmoid => Ok(self.sigmoid(a)),
            Elementwise::Log => Ok(self.log(a)),
            Elementwise::Clamp(lo, hi) => Ok(self.clamp(a, lo, hi)),
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        let v = broadcast_binary(&self.nodes[a.0].value, &self.nodes[b.0].value, f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let v = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.mul_scalar(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { LEAKY_SLOPE * x }, Op::LeakyRelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f32::ln, Op::Log(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => return Err(shape_err!("matmul of {sa:?} and {sb:?}")),
        };
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let v = Tensor::from_vec(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// 2-D convolution of (N,Cin,H,W) by (Cout,Cin,kh,kw), zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, w) = dims4(&self.nodes[input.0].value, "conv2d input")?;
        let (cout, kcin, kh, kw) = dims4(&self.nodes[kernel.0].value, "conv2d kernel")?;
        if kcin != cin {
            return Err(shape_err!("conv2d kernel expects {kcin} input channels, got {cin}"));
        }
        if stride == 0 {
            return Err(shape_err!("conv2d stride must be >= 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(shape_err!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let geom = ConvGeom { cin, h, w, cout, kh, kw, stride, pad };
        let (oh, ow) = geom.out_hw();
        let out = kernels::conv2d_forward(
            &geom,
            n,
            self.nodes[input.0].value.data(),
            self.nodes[kernel.0].value.data(),
        );
        let v = Tensor::from_vec(&[n, cout, oh, ow], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(v, Op::Conv2d { input, kernel, geom }, rg))
    }

    /// Adds `bias[c]` to every element of channel `c` of a (N,C,...) tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if tx.shape().len() < 2 || tb.shape() != [tx.shape()[1]] {
            return Err(shape_err!("channel bias {:?} for input {:?}", tb.shape(), tx.shape()));
        }
        let c = tx.shape()[1];
        let inner: usize = tx.shape()[2..].iter().product();
        let mut out = tx.data().to_vec();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let b = tb.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let v = Tensor::from_vec(tx.shape(), out)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(v, Op::AddChannelBias(x, bias), rg))
    }

    /// Row `row` of a 2-D table, as a 1-D tensor.
    pub fn select_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        let (r, d) = match *t.shape() {
            [r, d] => (r, d),
            ref s => return Err(shape_err!("select_row expects a 2-D table, got {s:?}")),
        };
        if row >= r {
            return Err(shape_err!("row {row} out of range for table with {r} rows"));
        }
        let v = Tensor::from_vec(&[d], t.data()[row * d..(row + 1) * d].to_vec())?;
        let rg = self.rg(table);
        Ok(self.push(v, Op::SelectRow(table, row), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].value.data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s as f32), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s as f32), Op::Mean(a), rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        super::same_shape(ta.shape(), tb.shape(), "mse")?;
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| {
                let d = (x - y) as f64;
                d * d
            })
            .sum::<f64>()
            / ta.numel() as f64;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(s as f32), Op::Mse(a, b), rg))
    }

    /// Mean over all axes but the first: (N, ...) -> (N).
    pub fn mean_per_sample(&mut self, a: Var) -> Result<Var> {
        let t = &self.nodes[a.0].value;
        if t.shape().len() < 2 {
            return Err(shape_err!("mean_per_sample expects a batch axis, got {:?}", t.shape()));
        }
        let n = t.shape()[0];
        let per = t.numel() / n;
        let out: Vec<f32> = t
            .data()
            .chunks(per)
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / per as f64) as f32)
            .collect();
        let v = Tensor::from_vec(&[n], out)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::MeanPerSample(a), rg))
    }

    /// Concatenates (N,Ci,H,W) tensors along the channel axis, in order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err!("concat of zero tensors"))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let (n, _, h, w) = dims4(&self.nodes[first.0].value, "concat_channels")?;
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pc, ph, pw) = dims4(&self.nodes[p.0].value, "concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(shape_err!(
                    "concat_channels: spatial/batch mismatch {:?} vs {:?}",
                    self.nodes[p.0].value.shape(),
                    self.nodes[first.0].value.shape()
                ));
            }
            chans.push(pc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &c) in parts.iter().zip(&chans) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let v = Tensor::from_vec(&[n, total, h, w], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start+len` of a (N,C,H,W) tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(&self.nodes[x.0].value, "slice_channels")?;
        if len == 0 || start + len > c {
            return Err(shape_err!("channel slice {start}..{} of {c} channels", start + len));
        }
        if start == 0 && len == c {
            return Ok(x);
        }
        let hw = h * w;
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let v = Tensor::from_vec(&[n, len, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::SliceChannels(x, start), rg))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (n, c, h, w) = dims4(t, "upsample_nearest")?;
        if factor == 0 {
            return Err(shape_err!("upsample factor must be >= 1"));
        }
        let v = upsample_nearest(t.data(), n * c, h, w, factor);
        let v = Tensor::from_vec(&[n, c, h * factor, w * factor], v)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Upsample(x, factor), rg))
    }

    /// Non-overlapping `factor`×`factor` average pooling.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (n, c, h, w) = dims4(t, "avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(shape_err!("avg_pool factor {factor} does not divide {h}x{w}"));
        }
        let v = avg_pool(t.data(), n * c, h, w, factor);
        let v = Tensor::from_vec(&[n, c, h / factor, w / factor], v)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::AvgPool(x, factor), rg))
    }

    /// Back-propagates from the scalar `root` to every node requiring a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this graph; reset it before recording again".into(),
            ));
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if let Some((node, op)) = self.non_finite_node() {
            return Err(Error::NonFinite { node, op: op.to_string() });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: i, op: format!("{} (gradient)", node.op.name()) });
            }
            self.propagate(i, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                if needs(a) {
                    acc(grads, a, unbroadcast(g.to_vec(), val(a).numel()));
                }
                if needs(b) {
                    acc(grads, b, unbroadcast(g.to_vec(), val(b).numel()));
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    acc(grads, a, unbroadcast(g.to_vec(), val(a).numel()));
                }
                if needs(b) {
                    acc(grads, b, unbroadcast(g.iter().map(|x| -x).collect(), val(b).numel()));
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if needs(a) {
                    let d = zip_bcast(g, tb.data(), |gi, y| gi * y);
                    acc(grads, a, unbroadcast(d, ta.numel()));
                }
                if needs(b) {
                    let d = zip_bcast(g, ta.data(), |gi, x| gi * x);
                    acc(grads, b, unbroadcast(d, tb.numel()));
                }
            }
            &Op::Div(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if needs(a) {
                    let d = zip_bcast(g, tb.data(), |gi, y| gi / y);
                    acc(grads, a, unbroadcast(d, ta.numel()));
                }
                if needs(b) {
                    // -g * out / b
                    let q = zip_bcast(g, node.value.data(), |gi, o| gi * o);
                    let d = zip_bcast(&q, tb.data(), |qi, y| -qi / y);
                    acc(grads, b, unbroadcast(d, tb.numel()));
                }
            }
            &Op::AddScalar(a) => acc(grads, a, g.to_vec()),
            &Op::MulScalar(a, s) => acc(grads, a, g.iter().map(|x| x * s).collect()),
            &Op::Relu(a) => {
                let d = g.iter().zip(val(a).data()).map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 });
                acc(grads, a, d.collect())
            }
            &Op::LeakyRelu(a) => {
                let d = g
                    .iter()
                    .zip(val(a).data())
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { LEAKY_SLOPE * gi });
                acc(grads, a, d.collect())
            }
            &Op::Sigmoid(a) => {
                let d = g.iter().zip(node.value.data()).map(|(&gi, &s)| gi * s * (1.0 - s));
                acc(grads, a, d.collect())
            }
            &Op::Log(a) => {
                let d = g.iter().zip(val(a).data()).map(|(&gi, &x)| gi / x);
                acc(grads, a, d.collect())
            }
            &Op::Clamp(a, lo, hi) => {
                let d = g
                    .iter()
                    .zip(val(a).data())
                    .map(|(&gi, &x)| if x >= lo && x <= hi { gi } else { 0.0 });
                acc(grads, a, d.collect())
            }
            &Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(a) {
                    let mut d = vec![0.0; m * k];
                    kernels::gemm(m, n, k, g, false, tb.data(), true, &mut d, 0.0);
                    acc(grads, a, d);
                }
                if needs(b) {
                    let mut d = vec![0.0; k * n];
                    kernels::gemm(k, m, n, ta.data(), true, g, false, &mut d, 0.0);
                    acc(grads, b, d);
                }
            }
            &Op::Conv2d { input, kernel, geom } => {
                let (ti, tk) = (val(input), val(kernel));
                let n = ti.shape()[0];
                let mut di = needs(input).then(|| vec![0.0; ti.numel()]);
                let mut dk = needs(kernel).then(|| vec![0.0; tk.numel()]);
                kernels::conv2d_backward(
                    &geom,
                    n,
                    ti.data(),
                    tk.data(),
                    g,
                    di.as_deref_mut(),
                    dk.as_deref_mut(),
                );
                if let Some(d) = di {
                    acc(grads, input, d);
                }
                if let Some(d) = dk {
                    acc(grads, kernel, d);
                }
            }
            &Op::AddChannelBias(x, bias) => {
                if needs(bias) {
                    let tx = val(x);
                    let c = tx.shape()[1];
                    let inner: usize = tx.shape()[2..].iter().product();
                    let mut d = vec![0.0; c];
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        d[j % c] += chunk.iter().sum::<f32>();
                    }
                    acc(grads, bias, d);
                }
                if needs(x) {
                    acc(grads, x, g.to_vec());
                }
            }
            &Op::SelectRow(table, row) => {
                let t = val(table);
                let d_len = t.shape()[1];
                let mut d = vec![0.0; t.numel()];
                d[row * d_len..(row + 1) * d_len].copy_from_slice(g);
                acc(grads, table, d);
            }
            &Op::Sum(a) => acc(grads, a, vec![g[0]; val(a).numel()]),
            &Op::Mean(a) => {
                let n = val(a).numel();
                acc(grads, a, vec![g[0] / n as f32; n])
            }
            &Op::Mse(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let scale = 2.0 * g[0] / ta.numel() as f32;
                let d: Vec<f32> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| scale * (x - y)).collect();
                if needs(b) {
                    acc(grads, b, d.iter().map(|v| -v).collect());
                }
                if needs(a) {
                    acc(grads, a, d);
                }
            }
            &Op::MeanPerSample(a) => {
                let t = val(a);
                let per = t.numel() / t.shape()[0];
                let mut d = Vec::with_capacity(t.numel());
                for &gi in g {
                    d.extend(std::iter::repeat(gi / per as f32).take(per));
                }
                acc(grads, a, d)
            }
            Op::Concat(parts) => {
                let shape = node.value.shape();
                let (n, total, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).shape()[1];
                    if needs(p) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * total + offset) * hw;
                            d.extend_from_slice(&g[start..start + c * hw]);
                        }
                        acc(grads, p, d);
                    }
                    offset += c;
                }
            }
            &Op::SliceChannels(x, start) => {
                let t = val(x);
                let (n, c, hw) = (t.shape()[0], t.shape()[1], t.shape()[2] * t.shape()[3]);
                let len = node.value.shape()[1];
                let mut d = vec![0.0; t.numel()];
                for b in 0..n {
                    d[(b * c + start) * hw..(b * c + start + len) * hw]
                        .copy_from_slice(&g[b * len * hw..(b + 1) * len * hw]);
                }
                acc(grads, x, d);
            }
            &Op::Upsample(x, f) => {
                let s = val(x).shape();
                let d = avg_pool(g, s[0] * s[1], s[2] * f, s[3] * f, f);
                let scale = (f * f) as f32;
                acc(grads, x, d.into_iter().map(|v| v * scale).collect());
            }
            &Op::AvgPool(x, f) => {
                let s = node.value.shape();
                let d = upsample_nearest(g, s[0] * s[1], s[2], s[3], f);
                let scale = 1.0 / (f * f) as f32;
                acc(grads, x, d.into_iter().map(|v| v * scale).collect());
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f32>>], v: Var, d: Vec<f32>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(d),
    }
}

fn zip_bcast(g: &[f32], other: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    if other.len() == g.len() {
        g.iter().zip(other).map(|(&a, &b)| f(a, b)).collect()
    } else if other.len() == 1 {
        g.iter().map(|&a| f(a, other[0])).collect()
    } else {
        // `g` was broadcast from a scalar output slot; only reachable with g.len()==1
        other.iter().map(|&b| f(g[0], b)).collect()
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn upsample_nearest(src: &[f32], planes: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            let row = &s[(y / f) * w..(y / f + 1) * w];
            for x in 0..ow {
                o[y * ow + x] = row[x / f];
            }
        }
    }
    out
}

pub(crate) fn avg_pool(src: &[f32], planes: usize, h: usize, w: usize, f: usize) -> Vec<f32> {
    let (oh, ow) = (h / f, w / f);
    let inv = 1.0 / (f * f) as f32;
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let s = &src[p * h * w..(p + 1) * h * w];
        let o = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                o[(y / f) * ow + x / f] += s[y * w + x];
            }
        }
        o.iter_mut().for_each(|v| *v *= inv);
    }
    out
}
