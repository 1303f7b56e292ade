//! Reverse-mode tape.
//!
//! Every primitive application appends one node holding its forward value.
//! Leaves are either constants or tracked parameters; a node is tracked when
//! any of its inputs is. [`Tape::backward`] walks the nodes once in reverse
//! recording order, which is a valid reverse topological order because inputs
//! always precede their consumers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// The primitive catalog. Attributes travel inside the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Scale(f64),
    MatMul,
    Transpose,
    Exp,
    Log,
    Sigmoid,
    Relu,
    /// Softmax over the last axis of each row.
    Softmax,
    L2Normalize,
    /// Zero-mean, unit-variance rows (no affine part), epsilon 1e-5.
    LayerNorm,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    /// Mean over windows of `stride` frames along axis 0, ignoring frames whose
    /// mask entry is false. The last window may be shorter than `stride`.
    MaskedMeanPool { stride: usize, mask: Vec<bool> },
    /// Endpoint-aligned linear interpolation along axis 0 to `len` rows.
    Upsample { len: usize },
    /// Multi-head scaled dot-product attention over inputs `(q, k, v)`.
    Attention { heads: usize },
    /// Inverted dropout; identity when `train` is false.
    Dropout { rate: f64, seed: u64, train: bool },
    Mean { axis: Option<usize> },
    Sum { axis: Option<usize> },
    /// Clamp into `[lo, hi]`; gradient passes only inside the interval.
    Clamp { lo: f64, hi: f64 },
}

/// Attribute value for [`Tape::apply_named`].
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Mask(Vec<bool>),
}

pub type Attrs = BTreeMap<String, AttrValue>;

impl Primitive {
    pub const NAMES: [&'static str; 22] = [
        "add",
        "subtract",
        "multiply",
        "scale",
        "matmul",
        "transpose",
        "exp",
        "log",
        "sigmoid",
        "relu",
        "row_softmax",
        "row_l2_normalize",
        "row_layer_norm",
        "concat",
        "slice",
        "masked_mean_pool_1d",
        "linear_interp_upsample_1d",
        "scaled_dot_attention",
        "dropout",
        "mean",
        "sum",
        "clamp",
    ];

    pub fn name(&self) -> &'static str {
        use Primitive::*;
        match self {
            Add => "add",
            Sub => "subtract",
            Mul => "multiply",
            Scale(_) => "scale",
            MatMul => "matmul",
            Transpose => "transpose",
            Exp => "exp",
            Log => "log",
            Sigmoid => "sigmoid",
            Relu => "relu",
            Softmax => "row_softmax",
            L2Normalize => "row_l2_normalize",
            LayerNorm => "row_layer_norm",
            Concat { .. } => "concat",
            Slice { .. } => "slice",
            MaskedMeanPool { .. } => "masked_mean_pool_1d",
            Upsample { .. } => "linear_interp_upsample_1d",
            Attention { .. } => "scaled_dot_attention",
            Dropout { .. } => "dropout",
            Mean { .. } => "mean",
            Sum { .. } => "sum",
            Clamp { .. } => "clamp",
        }
    }

    /// Builds a primitive from its catalog name and an attribute map.
    pub fn from_name(name: &str, attrs: &Attrs) -> Result<Self> {
        let bad = |a: &str| Error::BadAttribute { primitive: name.to_string(), name: a.to_string() };
        let int = |a: &str| match attrs.get(a) {
            Some(AttrValue::Int(v)) if *v >= 0 => Ok(*v as usize),
            _ => Err(bad(a)),
        };
        let float = |a: &str| match attrs.get(a) {
            Some(AttrValue::Float(v)) => Ok(*v),
            Some(AttrValue::Int(v)) => Ok(*v as f64),
            _ => Err(bad(a)),
        };
        let opt_axis = || match attrs.get("axis") {
            None => Ok(None),
            Some(AttrValue::Int(v)) if *v >= 0 => Ok(Some(*v as usize)),
            _ => Err(bad("axis")),
        };
        use Primitive::*;
        Ok(match name {
            "add" => Add,
            "subtract" => Sub,
            "multiply" => Mul,
            "scale" => Scale(float("factor")?),
            "matmul" => MatMul,
            "transpose" => Transpose,
            "exp" => Exp,
            "log" => Log,
            "sigmoid" => Sigmoid,
            "relu" => Relu,
            "row_softmax" => Softmax,
            "row_l2_normalize" => L2Normalize,
            "row_layer_norm" => LayerNorm,
            "concat" => Concat { axis: int("axis")? },
            "slice" => Slice { axis: int("axis")?, start: int("start")?, len: int("len")? },
            "masked_mean_pool_1d" => {
                let mask = match attrs.get("mask") {
                    Some(AttrValue::Mask(m)) => m.clone(),
                    _ => return Err(bad("mask")),
                };
                MaskedMeanPool { stride: int("stride")?, mask }
            }
            "linear_interp_upsample_1d" => Upsample { len: int("len")? },
            "scaled_dot_attention" => Attention { heads: int("heads")? },
            "dropout" => {
                let train = match attrs.get("train") {
                    Some(AttrValue::Bool(b)) => *b,
                    _ => return Err(bad("train")),
                };
                Dropout { rate: float("rate")?, seed: int("seed")? as u64, train }
            }
            "mean" => Mean { axis: opt_axis()? },
            "sum" => Sum { axis: opt_axis()? },
            "clamp" => Clamp { lo: float("lo")?, hi: float("hi")? },
            other => return Err(Error::UnknownPrimitive(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Bcast {
    Same,
    Scalar,
    Row,
}

#[derive(Debug)]
enum Saved {
    None,
    Bcast(Bcast),
    /// Dense linear operator applied along axis 0 (rows × input rows).
    Operator(Vec<f64>, usize, usize),
    /// Per-row scalars (norms or inverse standard deviations).
    RowScalars(Vec<f64>),
    /// Attention probabilities, one T×T block per head.
    Heads(Vec<Vec<f64>>),
    Mask(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    prim: Option<Primitive>,
    inputs: Vec<usize>,
    tracked: bool,
    saved: Saved,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Untracked input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    /// Gradient-tracked leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        self.nodes.push(Node { value, prim: None, inputs: vec![], tracked, saved: Saved::None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Applies a primitive by catalog name.
    pub fn apply_named(&mut self, kind: &str, inputs: &[Var], attrs: &Attrs) -> Result<Var> {
        let prim = Primitive::from_name(kind, attrs)?;
        self.apply(prim, inputs)
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(Error::NotOnTape(v.0));
            }
        }
        let arity = match prim {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::MatMul => 2,
            Primitive::Attention { .. } => 3,
            Primitive::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::shape(
                "apply",
                format!("{} takes {arity} inputs, got {}", prim.name(), inputs.len()),
            ));
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&prim, &vals)?;
        if !value.all_finite() {
            return Err(Error::NonFinite { op: prim.name() });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            prim: Some(prim),
            inputs: inputs.iter().map(|v| v.0).collect(),
            tracked,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self.nodes.get(loss.0).ok_or(Error::NotOnTape(loss.0))?;
        if node.value.numel() != 1 {
            return Err(Error::NotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(prim) = &node.prim {
                if node.tracked {
                    let ins: Vec<&Tensor> =
                        node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
                    let gin = backward(prim, &ins, &node.value, &node.saved, &g);
                    for (&i, gi) in node.inputs.iter().zip(gin) {
                        if !self.nodes[i].tracked {
                            continue;
                        }
                        match &mut grads[i] {
                            Some(acc) => acc.add_assign(&gi),
                            slot @ None => *slot = Some(gi),
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::L2Normalize, &[a])
    }
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::LayerNorm, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(Primitive::Concat { axis }, parts)
    }
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, len }, &[a])
    }
    pub fn masked_mean_pool(&mut self, a: Var, stride: usize, mask: &[bool]) -> Result<Var> {
        self.apply(Primitive::MaskedMeanPool { stride, mask: mask.to_vec() }, &[a])
    }
    pub fn upsample(&mut self, a: Var, len: usize) -> Result<Var> {
        self.apply(Primitive::Upsample { len }, &[a])
    }
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.apply(Primitive::Attention { heads }, &[q, k, v])
    }
    pub fn dropout(&mut self, a: Var, rate: f64, seed: u64, train: bool) -> Result<Var> {
        self.apply(Primitive::Dropout { rate, seed, train }, &[a])
    }
    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Primitive::Mean { axis }, &[a])
    }
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        self.apply(Primitive::Sum { axis }, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.apply(Primitive::Clamp { lo, hi }, &[a])
    }
}

fn bcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.numel() == 1 {
        Ok(Bcast::Scalar)
    } else if a.shape().len() == 2 && b.numel() == a.shape()[1] && b.shape().len() <= 2 {
        Ok(Bcast::Row)
    } else {
        Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

fn bval(b: &Tensor, kind: Bcast, i: usize, cols: usize) -> f64 {
    match kind {
        Bcast::Same => b.data()[i],
        Bcast::Scalar => b.data()[0],
        Bcast::Row => b.data()[i % cols],
    }
}

/// Sum a full-shape gradient down to the broadcast operand's shape.
fn reduce_bcast(g: &[f64], kind: Bcast, b: &Tensor, cols: usize) -> Tensor {
    match kind {
        Bcast::Same => Tensor::new(b.shape().to_vec(), g.to_vec()).unwrap(),
        Bcast::Scalar => Tensor::new(b.shape().to_vec(), vec![g.iter().sum()]).unwrap(),
        Bcast::Row => {
            let mut out = vec![0.0; cols];
            for (i, v) in g.iter().enumerate() {
                out[i % cols] += v;
            }
            Tensor::new(b.shape().to_vec(), out).unwrap()
        }
    }
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

/// Pooling operator (L×T) for masked mean pooling with a possibly short last window.
pub(crate) fn pool_operator(t: usize, stride: usize, mask: &[bool]) -> Vec<f64> {
    let l = t.div_ceil(stride);
    let mut w = vec![0.0; l * t];
    let mut filled = vec![false; l];
    for win in 0..l {
        let lo = win * stride;
        let hi = (lo + stride).min(t);
        let valid: Vec<usize> = (lo..hi).filter(|&f| mask[f]).collect();
        if !valid.is_empty() {
            let inv = 1.0 / valid.len() as f64;
            for f in valid {
                w[win * t + f] = inv;
            }
            filled[win] = true;
        }
    }
    // Empty windows copy the nearest filled window to the left, or to the right
    // when no window on the left has a valid frame.
    for win in 0..l {
        if filled[win] {
            continue;
        }
        let src = (0..win).rev().find(|&s| filled[s]).or_else(|| (win + 1..l).find(|&s| filled[s]));
        if let Some(s) = src {
            let (row_src, row_dst) = (s * t, win * t);
            for f in 0..t {
                w[row_dst + f] = w[row_src + f];
            }
        }
    }
    w
}

/// Endpoint-aligned linear interpolation operator (T×L).
pub(crate) fn upsample_operator(l: usize, t: usize) -> Vec<f64> {
    let mut u = vec![0.0; t * l];
    for i in 0..t {
        if l == 1 {
            u[i] = 1.0;
            continue;
        }
        let pos = if t == 1 { 0.0 } else { i as f64 * (l - 1) as f64 / (t - 1) as f64 };
        let lo = (pos.floor() as usize).min(l - 1);
        let hi = (lo + 1).min(l - 1);
        let frac = pos - lo as f64;
        u[i * l + lo] += 1.0 - frac;
        if hi != lo {
            u[i * l + hi] += frac;
        }
    }
    u
}

/// Applies an operator whose non-empty rows are convex weights, written as
/// `x_ref + Σ w_f (x_f - x_ref)` so that constant inputs come back bit-exact.
fn apply_convex_rows(w: &[f64], x: &[f64], rows: usize, t: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * c];
    for r in 0..rows {
        let wr = &w[r * t..(r + 1) * t];
        let Some(anchor) = wr.iter().position(|&v| v != 0.0) else { continue };
        let xa = &x[anchor * c..(anchor + 1) * c];
        let o = &mut out[r * c..(r + 1) * c];
        o.copy_from_slice(xa);
        for (f, &wf) in wr.iter().enumerate().skip(anchor + 1) {
            if wf == 0.0 {
                continue;
            }
            for ((ov, xv), av) in o.iter_mut().zip(&x[f * c..(f + 1) * c]).zip(xa) {
                *ov += wf * (xv - av);
            }
        }
    }
    out
}

const LN_EPS: f64 = 1e-5;

fn forward(prim: &Primitive, x: &[&Tensor]) -> Result<(Tensor, Saved)> {
    use Primitive::*;
    let op = prim.name();
    Ok(match prim {
        Add | Sub | Mul => {
            let (a, b) = (x[0], x[1]);
            let kind = bcast_kind(op, a, b)?;
            let cols = last_dim(a);
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &av)| {
                    let bv = bval(b, kind, i, cols);
                    match prim {
                        Add => av + bv,
                        Sub => av - bv,
                        _ => av * bv,
                    }
                })
                .collect();
            (Tensor::new(a.shape().to_vec(), data)?, Saved::Bcast(kind))
        }
        Scale(c) => (x[0].map(|v| v * c), Saved::None),
        MatMul => {
            let (m, k) = x[0].dims2()?;
            let (k2, n) = x[1].dims2()?;
            if x[0].shape().len() != 2 || x[1].shape().len() != 2 || k != k2 {
                return Err(Error::shape(op, format!("{:?} · {:?}", x[0].shape(), x[1].shape())));
            }
            (Tensor::matrix(m, n, matmul_raw(x[0].data(), x[1].data(), m, k, n))?, Saved::None)
        }
        Transpose => {
            let (m, n) = x[0].dims2()?;
            (Tensor::matrix(n, m, transpose_raw(x[0].data(), m, n))?, Saved::None)
        }
        Exp => (x[0].map(f64::exp), Saved::None),
        Log => {
            if x[0].data().iter().any(|&v| v <= 0.0) {
                return Err(Error::NonPositiveLog { op });
            }
            (x[0].map(f64::ln), Saved::None)
        }
        Sigmoid => (x[0].map(sigmoid), Saved::None),
        Relu => (x[0].map(|v| v.max(0.0)), Saved::None),
        Softmax => {
            let c = last_dim(x[0]);
            let mut out = x[0].data().to_vec();
            for row in out.chunks_mut(c) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            (Tensor::new(x[0].shape().to_vec(), out)?, Saved::None)
        }
        L2Normalize => {
            let c = last_dim(x[0]);
            let mut out = x[0].data().to_vec();
            let mut norms = Vec::with_capacity(out.len() / c.max(1));
            for (r, row) in out.chunks_mut(c).enumerate() {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::ZeroNorm { op, row: r });
                }
                row.iter_mut().for_each(|v| *v /= n);
                norms.push(n);
            }
            (Tensor::new(x[0].shape().to_vec(), out)?, Saved::RowScalars(norms))
        }
        LayerNorm => {
            let c = last_dim(x[0]);
            let mut out = x[0].data().to_vec();
            let mut inv = Vec::new();
            for row in out.chunks_mut(c) {
                let mu = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + LN_EPS).sqrt();
                row.iter_mut().for_each(|v| *v = (*v - mu) * is);
                inv.push(is);
            }
            (Tensor::new(x[0].shape().to_vec(), out)?, Saved::RowScalars(inv))
        }
        Concat { axis } => {
            let dims: Vec<(usize, usize)> = x.iter().map(|t| t.dims2()).collect::<Result<_>>()?;
            match axis {
                0 => {
                    let c = dims[0].1;
                    if dims.iter().any(|d| d.1 != c) {
                        return Err(Error::shape(op, "column counts differ"));
                    }
                    let rows: usize = dims.iter().map(|d| d.0).sum();
                    let data: Vec<f64> = x.iter().flat_map(|t| t.data().iter().copied()).collect();
                    (Tensor::matrix(rows, c, data)?, Saved::None)
                }
                1 => {
                    let r = dims[0].0;
                    if dims.iter().any(|d| d.0 != r) {
                        return Err(Error::shape(op, "row counts differ"));
                    }
                    let cols: usize = dims.iter().map(|d| d.1).sum();
                    let mut data = Vec::with_capacity(r * cols);
                    for i in 0..r {
                        for (t, d) in x.iter().zip(&dims) {
                            data.extend_from_slice(&t.data()[i * d.1..(i + 1) * d.1]);
                        }
                    }
                    (Tensor::matrix(r, cols, data)?, Saved::None)
                }
                _ => return Err(Error::shape(op, format!("axis {axis} unsupported"))),
            }
        }
        Slice { axis, start, len } => {
            let (r, c) = x[0].dims2()?;
            let src = x[0].data();
            match axis {
                0 if start + len <= r => {
                    let data = src[start * c..(start + len) * c].to_vec();
                    (Tensor::matrix(*len, c, data)?, Saved::None)
                }
                1 if start + len <= c => {
                    let mut data = Vec::with_capacity(r * len);
                    for i in 0..r {
                        data.extend_from_slice(&src[i * c + start..i * c + start + len]);
                    }
                    (Tensor::matrix(r, *len, data)?, Saved::None)
                }
                _ => {
                    return Err(Error::shape(
                        op,
                        format!("axis {axis} [{start}, {}) out of {:?}", start + len, x[0].shape()),
                    ))
                }
            }
        }
        MaskedMeanPool { stride, mask } => {
            let (t, c) = x[0].dims2()?;
            if *stride == 0 {
                return Err(Error::shape(op, "stride must be positive"));
            }
            if t < *stride {
                return Err(Error::SequenceTooShort { len: t, stride: *stride });
            }
            if mask.len() != t {
                return Err(Error::shape(op, format!("mask length {} vs {t} frames", mask.len())));
            }
            let l = t.div_ceil(*stride);
            let w = pool_operator(t, *stride, mask);
            let out = apply_convex_rows(&w, x[0].data(), l, t, c);
            (Tensor::matrix(l, c, out)?, Saved::Operator(w, l, t))
        }
        Upsample { len } => {
            let (l, c) = x[0].dims2()?;
            if l == 0 || *len == 0 {
                return Err(Error::shape(op, "empty sequence"));
            }
            let u = upsample_operator(l, *len);
            let out = apply_convex_rows(&u, x[0].data(), *len, l, c);
            (Tensor::matrix(*len, c, out)?, Saved::Operator(u, *len, l))
        }
        Attention { heads } => {
            let (tq, d) = x[0].dims2()?;
            let (tk, dk) = x[1].dims2()?;
            let (tv, dv) = x[2].dims2()?;
            if dk != d || dv != d || tv != tk || *heads == 0 || d % heads != 0 {
                return Err(Error::shape(op, format!("q {tq}×{d}, k {tk}×{dk}, v {tv}×{dv}, heads {heads}")));
            }
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut out = vec![0.0; tq * d];
            let mut probs = Vec::with_capacity(*heads);
            let (q, k, v) = (x[0].data(), x[1].data(), x[2].data());
            for h in 0..*heads {
                let off = h * dh;
                let mut a = vec![0.0; tq * tk];
                for i in 0..tq {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let row = &mut a[i * tk..(i + 1) * tk];
                    for (j, s) in row.iter_mut().enumerate() {
                        let kj = &k[j * d + off..j * d + off + dh];
                        *s = qi.iter().zip(kj).map(|(p, r)| p * r).sum::<f64>() * scale;
                    }
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for s in row.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    row.iter_mut().for_each(|s| *s /= z);
                    for (j, &p) in row.iter().enumerate() {
                        let vj = &v[j * d + off..j * d + off + dh];
                        let orow = &mut out[i * d + off..i * d + off + dh];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o += p * vv;
                        }
                    }
                }
                probs.push(a);
            }
            (Tensor::matrix(tq, d, out)?, Saved::Heads(probs))
        }
        Dropout { rate, seed, train } => {
            if !(0.0..1.0).contains(rate) {
                return Err(Error::BadAttribute { primitive: op.into(), name: "rate".into() });
            }
            if !*train || *rate == 0.0 {
                (x[0].clone(), Saved::Mask(vec![1.0; x[0].numel()]))
            } else {
                let keep = 1.0 - rate;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mask: Vec<f64> = (0..x[0].numel())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let data = x[0].data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Tensor::new(x[0].shape().to_vec(), data)?, Saved::Mask(mask))
            }
        }
        Mean { axis } | Sum { axis } => {
            let is_mean = matches!(prim, Mean { .. });
            match axis {
                None => {
                    let s: f64 = x[0].data().iter().sum();
                    let n = x[0].numel().max(1) as f64;
                    (Tensor::scalar(if is_mean { s / n } else { s }), Saved::None)
                }
                Some(ax) => {
                    let (r, c) = x[0].dims2()?;
                    let d = x[0].data();
                    match ax {
                        0 => {
                            let mut out = vec![0.0; c];
                            for i in 0..r {
                                for j in 0..c {
                                    out[j] += d[i * c + j];
                                }
                            }
                            if is_mean {
                                out.iter_mut().for_each(|v| *v /= r as f64);
                            }
                            (Tensor::matrix(1, c, out)?, Saved::None)
                        }
                        1 => {
                            let mut out: Vec<f64> =
                                d.chunks(c).map(|row| row.iter().sum::<f64>()).collect();
                            if is_mean {
                                out.iter_mut().for_each(|v| *v /= c as f64);
                            }
                            (Tensor::matrix(r, 1, out)?, Saved::None)
                        }
                        _ => return Err(Error::shape(op, format!("axis {ax} unsupported"))),
                    }
                }
            }
        }
        Clamp { lo, hi } => (x[0].map(|v| v.clamp(*lo, *hi)), Saved::None),
    })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn backward(prim: &Primitive, x: &[&Tensor], y: &Tensor, saved: &Saved, g: &Tensor) -> Vec<Tensor> {
    use Primitive::*;
    let like = |t: &Tensor, data: Vec<f64>| Tensor::new(t.shape().to_vec(), data).unwrap();
    let gd = g.data();
    match prim {
        Add | Sub | Mul => {
            let (a, b) = (x[0], x[1]);
            let Saved::Bcast(kind) = *saved else { unreachable!() };
            let cols = last_dim(a);
            match prim {
                Add => vec![like(a, gd.to_vec()), reduce_bcast(gd, kind, b, cols)],
                Sub => {
                    let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                    vec![like(a, gd.to_vec()), reduce_bcast(&neg, kind, b, cols)]
                }
                _ => {
                    let ga = gd.iter().enumerate().map(|(i, gv)| gv * bval(b, kind, i, cols)).collect();
                    let gb_full: Vec<f64> = gd.iter().zip(a.data()).map(|(gv, av)| gv * av).collect();
                    vec![like(a, ga), reduce_bcast(&gb_full, kind, b, cols)]
                }
            }
        }
        Scale(c) => vec![g.map(|v| v * c)],
        MatMul => {
            let (m, k) = x[0].dims2().unwrap();
            let (_, n) = x[1].dims2().unwrap();
            let ga = matmul_nt(gd, x[1].data(), m, n, k);
            let gb = matmul_tn(x[0].data(), gd, m, k, n);
            vec![like(x[0], ga), like(x[1], gb)]
        }
        Transpose => {
            let (m, n) = x[0].dims2().unwrap();
            vec![like(x[0], transpose_raw(gd, n, m))]
        }
        Exp => vec![like(x[0], gd.iter().zip(y.data()).map(|(g, y)| g * y).collect())],
        Log => vec![like(x[0], gd.iter().zip(x[0].data()).map(|(g, x)| g / x).collect())],
        Sigmoid => vec![like(x[0], gd.iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect())],
        Relu => vec![like(
            x[0],
            gd.iter().zip(x[0].data()).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect(),
        )],
        Softmax => {
            let c = last_dim(y);
            let mut out = vec![0.0; y.numel()];
            for ((o, yr), gr) in out.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = yv * (gv - dot);
                }
            }
            vec![like(x[0], out)]
        }
        L2Normalize => {
            let Saved::RowScalars(norms) = saved else { unreachable!() };
            let c = last_dim(y);
            let mut out = vec![0.0; y.numel()];
            for (r, ((o, yr), gr)) in out.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)).enumerate() {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = (gv - yv * dot) / norms[r];
                }
            }
            vec![like(x[0], out)]
        }
        LayerNorm => {
            let Saved::RowScalars(inv) = saved else { unreachable!() };
            let c = last_dim(y);
            let cf = c as f64;
            let mut out = vec![0.0; y.numel()];
            for (r, ((o, yr), gr)) in out.chunks_mut(c).zip(y.data().chunks(c)).zip(gd.chunks(c)).enumerate() {
                let gm: f64 = gr.iter().sum::<f64>() / cf;
                let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cf;
                for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                    *ov = inv[r] * (gv - gm - yv * gy);
                }
            }
            vec![like(x[0], out)]
        }
        Concat { axis } => {
            let mut res = Vec::with_capacity(x.len());
            let (r, total) = y.dims2().unwrap();
            match axis {
                0 => {
                    let mut off = 0;
                    for t in x {
                        let n = t.numel();
                        res.push(like(t, gd[off..off + n].to_vec()));
                        off += n;
                    }
                }
                _ => {
                    let mut col = 0;
                    for t in x {
                        let (_, c) = t.dims2().unwrap();
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&gd[i * total + col..i * total + col + c]);
                        }
                        res.push(like(t, data));
                        col += c;
                    }
                }
            }
            res
        }
        Slice { axis, start, len } => {
            let (r, c) = x[0].dims2().unwrap();
            let mut out = vec![0.0; r * c];
            if *axis == 0 {
                out[start * c..(start + len) * c].copy_from_slice(gd);
            } else {
                for i in 0..r {
                    out[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
            }
            vec![like(x[0], out)]
        }
        MaskedMeanPool { .. } | Upsample { .. } => {
            let Saved::Operator(w, rows, inner) = saved else { unreachable!() };
            let (_, c) = x[0].dims2().unwrap();
            vec![like(x[0], matmul_tn(w, gd, *rows, *inner, c))]
        }
        Attention { heads } => {
            let Saved::Heads(probs) = saved else { unreachable!() };
            let (tq, d) = x[0].dims2().unwrap();
            let (tk, _) = x[1].dims2().unwrap();
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let (q, k, v) = (x[0].data(), x[1].data(), x[2].data());
            let (mut gq, mut gk, mut gv) = (vec![0.0; tq * d], vec![0.0; tk * d], vec![0.0; tk * d]);
            for (h, a) in probs.iter().enumerate() {
                let off = h * dh;
                for i in 0..tq {
                    let go = &gd[i * d + off..i * d + off + dh];
                    let arow = &a[i * tk..(i + 1) * tk];
                    // dA_ij = go_i · v_j
                    let da: Vec<f64> = (0..tk)
                        .map(|j| go.iter().zip(&v[j * d + off..j * d + off + dh]).map(|(p, r)| p * r).sum())
                        .collect();
                    let dot: f64 = da.iter().zip(arow).map(|(p, r)| p * r).sum();
                    for j in 0..tk {
                        let p = arow[j];
                        for c in 0..dh {
                            gv[j * d + off + c] += p * go[c];
                        }
                        let ds = p * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c in 0..dh {
                            gq[i * d + off + c] += ds * k[j * d + off + c];
                            gk[j * d + off + c] += ds * q[i * d + off + c];
                        }
                    }
                }
            }
            vec![like(x[0], gq), like(x[1], gk), like(x[2], gv)]
        }
        Dropout { .. } => {
            let Saved::Mask(m) = saved else { unreachable!() };
            vec![like(x[0], gd.iter().zip(m).map(|(g, m)| g * m).collect())]
        }
        Mean { axis } | Sum { axis } => {
            let is_mean = matches!(prim, Mean { .. });
            match axis {
                None => {
                    let n = x[0].numel().max(1) as f64;
                    let v = if is_mean { gd[0] / n } else { gd[0] };
                    vec![Tensor::full(x[0].shape(), v)]
                }
                Some(ax) => {
                    let (r, c) = x[0].dims2().unwrap();
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[i * c + j] = if *ax == 0 {
                                if is_mean { gd[j] / r as f64 } else { gd[j] }
                            } else if is_mean {
                                gd[i] / c as f64
                            } else {
                                gd[i]
                            };
                        }
                    }
                    vec![like(x[0], out)]
                }
            }
        }
        Clamp { lo, hi } => vec![like(
            x[0],
            gd.iter()
                .zip(x[0].data())
                .map(|(g, &v)| if v >= *lo && v <= *hi { *g } else { 0.0 })
                .collect(),
        )],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut tape = Tape::new();
        let x = tape.constant(row(&[3.0, 4.0]));
        let y = tape.l2_normalize(x).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(row(&[0.0, 0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pooling_constant_sequence() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[12, 3], 2.5));
        let p = tape.masked_mean_pool(x, 4, &[true; 12]).unwrap();
        assert_eq!(tape.value(p).shape(), &[3, 3]);
        assert!(tape.value(p).data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn pooling_short_last_window_and_masks() {
        // T=7, stride 3 -> windows [0,3), [3,6), [6,7).
        let data: Vec<f64> = (0..7).map(|v| v as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(7, 1, data).unwrap());
        let p = tape.masked_mean_pool(x, 3, &[true, false, true, false, false, false, true]).unwrap();
        // window 0: mean(0, 2) = 1; window 1: no valid frame, copies window 0; window 2: 6
        assert_eq!(tape.value(p).data(), &[1.0, 1.0, 6.0]);
    }

    #[test]
    fn pooling_rejects_short_sequences() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(
            tape.masked_mean_pool(x, 4, &[true; 3]),
            Err(Error::SequenceTooShort { len: 3, stride: 4 })
        ));
    }

    #[test]
    fn upsample_is_endpoint_aligned() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 1, vec![0.0, 1.0, 4.0]).unwrap());
        let u = tape.upsample(x, 5).unwrap();
        assert_eq!(tape.value(u).data(), &[0.0, 0.5, 1.0, 2.5, 4.0]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x, None).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn backward_of_square_sum() {
        let mut tape = Tape::new();
        let x = tape.param(row(&[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq, None).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(tape.log(a), Err(Error::NonPositiveLog { .. })));
        assert!(matches!(tape.l2_normalize(a), Err(Error::ZeroNorm { .. })));
        assert!(matches!(tape.apply_named("conv2d", &[a], &Attrs::new()), Err(Error::UnknownPrimitive(_))));
        assert!(matches!(tape.backward(a), Err(Error::NotScalar(_))));
        assert!(matches!(tape.backward(Var(99)), Err(Error::NotOnTape(99))));
        let big = tape.constant(row(&[1000.0]));
        assert!(matches!(tape.exp(big), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn named_application_matches_direct() {
        let mut tape = Tape::new();
        let a = tape.constant(row(&[1.0, 2.0, 3.0]));
        let mut attrs = Attrs::new();
        attrs.insert("factor".into(), AttrValue::Float(2.0));
        let s = tape.apply_named("scale", &[a], &attrs).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 4.0, 6.0]);
        for name in Primitive::NAMES {
            // Every catalog name is recognised, even if attributes are missing.
            if let Err(Error::UnknownPrimitive(_)) = Primitive::from_name(name, &Attrs::new()) { panic!("{name} not recognised") }
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_is_inverted() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[50, 40], 1.0));
        let e = tape.dropout(a, 0.1, 7, false).unwrap();
        assert_eq!(tape.value(e), tape.value(a));
        let t = tape.dropout(a, 0.1, 7, true).unwrap();
        let vals = tape.value(t).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(row(&[1.0, 2.0]));
        let p = tape.param(row(&[3.0, 4.0]));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m, None).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 2.0]);
    }
}
