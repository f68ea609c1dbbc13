use std::sync::Arc;

use super::ops::{self, BnCache, BnMode, BnStats};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvUp {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        cache: BnCache,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Gram(Var),
    Preprocess(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Reshape(Var),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of tensor operations supporting one reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every gradient-requiring leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn grad(&self, v: Var) -> &Tensor {
        self.get(v).expect("no gradient recorded for this variable")
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `b` broadcasts against `a` when its shape is a suffix of `a`'s.
fn broadcast_ok(a: &Tensor, b: &Tensor) -> bool {
    let (sa, sb) = (a.shape(), b.shape());
    sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let bl = b.len();
    let mut out = Vec::with_capacity(a.len());
    for chunk in a.data().chunks_exact(bl) {
        out.extend(chunk.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
    }
    out
}

/// Sums a full-size gradient down to the broadcast operand's shape.
fn reduce_to(g: &[f64], shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    for chunk in g.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("variable {} is not on this tape", v.0)));
        }
        Ok(())
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a differentiable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a shared leaf without copying its data.
    pub fn shared(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.push_shared(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }, rg))
    }

    pub fn conv2d_fractional(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = ops::conv2d_fractional(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.rg(&[b]));
        Ok(self.push(out, Op::ConvUp { x, w, b }, rg))
    }

    pub fn batch_norm(&mut self, x: Var, scale: Var, shift: Var, mode: BnMode, stats: &mut BnStats) -> Result<Var> {
        for v in [x, scale, shift] {
            self.check(v)?;
        }
        let (out, cache) = ops::batch_norm(self.value(x), self.value(scale), self.value(shift), mode, stats)?;
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(out, Op::BatchNorm { x, scale, shift, cache }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (out, argmax) = ops::max_pool2(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaxPool { x, argmax }, rg))
    }

    /// Per-item Gram matrices, `[N, H, W, C]` → `[N, C, C]`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = ops::gram(self.value(x))?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Gram(x), rg))
    }

    /// Single-channel map → three channels of `255·x − offset[c]`.
    pub fn preprocess(&mut self, x: Var, offsets: [f64; 3]) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (n, h, w, c) = xv.nhwc()?;
        if c != 1 {
            return Err(Error::shape("preprocess", format!("expected one channel, got {c}")));
        }
        let mut data = Vec::with_capacity(xv.len() * 3);
        for &v in xv.data() {
            for off in offsets {
                data.push(255.0 * v - off);
            }
        }
        let shape = if xv.shape().len() == 3 { vec![h, w, 3] } else { vec![n, h, w, 3] };
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Preprocess(x), rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if !broadcast_ok(av, bv) {
            return Err(Error::shape(
                name,
                format!("cannot broadcast {:?} against {:?}", bv.shape(), av.shape()),
            ));
        }
        Ok(Tensor {
            shape: av.shape.clone(),
            data: zip_broadcast(av, bv, f),
        })
    }

    /// `a + b`, with `b` broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| v * c).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let out = Tensor {
            shape: xv.shape.clone(),
            data: xv.data.iter().map(|v| v * v).collect(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Square(x), rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Reverse sweep from a scalar `loss`. Every gradient-requiring leaf gets an entry,
    /// zero-filled when it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be a scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: lv.shape.clone(),
            data: vec![1.0],
        });
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(node, g, &mut grads)?;
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[idx].is_none() {
                    grads[idx] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, pad } => {
                let (dx, dw, db) = ops::conv2d_backward(
                    self.value(x),
                    self.value(w),
                    &g,
                    stride,
                    pad,
                    self.wants(x),
                    self.wants(w),
                )?;
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, w, dw);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    accumulate(grads, b, db.reshape(self.value(b).shape())?);
                }
            }
            Op::ConvUp { x, w, b } => {
                let (dx, dw, db) =
                    ops::conv2d_fractional_backward(self.value(x), self.value(w), &g, self.wants(x), self.wants(w))?;
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, w, dw);
                }
                if let Some(b) = b.filter(|&b| self.wants(b)) {
                    accumulate(grads, b, db.reshape(self.value(b).shape())?);
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                ref cache,
            } => {
                let (dx, dscale, dshift) = ops::batch_norm_backward(self.value(scale), cache, &g);
                if self.wants(x) {
                    accumulate(grads, x, Tensor::new(self.value(x).shape().to_vec(), dx)?);
                }
                if self.wants(scale) {
                    accumulate(grads, scale, Tensor::new(self.value(scale).shape().to_vec(), dscale)?);
                }
                if self.wants(shift) {
                    accumulate(grads, shift, Tensor::new(self.value(shift).shape().to_vec(), dshift)?);
                }
            }
            Op::Relu(x) => {
                let data = g
                    .data
                    .iter()
                    .zip(node.value.data())
                    .map(|(&d, &y)| if y > 0.0 { d } else { 0.0 })
                    .collect();
                accumulate(grads, x, Tensor { shape: g.shape, data });
            }
            Op::MaxPool { x, ref argmax } => {
                let mut dx = Tensor::zeros(self.value(x).shape());
                for (&src, d) in argmax.iter().zip(&g.data) {
                    dx.data[src] += d;
                }
                accumulate(grads, x, dx);
            }
            Op::Gram(x) => accumulate(grads, x, ops::gram_backward(self.value(x), &g)?),
            Op::Preprocess(x) => {
                let data = g.data.chunks_exact(3).map(|c| 255.0 * (c[0] + c[1] + c[2])).collect();
                accumulate(grads, x, Tensor::new(self.value(x).shape().to_vec(), data)?);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.wants(b) {
                    let mut db = reduce_to(&g.data, self.value(b).shape());
                    if sign < 0.0 {
                        db.data.iter_mut().for_each(|v| *v = -*v);
                    }
                    accumulate(grads, b, db);
                }
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(b) {
                    let prod: Vec<f64> = g.data.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, b, reduce_to(&prod, bv.shape()));
                }
                if self.wants(a) {
                    let g_t = Tensor { shape: g.shape, data: g.data };
                    let data = zip_broadcast(&g_t, bv, |x, y| x * y);
                    accumulate(grads, a, Tensor { shape: g_t.shape, data });
                }
            }
            Op::Scale(x, c) => {
                let data = g.data.iter().map(|v| v * c).collect();
                accumulate(grads, x, Tensor { shape: g.shape, data });
            }
            Op::Square(x) => {
                let data = g.data.iter().zip(self.value(x).data()).map(|(d, v)| 2.0 * d * v).collect();
                accumulate(grads, x, Tensor { shape: g.shape, data });
            }
            Op::Sum(x) => {
                let xv = self.value(x);
                accumulate(grads, x, Tensor::full(xv.shape(), g.data[0]));
            }
            Op::Reshape(x) => {
                accumulate(grads, x, g.reshape(self.value(x).shape())?);
            }
        }
        Ok(())
    }
}
