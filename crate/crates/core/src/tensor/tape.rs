use super::{conv_backward, conv_forward, gated_activation, sigmoid, sum, ConvKernel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Tape handles for one convolution layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
    pub k: usize,
    pub dilation: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        weight: Var,
        bias: Var,
        k: usize,
        dilation: usize,
    },
    Gated(Var),
    Relu(Var),
    /// Fixed per-channel `x * scale + shift`.
    ChannelAffine {
        x: Var,
        scale: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation in execution order for reverse-mode
/// differentiation. Values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for values that do not require a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv_params(&mut self, kernel: &ConvKernel) -> ConvVars {
        ConvVars {
            weight: self.param(kernel.weight.clone()),
            bias: self.param(kernel.bias.clone()),
            k: kernel.k,
            dilation: kernel.dilation,
        }
    }

    pub fn conv1d(&mut self, x: Var, kernel: ConvVars) -> Result<Var> {
        let value = conv_forward(
            self.value(x),
            self.value(kernel.weight),
            self.value(kernel.bias),
            kernel.k,
            kernel.dilation,
        )?;
        let op = Op::Conv {
            x,
            weight: kernel.weight,
            bias: kernel.bias,
            k: kernel.k,
            dilation: kernel.dilation,
        };
        Ok(self.push_op(value, op, &[x, kernel.weight, kernel.bias]))
    }

    pub fn gated(&mut self, x: Var) -> Result<Var> {
        let value = gated_activation(self.value(x))?;
        Ok(self.push_op(value, Op::Gated(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = super::relu(self.value(x));
        self.push_op(value, Op::Relu(x), &[x])
    }

    pub fn channel_affine(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let src = self.value(x);
        if scale.len() != src.channels() || shift.len() != src.channels() {
            return Err(Error::Shape(format!(
                "channel affine for {} channels given {} scales and {} shifts",
                src.channels(),
                scale.len(),
                shift.len()
            )));
        }
        let mut value = src.clone();
        for c in 0..value.channels() {
            let (a, b) = (scale[c], shift[c]);
            value.row_mut(c).iter_mut().for_each(|v| *v = *v * a + b);
        }
        let op = Op::ChannelAffine {
            x,
            scale: scale.to_vec(),
        };
        Ok(self.push_op(value, op, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values(a, b, "add", |x, y| x + y)?;
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values(a, b, "sub", |x, y| x - y)?;
        Ok(self.push_op(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(sum(self.value(x).data()));
        self.push_op(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let value = Tensor::scalar(sum(src.data()) / src.data().len() as f64);
        self.push_op(value, Op::Mean(x), &[x])
    }

    /// Mean squared error between two equally shaped values.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        Ok(self.mean(sq))
    }

    /// Reverse pass from a scalar. Gradients of shared inputs accumulate
    /// additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Shape("backward on an empty tape".into()));
        }
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            let (c, t) = root.value.shape();
            return Err(Error::Shape(format!("backward needs a scalar loss, got [{c} x {t}]")));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Conv {
                    x,
                    weight,
                    bias,
                    k,
                    dilation,
                } => {
                    let mut gx = self.zeros_if_needed(*x, &mut grads);
                    let mut gw = self.zeros_if_needed(*weight, &mut grads);
                    let mut gb = self.zeros_if_needed(*bias, &mut grads);
                    conv_backward(
                        self.value(*x),
                        self.value(*weight),
                        *k,
                        *dilation,
                        &g,
                        gx.as_mut(),
                        gw.as_mut(),
                        gb.as_mut(),
                    );
                    restore(&mut grads, *x, gx);
                    restore(&mut grads, *weight, gw);
                    restore(&mut grads, *bias, gb);
                }
                Op::Gated(x) => {
                    if let Some(mut gx) = self.zeros_if_needed(*x, &mut grads) {
                        let input = self.value(*x).data();
                        let n = g.data().len();
                        let (filter, gate) = input.split_at(n);
                        let (gf, gg) = gx.data_mut().split_at_mut(n);
                        for i in 0..n {
                            let th = filter[i].tanh();
                            let sg = sigmoid(gate[i]);
                            gf[i] += g.data()[i] * sg * (1.0 - th * th);
                            gg[i] += g.data()[i] * th * sg * (1.0 - sg);
                        }
                        restore(&mut grads, *x, Some(gx));
                    }
                }
                Op::Relu(x) => {
                    if let Some(mut gx) = self.zeros_if_needed(*x, &mut grads) {
                        let input = self.value(*x).data();
                        for ((acc, &gi), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(input) {
                            if xi > 0.0 {
                                *acc += gi;
                            }
                        }
                        restore(&mut grads, *x, Some(gx));
                    }
                }
                Op::ChannelAffine { x, scale } => {
                    if let Some(mut gx) = self.zeros_if_needed(*x, &mut grads) {
                        for (c, &a) in scale.iter().enumerate() {
                            super::axpy(gx.row_mut(c), a, g.row(c));
                        }
                        restore(&mut grads, *x, Some(gx));
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    self.accumulate(&mut grads, *a, |acc| super::axpy(acc, 1.0, g.data()));
                    self.accumulate(&mut grads, *b, |acc| super::axpy(acc, sign, g.data()));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    self.accumulate(&mut grads, *a, |acc| {
                        for i in 0..acc.len() {
                            acc[i] += g.data()[i] * vb[i];
                        }
                    });
                    self.accumulate(&mut grads, *b, |acc| {
                        for i in 0..acc.len() {
                            acc[i] += g.data()[i] * va[i];
                        }
                    });
                }
                Op::Sum(x) => {
                    let gv = g.data()[0];
                    self.accumulate(&mut grads, *x, |acc| acc.iter_mut().for_each(|v| *v += gv));
                }
                Op::Mean(x) => {
                    let gv = g.data()[0] / self.value(*x).data().len() as f64;
                    self.accumulate(&mut grads, *x, |acc| acc.iter_mut().for_each(|v| *v += gv));
                }
            }
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        // only leaves that asked for a gradient keep one
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    fn zip_values(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.channels(), ta.len(), data)
    }

    /// Takes the pending gradient buffer of `v` (allocating zeros) if `v`
    /// participates in differentiation.
    fn zeros_if_needed(&self, v: Var, grads: &mut [Option<Tensor>]) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].take().unwrap_or_else(|| {
            let (c, t) = node.value.shape();
            Tensor::zeros(c, t)
        }))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if let Some(mut acc) = self.zeros_if_needed(v, grads) {
            f(acc.data_mut());
            grads[v.0] = Some(acc);
        }
    }
}

fn restore(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    if g.is_some() {
        grads[v.0] = g;
    }
}
