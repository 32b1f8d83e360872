//! Reverse-mode tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward rule. Nodes only reference earlier nodes, so a
//! reverse sweep over the node list is a valid topological order.

use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvDims, UpConvDims};
use crate::ops::dense;
use crate::ops::norm::{self, ChannelLayout, RunningStats};
use crate::ops::pool;
use crate::scalar::Scalar;
use crate::tensor::{nchw, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Backward rule for operations defined outside this crate.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Gradient for every input whose `needs` flag is set (`None` otherwise).
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &[T],
        needs: &[bool],
    ) -> Vec<Option<Vec<T>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
    },
    UpConv {
        x: Var,
        w: Var,
        b: Var,
        dims: UpConvDims,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    MaxOverSet {
        x: Var,
        argmax: Vec<u32>,
    },
    Concat {
        a: Var,
        b: Var,
        outer: usize,
        a_block: usize,
        b_block: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        layout: ChannelLayout,
        batch_stats: bool,
    },
    Softmax {
        x: Var,
        outer: usize,
        k: usize,
        inner: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Reshape(Var),
    NhwcToNchw(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward pass and replays it backwards.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant by `backward`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shape(v), g.clone()).expect("gradient matches its value"))
    }

    /// `y = x W + b` over the last axis of `x`; `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        let (Some(&fan_in), [w_in, w_out], [b_out]) = (xs.last(), ws.as_slice(), bs.as_slice()) else {
            return Err(Error::shape(
                "linear",
                format!("x {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        };
        if fan_in != *w_in || w_out != b_out {
            return Err(Error::shape(
                "linear",
                format!("x {xs:?}, weight {ws:?}, bias {bs:?}"),
            ));
        }
        let rows = self.value(x).len() / fan_in.max(1);
        let y = dense::linear_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            rows,
            fan_in,
        );
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = *w_out;
        let requires = self.tracked(&[x, w, b]);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Linear { x, w, b }, requires))
    }

    /// Zero-padded "same" convolution with an odd square kernel.
    ///
    /// `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`, `b: [cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, cin, h, wd] = nchw("conv2d", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        let [cout, w_in, k, k2] = ws[..] else {
            return Err(Error::shape("conv2d", format!("weight {ws:?}")));
        };
        if w_in != cin || k != k2 || k % 2 == 0 || self.shape(b) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("x {:?}, weight {ws:?}, bias {:?}", self.shape(x), self.shape(b)),
            ));
        }
        let dims = ConvDims {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: wd,
            kernel: k,
        };
        let y = conv::conv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let requires = self.tracked(&[x, w, b]);
        Ok(self.push(
            Tensor::new(&[n, cout, h, wd], y)?,
            Op::Conv { x, w, b, dims },
            requires,
        ))
    }

    /// 3x3 same convolution.
    pub fn conv3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.shape(w).get(2..) != Some(&[3, 3][..]) {
            return Err(Error::shape("conv3x3", format!("weight {:?}", self.shape(w))));
        }
        self.conv2d(x, w, b)
    }

    /// Stride-2 2x2 transposed convolution; `w: [cin, cout, 2, 2]`.
    pub fn upconv2x2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, cin, h, wd] = nchw("upconv2x2", self.shape(x))?;
        let ws = self.shape(w).to_vec();
        let [w_in, cout, 2, 2] = ws[..] else {
            return Err(Error::shape("upconv2x2", format!("weight {ws:?}")));
        };
        if w_in != cin || self.shape(b) != [cout] {
            return Err(Error::shape(
                "upconv2x2",
                format!("x {:?}, weight {ws:?}, bias {:?}", self.shape(x), self.shape(b)),
            ));
        }
        let dims = UpConvDims {
            batch: n,
            in_channels: cin,
            out_channels: cout,
            height: h,
            width: wd,
        };
        let y = conv::upconv_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let requires = self.tracked(&[x, w, b]);
        Ok(self.push(
            Tensor::new(&[n, cout, 2 * h, 2 * wd], y)?,
            Op::UpConv { x, w, b, dims },
            requires,
        ))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = Tensor::new(
            v.shape(),
            v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect(),
        )
        .expect("same shape");
        let requires = self.tracked(&[x]);
        self.push(y, Op::Relu(x), requires)
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = nchw("maxpool2x2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::OddSpatialDim {
                op: "maxpool2x2",
                height: h,
                width: w,
            });
        }
        let (y, argmax) = pool::maxpool2x2_forward(self.value(x).data(), n * c, h, w);
        let requires = self.tracked(&[x]);
        Ok(self.push(
            Tensor::new(&[n, c, h / 2, w / 2], y)?,
            Op::MaxPool { x, argmax },
            requires,
        ))
    }

    /// `[groups, set, features] -> [groups, features]`, max across the set axis.
    pub fn max_over_set(&mut self, x: Var) -> Result<Var> {
        let [g, s, f] = self.shape(x)[..] else {
            return Err(Error::shape(
                "max_over_set",
                format!("expected [groups, set, features], got {:?}", self.shape(x)),
            ));
        };
        if s == 0 {
            return Err(Error::shape("max_over_set", "empty set axis"));
        }
        let (y, argmax) = pool::max_over_set_forward(self.value(x).data(), g, s, f);
        let requires = self.tracked(&[x]);
        Ok(self.push(Tensor::new(&[g, f], y)?, Op::MaxOverSet { x, argmax }, requires))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let compatible = sa.len() == sb.len()
            && axis < sa.len()
            && sa.iter().zip(&sb).enumerate().all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", format!("{sa:?} and {sb:?} on axis {axis}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let a_block = sa[axis] * inner;
        let b_block = sb[axis] * inner;
        let y = dense::concat_forward(self.value(a).data(), self.value(b).data(), outer, a_block, b_block);
        let mut shape = sa;
        shape[axis] += sb[axis];
        let requires = self.tracked(&[a, b]);
        Ok(self.push(
            Tensor::new(&shape, y)?,
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            },
            requires,
        ))
    }

    /// Channel-axis concatenation of NCHW tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        nchw("concat_channels", self.shape(a))?;
        nchw("concat_channels", self.shape(b))?;
        self.concat(a, b, 1)
    }

    /// Batch normalization over axis 1 (`[n, c]` or `[n, c, ...]`).
    ///
    /// Train mode normalizes with the batch moments and folds them into
    /// `running` with `running = momentum * running + (1 - momentum) * batch`;
    /// eval mode normalizes with `running` and leaves it untouched.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        momentum: T,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape("batchnorm", format!("x {xs:?}")));
        }
        let layout = ChannelLayout {
            outer: xs[0],
            channels: xs[1],
            inner: xs[2..].iter().product(),
        };
        let c = layout.channels;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running.channels() != c {
            return Err(Error::shape(
                "batchnorm",
                format!(
                    "x {xs:?}, gamma {:?}, beta {:?}, running {}",
                    self.shape(gamma),
                    self.shape(beta),
                    running.channels()
                ),
            ));
        }
        let xv = self.value(x).data();
        let (mean, inv_std, batch_stats) = match mode {
            Mode::Train => {
                if layout.count() == 0 {
                    return Err(Error::shape("batchnorm", "empty batch in train mode"));
                }
                let (mean, var) = norm::batch_moments(xv, &layout);
                let inv_std = norm::inverse_std(&var);
                running.update(&mean, &var, momentum);
                (mean, inv_std, true)
            }
            Mode::Eval => (running.mean.clone(), norm::inverse_std(&running.var), false),
        };
        let (y, xhat) = norm::normalize(
            xv,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            &layout,
        );
        let requires = self.tracked(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(&xs, y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                batch_stats,
            },
            requires,
        ))
    }

    /// Softmax across axis 1 with per-position max subtraction.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || xs[1] == 0 {
            return Err(Error::shape("softmax_channels", format!("x {xs:?}")));
        }
        let (outer, k, inner) = (xs[0], xs[1], xs[2..].iter().product());
        let y = dense::softmax_forward(self.value(x).data(), outer, k, inner);
        let requires = self.tracked(&[x]);
        Ok(self.push(Tensor::new(&xs, y)?, Op::Softmax { x, outer, k, inner }, requires))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p + q)
            .collect();
        let shape = self.shape(a).to_vec();
        let requires = self.tracked(&[a, b]);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Add(a, b), requires))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let y: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&p, &q)| p * q)
            .collect();
        let shape = self.shape(a).to_vec();
        let requires = self.tracked(&[a, b]);
        Ok(self.push(Tensor::new(&shape, y)?, Op::Mul(a, b), requires))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let requires = self.tracked(&[x]);
        self.push(Tensor::scalar(total), Op::Sum(x), requires)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape)?;
        let requires = self.tracked(&[x]);
        Ok(self.push(y, Op::Reshape(x), requires))
    }

    pub fn nhwc_to_nchw(&mut self, x: Var) -> Result<Var> {
        let [n, h, w, c] = self.shape(x)[..] else {
            return Err(Error::shape(
                "nhwc_to_nchw",
                format!("expected NHWC, got {:?}", self.shape(x)),
            ));
        };
        let y = dense::nhwc_to_nchw(self.value(x).data(), n, h, w, c);
        let requires = self.tracked(&[x]);
        Ok(self.push(Tensor::new(&[n, c, h, w], y)?, Op::NhwcToNchw(x), requires))
    }

    /// Records an externally defined operation whose forward value was
    /// computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let requires = self.tracked(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            requires,
        )
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Populates gradients of `loss` for every tracked node it depends on.
    ///
    /// Gradients from a previous call are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g)?;
            self.grads[i] = Some(g);
            for (v, dv) in contributions {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut self.grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(dv).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn local_grads(&self, i: usize, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let fan_in = *xv.shape().last().expect("checked in forward");
                let fan_out = self.value(*b).len();
                let rows = xv.len() / fan_in.max(1);
                if self.needs(*x) {
                    out.push((
                        *x,
                        dense::linear_backward_input(g, self.value(*w).data(), rows, fan_in, fan_out),
                    ));
                }
                if self.needs(*w) {
                    out.push((
                        *w,
                        dense::linear_backward_weight(g, xv.data(), rows, fan_in, fan_out),
                    ));
                }
                if self.needs(*b) {
                    out.push((*b, dense::column_sums(g, fan_out)));
                }
            }
            Op::Conv { x, w, b, dims } => {
                let grads = conv::conv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dims,
                    self.needs(*x),
                );
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                out.push((*w, grads.weight));
                out.push((*b, grads.bias));
            }
            Op::UpConv { x, w, b, dims } => {
                let grads = conv::upconv_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dims,
                    self.needs(*x),
                );
                if let Some(dx) = grads.input {
                    out.push((*x, dx));
                }
                out.push((*w, grads.weight));
                out.push((*b, grads.bias));
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            Op::MaxPool { x, argmax } | Op::MaxOverSet { x, argmax } => {
                out.push((*x, pool::scatter_to_argmax(g, argmax, self.value(*x).len())));
            }
            Op::Concat {
                a,
                b,
                outer,
                a_block,
                b_block,
            } => {
                let (da, db) = dense::concat_backward(g, *outer, *a_block, *b_block);
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                layout,
                batch_stats,
            } => {
                let grads = norm::batchnorm_backward(
                    g,
                    xhat,
                    inv_std,
                    self.value(*gamma).data(),
                    layout,
                    *batch_stats,
                );
                out.push((*x, grads.input));
                out.push((*gamma, grads.gamma));
                out.push((*beta, grads.beta));
            }
            Op::Softmax { x, outer, k, inner } => {
                out.push((
                    *x,
                    dense::softmax_backward(node.value.data(), g, *outer, *k, *inner),
                ));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                out.push((*a, g.iter().zip(bv).map(|(&d, &q)| d * q).collect()));
                out.push((*b, g.iter().zip(av).map(|(&d, &p)| d * p).collect()));
            }
            Op::Sum(x) => {
                out.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::Reshape(x) => {
                out.push((*x, g.to_vec()));
            }
            Op::NhwcToNchw(x) => {
                let [n, h, w, c] = self.value(*x).shape()[..] else {
                    unreachable!("checked in forward")
                };
                out.push((*x, dense::nchw_to_nhwc(g, n, c, h, w)));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let grads = op.backward(&values, &node.value, g, &needs);
                for ((v, grad), need) in inputs.iter().zip(grads).zip(needs) {
                    if let (Some(grad), true) = (grad, need) {
                        if grad.len() != self.value(*v).len() {
                            return Err(Error::shape(
                                op.name(),
                                format!(
                                    "backward returned {} values for an input of {}",
                                    grad.len(),
                                    self.value(*v).len()
                                ),
                            ));
                        }
                        out.push((*v, grad));
                    }
                }
            }
        }
        Ok(out)
    }
}
