//! Parameter bookkeeping shared by the extractor and the U-Net.

use rand::Rng;
use rangeseg_autograd::{he_uniform, Bound, Mode, ParamId, ParamStore, RunningStats, Scalar, Tape, Tensor, Var};

use crate::error::Result;

/// Running batch-norm statistics with the name they are checkpointed under.
pub type NamedStats<T> = (String, RunningStats<T>);

/// Registers parameters and batch-norm statistics while a network is built.
pub(crate) struct Builder<'a, T, R: ?Sized> {
    pub params: &'a mut ParamStore<T>,
    pub stats: &'a mut Vec<NamedStats<T>>,
    pub rng: &'a mut R,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct UpConv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
    stats: usize,
}

impl<T: Scalar, R: Rng + ?Sized> Builder<'_, T, R> {
    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Dense> {
        let w = he_uniform(&[fan_in, fan_out], fan_in, self.rng);
        Ok(Dense {
            w: self.params.add(format!("{name}.weight"), w)?,
            b: self.params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<Conv> {
        let w = he_uniform(&[cout, cin, k, k], cin * k * k, self.rng);
        Ok(Conv {
            w: self.params.add(format!("{name}.weight"), w)?,
            b: self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    pub fn upconv(&mut self, name: &str, cin: usize, cout: usize) -> Result<UpConv> {
        // every output pixel sees one tap per input channel
        let w = he_uniform(&[cin, cout, 2, 2], cin, self.rng);
        Ok(UpConv {
            w: self.params.add(format!("{name}.weight"), w)?,
            b: self.params.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?,
        })
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> Result<Norm> {
        let gamma = self.params.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()))?;
        let beta = self.params.add(format!("{name}.beta"), Tensor::zeros(&[channels]))?;
        self.stats.push((name.to_string(), RunningStats::new(channels)));
        Ok(Norm {
            gamma,
            beta,
            stats: self.stats.len() - 1,
        })
    }
}

/// One forward pass: the tape, bound parameters and batch-norm state.
pub struct Pass<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub bound: &'a Bound,
    pub stats: &'a mut [NamedStats<T>],
    pub momentum: T,
    pub mode: Mode,
}

impl<T: Scalar> Pass<'_, T> {
    pub(crate) fn dense(&mut self, layer: &Dense, x: Var) -> Result<Var> {
        let (w, b) = (self.bound.var(layer.w), self.bound.var(layer.b));
        Ok(self.tape.linear(x, w, b)?)
    }

    pub(crate) fn conv(&mut self, layer: &Conv, x: Var) -> Result<Var> {
        let (w, b) = (self.bound.var(layer.w), self.bound.var(layer.b));
        Ok(self.tape.conv2d(x, w, b)?)
    }

    pub(crate) fn upconv(&mut self, layer: &UpConv, x: Var) -> Result<Var> {
        let (w, b) = (self.bound.var(layer.w), self.bound.var(layer.b));
        Ok(self.tape.upconv2x2(x, w, b)?)
    }

    pub(crate) fn norm(&mut self, layer: &Norm, x: Var) -> Result<Var> {
        let (g, b) = (self.bound.var(layer.gamma), self.bound.var(layer.beta));
        let running = &mut self.stats[layer.stats].1;
        Ok(self.tape.batchnorm(x, g, b, running, self.momentum, self.mode)?)
    }
}
