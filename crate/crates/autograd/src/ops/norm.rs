use crate::scalar::Scalar;

pub const BATCH_NORM_EPS: f64 = 1e-5;

/// Running mean and (biased) variance of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update(&mut self, batch_mean: &[T], batch_var: &[T], momentum: T) {
        let keep = T::one() - momentum;
        for (r, &b) in self.mean.iter_mut().zip(batch_mean) {
            *r = momentum * *r + keep * b;
        }
        for (r, &b) in self.var.iter_mut().zip(batch_var) {
            *r = momentum * *r + keep * b;
        }
    }
}

/// Channel layout `[outer, channels, inner]`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelLayout {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

impl ChannelLayout {
    pub fn count(&self) -> usize {
        self.outer * self.inner
    }

    fn channel_of(&self, flat: usize) -> usize {
        (flat / self.inner) % self.channels
    }
}

/// Per-channel mean and biased variance, two passes in memory order.
pub fn batch_moments<T: Scalar>(x: &[T], l: &ChannelLayout) -> (Vec<T>, Vec<T>) {
    let mut mean = vec![T::zero(); l.channels];
    for (i, &v) in x.iter().enumerate() {
        mean[l.channel_of(i)] += v;
    }
    let count = T::from_usize(l.count()).expect("count fits in a float");
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![T::zero(); l.channels];
    for (i, &v) in x.iter().enumerate() {
        let c = l.channel_of(i);
        let dev = v - mean[c];
        var[c] += dev * dev;
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

pub fn inverse_std<T: Scalar>(var: &[T]) -> Vec<T> {
    let eps = T::from_f64_lossy(BATCH_NORM_EPS);
    var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
}

/// Returns `(y, xhat)` for the given centring statistics.
pub fn normalize<T: Scalar>(
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    l: &ChannelLayout,
) -> (Vec<T>, Vec<T>) {
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    for (i, &v) in x.iter().enumerate() {
        let c = l.channel_of(i);
        let h = (v - mean[c]) * inv_std[c];
        xhat.push(h);
        y.push(gamma[c] * h + beta[c]);
    }
    (y, xhat)
}

pub struct NormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Backward pass. With `batch_stats` the mean and variance are functions of
/// the input; otherwise they are constants (eval mode).
pub fn batchnorm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    l: &ChannelLayout,
    batch_stats: bool,
) -> NormGrads<T> {
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    for (i, (&g, &h)) in dy.iter().zip(xhat).enumerate() {
        let c = l.channel_of(i);
        dgamma[c] += g * h;
        dbeta[c] += g;
    }
    let input = if batch_stats {
        // dxhat = dy * gamma, so its channel sums follow from dbeta / dgamma.
        let count = T::from_usize(l.count()).expect("count fits in a float");
        dy.iter()
            .zip(xhat)
            .enumerate()
            .map(|(i, (&g, &h))| {
                let c = l.channel_of(i);
                gamma[c] * inv_std[c] / count * (count * g - dbeta[c] - h * dgamma[c])
            })
            .collect()
    } else {
        dy.iter()
            .enumerate()
            .map(|(i, &g)| {
                let c = l.channel_of(i);
                g * gamma[c] * inv_std[c]
            })
            .collect()
    };
    NormGrads {
        input,
        gamma: dgamma,
        beta: dbeta,
    }
}
