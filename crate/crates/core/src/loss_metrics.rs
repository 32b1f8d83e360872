//! Masked, weighted focal loss and intersection-over-union.

use std::fmt;

use rangeseg_autograd::{CustomOp, Scalar, Tape, Tensor, Var};

use crate::class::{Class, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Focusing parameter `gamma`.
    pub gamma: f64,
    /// `false` trains with weighted cross-entropy (gamma treated as 0).
    pub use_focal: bool,
    /// Amplitude of the label-border term.
    pub w0: f64,
    /// Fall-off of the label-border term, in pixels.
    pub sigma: f64,
    /// Per-class weights; `None` derives inverse frequencies from the data.
    pub class_weights: Option<[f64; NUM_CLASSES]>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            use_focal: true,
            w0: 10.0,
            sigma: 5.0,
            class_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights_ok = self
            .class_weights
            .is_none_or(|w| w.iter().all(|&v| v.is_finite() && v > 0.0));
        if !(self.gamma >= 0.0 && self.gamma.is_finite())
            || !(self.sigma > 0.0 && self.sigma.is_finite())
            || !(self.w0 >= 0.0 && self.w0.is_finite())
            || !weights_ok
        {
            return Err(Error::InvalidConfig(format!("loss: {self:?}")));
        }
        Ok(())
    }

    pub fn effective_gamma(&self) -> f64 {
        if self.use_focal {
            self.gamma
        } else {
            0.0
        }
    }
}

/// Inverse-frequency weights `total / (present * count)`; classes that
/// never occur get weight 1.
pub fn inverse_frequency_weights(counts: &[u64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let total: u64 = counts.iter().sum();
    let present = counts.iter().filter(|&&c| c > 0).count();
    counts.map(|c| {
        if c == 0 {
            1.0
        } else {
            total as f64 / (present as f64 * c as f64)
        }
    })
}

const FAR: f64 = 1e20;

/// Squared distance transform of a sampled function along one line
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let s = loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break s;
            }
        };
        // s <= z[0] = -inf never holds, so k stays valid
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest seed;
/// `f64::INFINITY` when there is no seed.
pub fn squared_distance_transform(seeds: &[bool], height: usize, width: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    if !seeds.iter().any(|&s| s) {
        return vec![f64::INFINITY; seeds.len()];
    }
    let n = height.max(width);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        edt_1d(&f[..height], &mut out[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for row in grid.chunks_exact_mut(width) {
        f[..width].copy_from_slice(row);
        edt_1d(&f[..width], &mut out[..width], &mut v, &mut z);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

/// Per-pixel loss weights `w(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// `w(x) = class_weights[l(x)] + w0 * exp(-dist(x)^2 / (2 sigma^2))` at valid
/// pixels, where `dist` is the distance to the nearest valid pixel carrying a
/// different label; 0 at invalid pixels.
pub fn border_weight_map(
    labels: &[u8],
    mask: &[bool],
    height: usize,
    width: usize,
    class_weights: &[f64; NUM_CLASSES],
    w0: f64,
    sigma: f64,
) -> Result<WeightMap> {
    let n = height * width;
    if labels.len() != n || mask.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels and {} mask values for a {height}x{width} map",
            labels.len(),
            mask.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::ShapeMismatch(format!("label {l} out of range")));
    }
    let mut values = vec![0.0; n];
    for class in 0..NUM_CLASSES as u8 {
        let members = (0..n).filter(|&i| mask[i] && labels[i] == class);
        let mut members = members.peekable();
        if members.peek().is_none() {
            continue;
        }
        let seeds: Vec<bool> = (0..n).map(|i| mask[i] && labels[i] != class).collect();
        let dist2 = squared_distance_transform(&seeds, height, width);
        for i in members {
            let border = if dist2[i].is_finite() {
                w0 * (-dist2[i] / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            };
            values[i] = class_weights[class as usize] + border;
        }
    }
    Ok(WeightMap { height, width, values })
}

/// Per-pixel focal term `-(1 - p)^gamma * ln p`.
pub fn focal_term(p: f64, gamma: f64) -> f64 {
    -(1.0 - p).powf(gamma) * p.ln()
}

/// Targets of a focal loss over `[B, K, H, W]` probabilities; per-pixel
/// vectors are indexed by `b * H * W + h * W + w`.
#[derive(Debug, Clone)]
pub struct FocalTargets<'a> {
    pub labels: &'a [u8],
    pub mask: &'a [bool],
    pub weights: &'a [f64],
    pub gamma: f64,
}

struct FocalLoss<T> {
    labels: Vec<u8>,
    weights: Vec<T>,
    gamma: T,
    classes: usize,
    plane: usize,
}

impl<T: Scalar> FocalLoss<T> {
    fn target(&self, pixel: usize) -> usize {
        let (b, hw) = (pixel / self.plane, pixel % self.plane);
        (b * self.classes + self.labels[pixel] as usize) * self.plane + hw
    }
}

impl<T: Scalar> CustomOp<T> for FocalLoss<T> {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad_output: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>> {
        if !needs[0] {
            return vec![None];
        }
        let probs = inputs[0].data();
        let mut grad = vec![T::zero(); probs.len()];
        let (zero, one) = (T::zero(), T::one());
        for (pixel, &w) in self.weights.iter().enumerate() {
            if w == zero {
                continue;
            }
            let at = self.target(pixel);
            let p = probs[at];
            let q = one - p;
            // d/dp of -(1-p)^g ln p = g (1-p)^(g-1) ln p - (1-p)^g / p
            let focus = if self.gamma == zero || q == zero {
                zero
            } else {
                self.gamma * q.powf(self.gamma - one) * p.ln()
            };
            grad[at] = grad_output[0] * w * (focus - q.powf(self.gamma) / p);
        }
        vec![Some(grad)]
    }
}

/// `E = sum over valid pixels of -w(x) (1 - p_l(x))^gamma ln p_l(x)`, summed, not averaged.
pub fn focal_loss<T: Scalar>(tape: &mut Tape<T>, probs: Var, targets: &FocalTargets<'_>) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let [b, k, h, w] = shape[..] else {
        return Err(Error::ShapeMismatch(format!("probabilities {shape:?}")));
    };
    let n = b * h * w;
    if targets.labels.len() != n || targets.mask.len() != n || targets.weights.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels, {} mask, {} weights for probabilities {shape:?}",
            targets.labels.len(),
            targets.mask.len(),
            targets.weights.len()
        )));
    }
    if let Some(&l) = targets.labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::ShapeMismatch(format!("label {l} with {k} classes")));
    }
    let op = FocalLoss {
        labels: targets.labels.to_vec(),
        weights: targets
            .weights
            .iter()
            .zip(targets.mask)
            .map(|(&w, &m)| if m { T::from_f64_lossy(w) } else { T::zero() })
            .collect(),
        gamma: T::from_f64_lossy(targets.gamma),
        classes: k,
        plane: h * w,
    };
    let data = tape.value(probs).data();
    let mut total = T::zero();
    for (pixel, &wt) in op.weights.iter().enumerate() {
        if wt == T::zero() {
            continue;
        }
        let p = data[op.target(pixel)];
        if !(p > T::zero()) || !p.is_finite() {
            return Err(Error::NonFiniteProbability { pixel });
        }
        total += -wt * (T::one() - p).powf(op.gamma) * p.ln();
    }
    Ok(tape.custom(&[probs], Tensor::scalar(total), Box::new(op)))
}

/// Confusion counts, indexed `[ground truth][prediction]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    /// Adds the valid pixels of one label map pair.
    pub fn add(&mut self, pred: &[u8], gt: &[u8], mask: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != mask.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} predictions, {} labels, {} mask values",
                pred.len(),
                gt.len(),
                mask.len()
            )));
        }
        for ((&p, &g), &m) in pred.iter().zip(gt).zip(mask) {
            if !m {
                continue;
            }
            if p as usize >= NUM_CLASSES || g as usize >= NUM_CLASSES {
                return Err(Error::ShapeMismatch(format!("class id {} out of range", p.max(g))));
            }
            self.counts[g as usize][p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, v) in row.iter_mut().zip(o) {
                *c += v;
            }
        }
    }

    pub fn report(&self) -> IoUReport {
        let per_class = std::array::from_fn(|l| {
            let tp = self.counts[l][l];
            let gt: u64 = self.counts[l].iter().sum();
            let pred: u64 = self.counts.iter().map(|row| row[l]).sum();
            let union = gt + pred - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        });
        let present: Vec<f64> = Class::OBJECTS
            .iter()
            .filter_map(|c| per_class[c.id() as usize])
            .collect();
        let average = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        IoUReport {
            per_class,
            average,
            confusion: *self,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoUReport {
    /// IoU per class id; `None` when the class is in neither map.
    pub per_class: [Option<f64>; NUM_CLASSES],
    /// Mean over the present object classes (background excluded).
    pub average: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl IoUReport {
    pub fn class(&self, c: Class) -> Option<f64> {
        self.per_class[c.id() as usize]
    }
}

pub fn iou(pred: &[u8], gt: &[u8], mask: &[bool]) -> Result<IoUReport> {
    let mut cm = ConfusionMatrix::default();
    cm.add(pred, gt, mask)?;
    Ok(cm.report())
}

impl fmt::Display for IoUReport {
    /// Classes as columns; absent classes print as `-`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        write!(f, "{:<6}", "")?;
        for c in Class::OBJECTS {
            write!(f, " {:>10}", c.name())?;
        }
        writeln!(f, " {:>10} {:>10}", "average", "background")?;
        write!(f, "{:<6}", "IoU")?;
        for c in Class::OBJECTS {
            write!(f, " {:>10}", cell(self.class(c)))?;
        }
        writeln!(f, " {:>10} {:>10}", cell(self.average), cell(self.class(Class::Background)))
    }
}
