use crate::scalar::Scalar;

/// 2x2 stride-2 max-pool over `[planes, h, w]` (h and w even).
///
/// Returns the pooled values and, per output cell, the flat input index of
/// the winner. Ties go to the first cell in row-major order.
pub fn maxpool2x2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best_at = base + 2 * i * w + 2 * j;
                let mut best = x[best_at];
                for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                    let at = base + (2 * i + a) * w + 2 * j + b;
                    if x[at] > best {
                        best = x[at];
                        best_at = at;
                    }
                }
                y.push(best);
                argmax.push(best_at as u32);
            }
        }
    }
    (y, argmax)
}

/// Routes each output gradient to its recorded winner.
pub fn scatter_to_argmax<T: Scalar>(dy: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &at) in dy.iter().zip(argmax) {
        dx[at as usize] += g;
    }
    dx
}

/// Element-wise max across the set axis of `[groups, set, features]`.
pub fn max_over_set_forward<T: Scalar>(
    x: &[T],
    groups: usize,
    set: usize,
    features: usize,
) -> (Vec<T>, Vec<u32>) {
    let mut y = Vec::with_capacity(groups * features);
    let mut argmax = Vec::with_capacity(groups * features);
    for g in 0..groups {
        let base = g * set * features;
        for f in 0..features {
            let mut best_at = base + f;
            let mut best = x[best_at];
            for s in 1..set {
                let at = base + s * features + f;
                if x[at] > best {
                    best = x[at];
                    best_at = at;
                }
            }
            y.push(best);
            argmax.push(best_at as u32);
        }
    }
    (y, argmax)
}
