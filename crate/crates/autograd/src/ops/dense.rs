use crate::scalar::Scalar;

/// `y[m, out] = x[m, in] * w[in, out] + b[out]`.
pub fn linear_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], rows: usize, fan_in: usize) -> Vec<T> {
    let fan_out = b.len();
    let mut y = Vec::with_capacity(rows * fan_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    T::gemm(
        rows, fan_in, fan_out, T::one(), x, fan_in, 1, w, fan_out, 1, T::one(), &mut y, fan_out, 1,
    );
    y
}

pub fn linear_backward_input<T: Scalar>(
    dy: &[T],
    w: &[T],
    rows: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * fan_in];
    T::gemm(
        rows, fan_out, fan_in, T::one(), dy, fan_out, 1, w, 1, fan_out, T::zero(), &mut dx, fan_in, 1,
    );
    dx
}

pub fn linear_backward_weight<T: Scalar>(
    dy: &[T],
    x: &[T],
    rows: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<T> {
    let mut dw = vec![T::zero(); fan_in * fan_out];
    T::gemm(
        fan_in, rows, fan_out, T::one(), x, 1, fan_in, dy, fan_out, 1, T::zero(), &mut dw, fan_out, 1,
    );
    dw
}

/// Column sums of a `rows x cols` matrix, accumulated row by row.
pub fn column_sums<T: Scalar>(dy: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for row in dy.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Softmax over the middle axis of an `[outer, k, inner]` layout.
pub fn softmax_forward<T: Scalar>(x: &[T], outer: usize, k: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let mut max = T::neg_infinity();
            for c in 0..k {
                max = max.max(x[base + c * inner + i]);
            }
            let mut total = T::zero();
            for c in 0..k {
                let e = (x[base + c * inner + i] - max).exp();
                y[base + c * inner + i] = e;
                total += e;
            }
            for c in 0..k {
                y[base + c * inner + i] /= total;
            }
        }
    }
    y
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], outer: usize, k: usize, inner: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let mut dot = T::zero();
            for c in 0..k {
                let at = base + c * inner + i;
                dot += dy[at] * y[at];
            }
            for c in 0..k {
                let at = base + c * inner + i;
                dx[at] = y[at] * (dy[at] - dot);
            }
        }
    }
    dx
}

/// Concatenates blocks of `a_block` and `b_block` values for each of `outer` rows.
pub fn concat_forward<T: Scalar>(a: &[T], b: &[T], outer: usize, a_block: usize, b_block: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        out.extend_from_slice(&a[o * a_block..(o + 1) * a_block]);
        out.extend_from_slice(&b[o * b_block..(o + 1) * b_block]);
    }
    out
}

pub fn concat_backward<T: Scalar>(dy: &[T], outer: usize, a_block: usize, b_block: usize) -> (Vec<T>, Vec<T>) {
    let mut da = Vec::with_capacity(outer * a_block);
    let mut db = Vec::with_capacity(outer * b_block);
    if a_block + b_block == 0 {
        return (da, db);
    }
    for row in dy.chunks_exact(a_block + b_block) {
        da.extend_from_slice(&row[..a_block]);
        db.extend_from_slice(&row[a_block..]);
    }
    (da, db)
}

/// `[n, h, w, c]` to `[n, c, h, w]`.
pub fn nhwc_to_nchw<T: Scalar>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for p in 0..plane {
            for ch in 0..c {
                out[(b * c + ch) * plane + p] = x[(b * plane + p) * c + ch];
            }
        }
    }
    out
}

pub fn nchw_to_nhwc<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let plane = h * w;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for p in 0..plane {
                out[(b * plane + p) * c + ch] = x[(b * c + ch) * plane + p];
            }
        }
    }
    out
}
