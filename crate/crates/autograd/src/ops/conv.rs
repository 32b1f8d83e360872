//! Zero-padded "same" convolutions and the stride-2 transposed convolution.
//!
//! Both lower to one matrix product per image. Weight gradients are computed
//! per image and then summed in image order, so the result does not depend
//! on how rayon schedules the images.

use rayon::prelude::*;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Odd kernel side; padding is `kernel / 2` on every border.
    pub kernel: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Unfolds one `[c, h, w]` image into `[c * k * k, h * w]` columns.
fn im2col<T: Scalar>(x: &[T], d: &ConvDims, col: &mut [T]) {
    let (h, w, k) = (d.height, d.width, d.kernel);
    let pad = k / 2;
    let plane = d.plane();
    for c in 0..d.in_channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut col[((c * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in dst.iter_mut().enumerate() {
                        let ix = ox as isize + kx as isize - pad as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
fn col2im<T: Scalar>(col: &[T], d: &ConvDims, dx: &mut [T]) {
    let (h, w, k) = (d.height, d.width, d.kernel);
    let pad = k / 2;
    let plane = d.plane();
    for c in 0..d.in_channels {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = &col[((c * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..w {
                        let ix = ox as isize + kx as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += row[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `x: [n, cin, h, w]`, `weight: [cout, cin, k, k]`, `bias: [cout]`.
pub fn conv_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], d: &ConvDims) -> Vec<T> {
    let plane = d.plane();
    let in_len = d.in_channels * plane;
    let out_len = d.out_channels * plane;
    let mut y = vec![T::zero(); d.batch * out_len];
    if out_len == 0 {
        return y;
    }
    y.par_chunks_mut(out_len).enumerate().for_each(|(n, out)| {
        for (co, row) in out.chunks_exact_mut(plane).enumerate() {
            row.fill(bias[co]);
        }
        let image = &x[n * in_len..(n + 1) * in_len];
        let product = |col: &[T], out: &mut [T]| {
            T::gemm(
                d.out_channels,
                d.patch(),
                plane,
                T::one(),
                weight,
                d.patch(),
                1,
                col,
                plane,
                1,
                T::one(),
                out,
                plane,
                1,
            )
        };
        if d.kernel == 1 {
            product(image, out);
        } else {
            let mut col = vec![T::zero(); d.patch() * plane];
            im2col(image, d, &mut col);
            product(&col, out);
        }
    });
    y
}

pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &ConvDims,
    need_input: bool,
) -> ConvGrads<T> {
    let plane = d.plane();
    let in_len = d.in_channels * plane;
    let out_len = d.out_channels * plane;
    let wlen = d.out_channels * d.patch();

    let per_image: Vec<(Vec<T>, Option<Vec<T>>)> = (0..d.batch)
        .into_par_iter()
        .map(|n| {
            let image = &x[n * in_len..(n + 1) * in_len];
            let g = &dy[n * out_len..(n + 1) * out_len];
            let owned;
            let col: &[T] = if d.kernel == 1 {
                image
            } else {
                let mut buf = vec![T::zero(); d.patch() * plane];
                im2col(image, d, &mut buf);
                owned = buf;
                &owned
            };
            let mut dw = vec![T::zero(); wlen];
            T::gemm(
                d.out_channels,
                plane,
                d.patch(),
                T::one(),
                g,
                plane,
                1,
                col,
                1,
                plane,
                T::zero(),
                &mut dw,
                d.patch(),
                1,
            );
            let dx = need_input.then(|| {
                let mut dcol = vec![T::zero(); d.patch() * plane];
                T::gemm(
                    d.patch(),
                    d.out_channels,
                    plane,
                    T::one(),
                    weight,
                    1,
                    d.patch(),
                    g,
                    plane,
                    1,
                    T::zero(),
                    &mut dcol,
                    plane,
                    1,
                );
                if d.kernel == 1 {
                    dcol
                } else {
                    let mut dx = vec![T::zero(); in_len];
                    col2im(&dcol, d, &mut dx);
                    dx
                }
            });
            (dw, dx)
        })
        .collect();

    let mut weight_grad = vec![T::zero(); wlen];
    let mut input = need_input.then(|| Vec::with_capacity(d.batch * in_len));
    for (dw, dx) in per_image {
        for (acc, v) in weight_grad.iter_mut().zip(dw) {
            *acc += v;
        }
        if let (Some(all), Some(dx)) = (input.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
    }
    ConvGrads {
        input,
        weight: weight_grad,
        bias: channel_sums(dy, d.batch, d.out_channels, plane),
    }
}

/// Per-channel sums of an `[n, c, plane]` tensor in (n, c, position) order.
pub fn channel_sums<T: Scalar>(dy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let start = (n * channels + c) * plane;
            for &v in &dy[start..start + plane] {
                *o += v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct UpConvDims {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Input (pre-upsampling) height and width.
    pub height: usize,
    pub width: usize,
}

/// Stride-2 2x2 transposed convolution.
///
/// `x: [n, cin, h, w]`, `weight: [cin, cout, 2, 2]`, `bias: [cout]`, output
/// `[n, cout, 2h, 2w]` with `y[co, 2i+a, 2j+b] = sum_ci x[ci, i, j] * weight[ci, co, a, b] + bias[co]`.
pub fn upconv_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T], d: &UpConvDims) -> Vec<T> {
    let (h, w) = (d.height, d.width);
    let plane = h * w;
    let in_len = d.in_channels * plane;
    let out_len = d.out_channels * plane * 4;
    let taps = d.out_channels * 4;
    let mut y = vec![T::zero(); d.batch * out_len];
    if out_len == 0 {
        return y;
    }
    y.par_chunks_mut(out_len).enumerate().for_each(|(n, out)| {
        let image = &x[n * in_len..(n + 1) * in_len];
        let mut spread = vec![T::zero(); taps * plane];
        T::gemm(
            taps,
            d.in_channels,
            plane,
            T::one(),
            weight,
            1,
            taps,
            image,
            plane,
            1,
            T::zero(),
            &mut spread,
            plane,
            1,
        );
        let ow = 2 * w;
        for co in 0..d.out_channels {
            let dst = &mut out[co * 4 * plane..(co + 1) * 4 * plane];
            for tap in 0..4 {
                let (a, b) = (tap / 2, tap % 2);
                let src = &spread[(co * 4 + tap) * plane..][..plane];
                for i in 0..h {
                    for j in 0..w {
                        dst[(2 * i + a) * ow + 2 * j + b] = src[i * w + j] + bias[co];
                    }
                }
            }
        }
    });
    y
}

pub fn upconv_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    d: &UpConvDims,
    need_input: bool,
) -> ConvGrads<T> {
    let (h, w) = (d.height, d.width);
    let plane = h * w;
    let in_len = d.in_channels * plane;
    let out_len = d.out_channels * plane * 4;
    let taps = d.out_channels * 4;

    let per_image: Vec<(Vec<T>, Option<Vec<T>>)> = (0..d.batch)
        .into_par_iter()
        .map(|n| {
            let image = &x[n * in_len..(n + 1) * in_len];
            let g = &dy[n * out_len..(n + 1) * out_len];
            let ow = 2 * w;
            let mut gathered = vec![T::zero(); taps * plane];
            for co in 0..d.out_channels {
                let src = &g[co * 4 * plane..(co + 1) * 4 * plane];
                for tap in 0..4 {
                    let (a, b) = (tap / 2, tap % 2);
                    let dst = &mut gathered[(co * 4 + tap) * plane..][..plane];
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = src[(2 * i + a) * ow + 2 * j + b];
                        }
                    }
                }
            }
            let mut dw = vec![T::zero(); d.in_channels * taps];
            T::gemm(
                d.in_channels,
                plane,
                taps,
                T::one(),
                image,
                plane,
                1,
                &gathered,
                1,
                plane,
                T::zero(),
                &mut dw,
                taps,
                1,
            );
            let dx = need_input.then(|| {
                let mut dx = vec![T::zero(); in_len];
                T::gemm(
                    d.in_channels,
                    taps,
                    plane,
                    T::one(),
                    weight,
                    taps,
                    1,
                    &gathered,
                    plane,
                    1,
                    T::zero(),
                    &mut dx,
                    plane,
                    1,
                );
                dx
            });
            (dw, dx)
        })
        .collect();

    let mut weight_grad = vec![T::zero(); d.in_channels * taps];
    let mut input = need_input.then(|| Vec::with_capacity(d.batch * in_len));
    for (dw, dx) in per_image {
        for (acc, v) in weight_grad.iter_mut().zip(dw) {
            *acc += v;
        }
        if let (Some(all), Some(dx)) = (input.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
    }
    ConvGrads {
        input,
        weight: weight_grad,
        bias: channel_sums(dy, d.batch, d.out_channels, plane * 4),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        let d = ConvDims {
            batch: 1,
            in_channels: 2,
            out_channels: 1,
            height: 3,
            width: 4,
            kernel: 3,
        };
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.37).sin()).collect();
        let c: Vec<f64> = (0..18 * 12).map(|v| (v as f64 * 0.11).cos()).collect();
        let mut col = vec![0.0; 18 * 12];
        im2col(&x, &d, &mut col);
        let mut back = vec![0.0; 24];
        col2im(&c, &d, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
