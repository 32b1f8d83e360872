use rangeseg_autograd::{
    AdamConfig, AdamState, Error, Mode, ParamStore, RunningStats, Tape, Tensor,
};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn linear_identity_weight_returns_input() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]));
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let w = tape.constant(t(&[3, 3], &eye));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
}

#[test]
fn linear_one_by_one() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1], &[2.0]));
    let w = tape.constant(t(&[1, 1], &[3.0]));
    let b = tape.constant(t(&[1], &[1.0]));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[7.0]);
}

#[test]
fn linear_rejects_inner_dimension_mismatch() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let w = tape.constant(Tensor::zeros(&[4, 2]));
    let b = tape.constant(Tensor::zeros(&[2]));
    assert!(matches!(tape.linear(x, w, b), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn conv3x3_identity_center_kernel() {
    let mut tape = Tape::new();
    let img: Vec<f64> = (0..20).map(|v| v as f64 * 0.5 - 3.0).collect();
    let x = tape.constant(t(&[1, 1, 4, 5], &img));
    let mut k = vec![0.0; 9];
    k[4] = 1.0;
    let w = tape.constant(t(&[1, 1, 3, 3], &k));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv3x3(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &img[..]);
}

// Direct (non-lowered) convolution used as the oracle.
fn direct_conv(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for oy in 0..h as isize {
        for ox in 0..w as isize {
            let mut acc = 0.0;
            for ky in -1..=1isize {
                for kx in -1..=1isize {
                    let (iy, ix) = (oy + ky, ox + kx);
                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                        acc += x[(iy * w as isize + ix) as usize] * k[((ky + 1) * 3 + kx + 1) as usize];
                    }
                }
            }
            out[(oy * w as isize + ox) as usize] = acc;
        }
    }
    out
}

#[test]
fn conv3x3_ones_kernel_on_one_hot_image() {
    for (h, w, hot) in [(5, 6, (2, 3)), (5, 6, (0, 0)), (4, 4, (3, 0))] {
        let mut img = vec![0.0; h * w];
        img[hot.0 * w + hot.1] = 1.0;
        let ones = vec![1.0; 9];
        let expected = direct_conv(&img, h, w, &ones);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, h, w], &img));
        let k = tape.constant(t(&[1, 1, 3, 3], &ones));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv3x3(x, k, b).unwrap();
        assert_eq!(tape.value(y).data(), &expected[..]);
        // 3x3 block of ones clipped at the borders
        let block = (hot.0.saturating_sub(1)..=(hot.0 + 1).min(h - 1)).count()
            * (hot.1.saturating_sub(1)..=(hot.1 + 1).min(w - 1)).count();
        assert_eq!(tape.value(y).sum(), block as f64);
    }
}

#[test]
fn relu_values_and_gradients() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[3], &[-1.0, 2.0, 0.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 2.0, 0.0]);
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

#[test]
fn maxpool_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.maxpool2x2(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);

    let c = tape.variable(Tensor::full(&[1, 2, 4, 6], 1.5));
    let p = tape.maxpool2x2(c).unwrap();
    assert_eq!(tape.shape(p), &[1, 2, 2, 3]);
    assert!(tape.value(p).data().iter().all(|&v| v == 1.5));

    // ties route to the first cell of each window
    let loss = tape.sum(p);
    tape.backward(loss).unwrap();
    let g = tape.grad(c).unwrap();
    for ch in 0..2 {
        for i in 0..4 {
            for j in 0..6 {
                let expect = if i % 2 == 0 && j % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(g.data()[(ch * 4 + i) * 6 + j], expect);
            }
        }
    }
}

#[test]
fn maxpool_rejects_odd_dims() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
    assert!(matches!(tape.maxpool2x2(x), Err(Error::OddSpatialDim { .. })));
}

#[test]
fn upconv_doubles_spatial_dims() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[2, 3, 4, 5], 1.0));
    let w = tape.constant(Tensor::full(&[3, 6, 2, 2], 0.5));
    let b = tape.constant(Tensor::zeros(&[6]));
    let y = tape.upconv2x2(x, w, b).unwrap();
    assert_eq!(tape.shape(y), &[2, 6, 8, 10]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
}

#[test]
fn concat_channels_shapes_and_gradient_split() {
    let mut tape = Tape::new();
    let a = tape.variable(Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64));
    let b = tape.variable(Tensor::from_fn(&[2, 2, 2, 2], |i| 100.0 + i as f64));
    let c = tape.concat_channels(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 3, 2, 2]);
    assert_eq!(&tape.value(c).data()[..8], &[0.0, 1.0, 2.0, 3.0, 100.0, 101.0, 102.0, 103.0]);
    let weights = tape.constant(Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64));
    let prod = tape.mul(c, weights).unwrap();
    let loss = tape.sum(prod);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(a).unwrap().data(), &[0.0, 1.0, 2.0, 3.0, 12.0, 13.0, 14.0, 15.0]);
    assert_eq!(&tape.grad(b).unwrap().data()[..4], &[4.0, 5.0, 6.0, 7.0]);

    let empty = tape.constant(Tensor::zeros(&[2, 0, 2, 2]));
    let same = tape.concat_channels(a, empty).unwrap();
    assert_eq!(tape.value(same), tape.value(a));
}

#[test]
fn batchnorm_identity_on_standardized_batch() {
    // zero mean, unit (biased) variance per channel
    let data = [1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0, 1.0];
    let x_vals: Vec<f64> = (0..4).flat_map(|r| [data[r], data[r + 4]]).collect();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4, 2], &x_vals));
    let gamma = tape.constant(Tensor::full(&[2], 1.0));
    let beta = tape.constant(Tensor::zeros(&[2]));
    let mut running = RunningStats::new(2);
    let y = tape.batchnorm(x, gamma, beta, &mut running, 0.99, Mode::Train).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(&x_vals) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
    // running stats moved 1% toward the batch (mean 0, var 1 from 0 and 1)
    assert_eq!(running.mean, vec![0.0, 0.0]);
    assert!((running.var[0] - 1.0).abs() < 1e-15);
}

#[test]
fn batchnorm_train_output_is_standardized() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[3, 4, 5, 6], |_| rng.gen_range(-4.0..7.0));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let gamma = tape.constant(Tensor::full(&[4], 1.0));
    let beta = tape.constant(Tensor::zeros(&[4]));
    let mut running = RunningStats::new(4);
    let y = tape.batchnorm(xv, gamma, beta, &mut running, 0.99, Mode::Train).unwrap();
    let y = tape.value(y).data();
    for c in 0..4 {
        let vals: Vec<f64> = (0..3)
            .flat_map(|n| y[(n * 4 + c) * 30..(n * 4 + c + 1) * 30].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 1], &[3.0, 5.0]));
    let gamma = tape.constant(t(&[1], &[2.0]));
    let beta = tape.constant(t(&[1], &[1.0]));
    let mut running = RunningStats {
        mean: vec![1.0],
        var: vec![4.0 - 1e-5],
    };
    let before = running.clone();
    let y = tape.batchnorm(x, gamma, beta, &mut running, 0.99, Mode::Eval).unwrap();
    assert_eq!(running, before);
    let y = tape.value(y).data();
    assert!((y[0] - 3.0).abs() < 1e-12);
    assert!((y[1] - 5.0).abs() < 1e-12);
}

#[test]
fn max_over_set_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[2, 1, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let y = tape.max_over_set(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let rows = [[1.0, 9.0], [7.0, -2.0], [3.0, 4.0]];
    let perms = [[0, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
    let mut outs = Vec::new();
    for p in perms {
        let data: Vec<f64> = p.iter().flat_map(|&i| rows[i]).collect();
        let v = tape.constant(t(&[1, 3, 2], &data));
        let y = tape.max_over_set(v).unwrap();
        outs.push(tape.value(y).data().to_vec());
    }
    assert!(outs.iter().all(|o| o == &[7.0, 9.0]));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1, 4, 2, 3], 0.7));
    let p = tape.softmax_channels(x).unwrap();
    assert!(tape.value(p).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = tape.constant(t(&[1, 2], &[0.0, 3f64.ln()]));
    let p = tape.softmax_channels(x).unwrap();
    let p = tape.value(p).data();
    assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);

    let logits = [0.3, -1.2, 2.5, 0.0];
    let shifted: Vec<f64> = logits.iter().map(|v| v + 123.456).collect();
    let a = tape.constant(t(&[1, 4], &logits));
    let b = tape.constant(t(&[1, 4], &shifted));
    let pa = tape.softmax_channels(a).unwrap();
    let pb = tape.softmax_channels(b).unwrap();
    for (u, v) in tape.value(pa).data().iter().zip(tape.value(pb).data()) {
        assert!((u - v).abs() < 1e-7);
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::full(&[2, 3], 0.4));
    let loss = tape.sum(x);
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().data().iter().all(|&g| g == 1.0));

    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(3.0));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::full(&[2], 1.0f64));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

// Scalar Adam written independently of the tensor implementation.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, p: f64, g: f64, lr: f64) -> f64 {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let m_hat = self.m / (1.0 - 0.9f64.powi(self.t));
        let v_hat = self.v / (1.0 - 0.999f64.powi(self.t));
        p - lr * m_hat / (v_hat.sqrt() + 1e-8)
    }
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = ParamStore::new();
    store.add("w", t(&[3], &[1.0, -2.0, 0.5])).unwrap();
    let before = store.clone();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    for _ in 0..3 {
        adam.step(&mut store, &[Tensor::zeros(&[3])], 0.001).unwrap();
    }
    assert_eq!(store, before);
}

#[test]
fn adam_matches_scalar_oracle() {
    let grads = [0.3, -2.0, 1e-3, 50.0];
    let init = [1.0, -1.0, 0.25, 4.0];
    let mut store = ParamStore::new();
    store.add("w", t(&[4], &init)).unwrap();
    let mut adam = AdamState::new(&store, AdamConfig::default());
    let mut oracle: Vec<ScalarAdam> = (0..4).map(|_| ScalarAdam { m: 0.0, v: 0.0, t: 0 }).collect();
    let mut expect = init;
    for step in 0..2 {
        adam.step(&mut store, &[t(&[4], &grads)], 0.001).unwrap();
        for i in 0..4 {
            expect[i] = oracle[i].step(expect[i], grads[i], 0.001);
        }
        let got = store.get(store.find("w").unwrap()).data();
        for i in 0..4 {
            assert!((got[i] - expect[i]).abs() < 1e-12, "step {step} param {i}");
        }
        if step == 0 {
            // first step moves every parameter by ~lr against its gradient sign
            for i in 0..4 {
                let moved = init[i] - got[i];
                assert!((moved - 0.001 * grads[i].signum()).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 8, 8], |i| ((i * 37 % 101) as f32 - 50.0) / 17.0));
        let w = tape.constant(Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 29) as f32 - 14.0) / 30.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.conv3x3(x, w, b).unwrap();
        let y = tape.relu(y);
        let y = tape.maxpool2x2(y).unwrap();
        tape.value(y).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
