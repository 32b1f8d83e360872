mod common;

use common::{quantized_image, random_image, rng, translate_image};
use rand::seq::SliceRandom;
use rand::Rng;
use rangeseg::loss_metrics::{focal_loss, FocalTargets};
use rangeseg::range_projection::image::RangeImage;
use rangeseg::{CoordMode, Error, ExtractorConfig, Model, ModelConfig, ScanInputs, UNetConfig};
use rangeseg_autograd::gradcheck::{check_gradients_away_from_kinks, DEFAULT_STEP};
use rangeseg_autograd::{Bound, Mode, Tape, Tensor};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        extractor: ExtractorConfig::default(),
        unet: UNetConfig {
            depth: 1,
            base_channels: 2,
            ..UNetConfig::default()
        },
    }
}

/// Replaces every parameter with random values so that no bias sits exactly
/// on a ReLU kink.
fn randomize<T: rangeseg_autograd::Scalar>(model: &mut Model<T>, r: &mut impl Rng) {
    for t in model.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = T::from_f64_lossy(r.gen_range(-0.6..0.6));
        }
    }
}

fn extract(model: &mut Model<f64>, scans: &[&ScanInputs], mode: Mode) -> (Tensor<f64>, Tensor<f64>) {
    let (n, c) = rangeseg::feature_extractor::batch_tensors::<f64>(scans).unwrap();
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let (n, c) = (tape.constant(n), tape.constant(c));
    let out = model
        .forward_features(&mut tape, &bound, n, c, scans.len(), scans[0].height, scans[0].width, mode, 0.99)
        .unwrap();
    (tape.value(out.features).clone(), tape.value(out.pooled).clone())
}

#[test]
fn extractor_output_shapes() {
    let mut r = rng(1);
    let mut model = Model::<f64>::new(&ModelConfig::default(), 3).unwrap();
    let a = model.scan_inputs(&random_image(&mut r, 5, 7, 0.7)).unwrap();
    let b = model.scan_inputs(&random_image(&mut r, 5, 7, 0.7)).unwrap();
    let (features, pooled) = extract(&mut model, &[&a, &b], Mode::Train);
    assert_eq!(features.shape(), &[2, 3, 5, 7]);
    assert_eq!(pooled.shape(), &[70, 16]);
}

#[test]
fn neighbor_slot_order_does_not_matter() {
    let mut r = rng(2);
    let mut model = Model::<f64>::new(&ModelConfig::default(), 5).unwrap();
    randomize(&mut model, &mut r);
    for _ in 0..5 {
        let scan = model.scan_inputs(&random_image(&mut r, 8, 16, 0.8)).unwrap();
        let mut shuffled = scan.clone();
        for pixel in shuffled.neighbors.chunks_exact_mut(24) {
            let mut slots: Vec<[f32; 3]> = pixel.chunks_exact(3).map(|s| [s[0], s[1], s[2]]).collect();
            slots.shuffle(&mut r);
            pixel.copy_from_slice(slots.concat().as_slice());
        }
        let (f0, p0) = extract(&mut model, &[&scan], Mode::Eval);
        let (f1, p1) = extract(&mut model, &[&shuffled], Mode::Eval);
        assert_eq!(p0, p1);
        assert_eq!(f0, f1);
        assert_eq!(model.logits(&[&scan]).unwrap(), model.logits(&[&shuffled]).unwrap());
    }
}

#[test]
fn pooled_features_are_translation_invariant() {
    let mut r = rng(3);
    let mut model = Model::<f64>::new(&ModelConfig::default(), 7).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        for _ in 0..5 {
            let img = quantized_image(&mut r, 8, 16);
            let offset = [0, 1, 2].map(|_| r.gen_range(-4096..4096) as f32 / 1024.0);
            let moved = translate_image(&img, offset);
            let a = model.scan_inputs(&img).unwrap();
            let b = model.scan_inputs(&moved).unwrap();
            assert_eq!(a.neighbors, b.neighbors);
            let (_, p0) = extract(&mut model, &[&a], mode);
            let (_, p1) = extract(&mut model, &[&b], mode);
            assert_eq!(p0, p1);
        }
    }
}

fn with_origin_center(img: &RangeImage, pixel: usize) -> RangeImage {
    let mut channels = img.channels().to_vec();
    for c in &mut channels {
        if ["x", "y", "z"].contains(&c.name.as_str()) {
            c.data[pixel] = 0.0;
        }
    }
    RangeImage::from_parts(img.height(), img.width(), channels, img.mask().to_vec(), img.point_index().to_vec())
        .unwrap()
}

#[test]
fn absolute_matches_relative_at_the_origin() {
    let mut r = rng(4);
    let img = with_origin_center(&random_image(&mut r, 3, 3, 1.0), 4);
    let mut cfg = ModelConfig::default();
    let mut rel = Model::<f64>::new(&cfg, 11).unwrap();
    cfg.extractor.coords = CoordMode::Absolute;
    let mut abs = Model::<f64>::new(&cfg, 11).unwrap();
    assert!(rel.params().iter().zip(abs.params().iter()).all(|(a, b)| a == b));

    let a = rel.scan_inputs(&img).unwrap();
    let b = abs.scan_inputs(&img).unwrap();
    assert_eq!(a.neighbors[4 * 24..5 * 24], b.neighbors[4 * 24..5 * 24]);
    let (_, p0) = extract(&mut rel, &[&a], Mode::Eval);
    let (_, p1) = extract(&mut abs, &[&b], Mode::Eval);
    assert_eq!(p0.data()[4 * 16..5 * 16], p1.data()[4 * 16..5 * 16]);
}

#[test]
fn composed_network_gradients_match_finite_differences() {
    let mut r = rng(5);
    let cfg = tiny_config();
    let mut model = Model::<f64>::new(&cfg, 1).unwrap();
    randomize(&mut model, &mut r);
    let imgs = [random_image(&mut r, 8, 8, 0.85), random_image(&mut r, 8, 8, 0.85)];
    let scans: Vec<ScanInputs> = imgs.iter().map(|i| model.scan_inputs(i).unwrap()).collect();
    let refs: Vec<&ScanInputs> = scans.iter().collect();
    let mask: Vec<bool> = imgs.iter().flat_map(|i| i.mask().to_vec()).collect();
    let labels: Vec<u8> = (0..mask.len()).map(|_| r.gen_range(0..4)).collect();
    let weights: Vec<f64> = mask.iter().map(|&m| if m { r.gen_range(0.5..3.0) } else { 0.0 }).collect();
    let targets = FocalTargets {
        labels: &labels,
        mask: &mask,
        weights: &weights,
        gamma: 2.0,
    };
    let params: Vec<Tensor<f64>> = model.params().iter().map(|(_, t)| t.clone()).collect();
    let report = check_gradients_away_from_kinks(
        &params,
        |tape, vars| {
            let mut m = model.clone();
            let bound = Bound::new(vars.to_vec());
            let f = m.forward(tape, &bound, &refs, Mode::Train, 0.99).expect("forward");
            let p = tape.softmax_channels(f.logits)?;
            Ok(focal_loss(tape, p, &targets).expect("loss"))
        },
        4,
        DEFAULT_STEP,
        &mut r,
    )
    .unwrap();
    assert!(report.checked >= 100, "{report:?}");
    assert!(report.skipped * 10 <= report.checked, "{report:?}");
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn unet_keeps_spatial_size() {
    let mut r = rng(6);
    let mut model = Model::<f32>::new(&ModelConfig::default(), 2).unwrap();
    let x = Tensor::from_fn(&[1, 3, 64, 128], |_| r.gen_range(-1.0f32..1.0));
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape);
    let x = tape.constant(x);
    let y = model.forward_unet(&mut tape, &bound, x, Mode::Train, 0.99).unwrap();
    assert_eq!(tape.shape(y), &[1, 4, 64, 128]);
}

#[test]
fn unet_rejects_indivisible_sizes() {
    let mut r = rng(7);
    let model = Model::<f32>::new(&ModelConfig::default(), 2).unwrap();
    let scan = model.scan_inputs(&random_image(&mut r, 60, 128, 0.5)).unwrap();
    assert!(matches!(
        model.logits(&[&scan]),
        Err(Error::IndivisibleSpatialDims { height: 60, width: 128, divisor: 8 })
    ));
}

#[test]
fn unet_channel_arithmetic() {
    let model = Model::<f32>::new(&ModelConfig::default(), 0).unwrap();
    let shape = |name: &str| {
        let id = model.params().find(name).unwrap_or_else(|| panic!("{name}"));
        model.params().get(id).shape().to_vec()
    };
    assert_eq!(shape("unet.down0.conv0.weight"), [16, 3, 3, 3]);
    for s in 0..3 {
        let c = 16 << s;
        assert_eq!(shape(&format!("unet.down{s}.conv1.weight")), [c, c, 3, 3]);
        assert_eq!(shape(&format!("unet.up{s}.upconv.weight")), [2 * c, c, 2, 2]);
        // upsampled and skip maps are concatenated
        assert_eq!(shape(&format!("unet.up{s}.conv0.weight")), [c, 2 * c, 3, 3]);
        assert_eq!(shape(&format!("unet.up{s}.conv1.weight")), [c, c, 3, 3]);
    }
    assert_eq!(shape("unet.bottleneck.conv0.weight"), [128, 64, 3, 3]);
    assert_eq!(shape("unet.head.weight"), [4, 16, 1, 1]);
}

#[test]
fn zero_input_yields_head_bias() {
    let mut model = Model::<f64>::new(&ModelConfig::default(), 4).unwrap();
    let bias = [0.25, -1.5, 0.75, 2.0];
    let id = model.params().find("unet.head.bias").unwrap();
    model.params_mut().get_mut(id).data_mut().copy_from_slice(&bias);
    for mode in [Mode::Train, Mode::Eval] {
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[2, 3, 16, 8]));
        let y = model.forward_unet(&mut tape, &bound, x, mode, 0.99).unwrap();
        for (i, v) in tape.value(y).data().iter().enumerate() {
            assert_eq!(*v, bias[(i / 128) % 4]);
        }
    }
}

#[test]
fn eval_logits_do_not_depend_on_the_batch() {
    let mut r = rng(8);
    let mut model = Model::<f64>::new(&ModelConfig::default(), 9).unwrap();
    randomize(&mut model, &mut r);
    let a = model.scan_inputs(&random_image(&mut r, 8, 16, 0.8)).unwrap();
    let b = model.scan_inputs(&random_image(&mut r, 8, 16, 0.3)).unwrap();
    let alone = model.logits(&[&a]).unwrap();
    let together = model.logits(&[&b, &a]).unwrap();
    assert_eq!(alone.data(), &together.data()[alone.len()..]);
}

#[test]
fn single_and_double_precision_agree() {
    let mut r = rng(9);
    let cfg = ModelConfig::default();
    let wide = Model::<f64>::new(&cfg, 13).unwrap();
    let mut narrow = Model::<f32>::new(&cfg, 13).unwrap();
    for id in wide.params().ids() {
        *narrow.params_mut().get_mut(id) = wide.params().get(id).cast();
    }
    let img = random_image(&mut r, 16, 32, 0.8);
    let a = wide.logits(&[&wide.scan_inputs(&img).unwrap()]).unwrap();
    let b = narrow.logits(&[&narrow.scan_inputs(&img).unwrap()]).unwrap();
    let scale = a.data().iter().fold(0f64, |m, v| m.max(v.abs()));
    let diff = a.data().iter().zip(b.data()).fold(0f64, |m, (x, y)| m.max((x - *y as f64).abs()));
    assert!(diff <= 1e-3 * scale.max(1.0), "diff {diff} scale {scale}");
}
