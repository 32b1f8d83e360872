//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rangeseg::range_projection::image::{Channel, RangeImage, BASE_CHANNELS};
use rangeseg::{GridConfig, PointCloud};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-point projection loop: `(pixel -> winning point)` plus
/// `(valid, out_of_view, collisions)`.
pub fn brute_force_project(cloud: &PointCloud, cfg: &GridConfig) -> (Vec<Option<usize>>, [usize; 3]) {
    let mut owner: Vec<Option<usize>> = vec![None; cfg.height * cfg.width];
    let mut depth_of = vec![0f32; cfg.height * cfg.width];
    let (mut oov, mut collisions) = (0, 0);
    let key = |i: usize, d: f32| {
        let p = cloud.points()[i];
        [d, p[0], p[1], p[2], cloud.reflectance()[i]]
    };
    for i in 0..cloud.len() {
        let [x, y, z] = cloud.points()[i].map(|v| v as f64);
        let d = (x * x + y * y + z * z).sqrt();
        if d == 0.0 {
            oov += 1;
            continue;
        }
        let mut theta = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
        if theta == -std::f64::consts::PI {
            theta = std::f64::consts::PI;
        }
        let phi = (z / d).clamp(-1.0, 1.0).asin();
        let mut dt = (theta - cfg.theta_origin) % std::f64::consts::TAU;
        if dt < 0.0 {
            dt += std::f64::consts::TAU;
        }
        let c = (dt / cfg.delta_theta).floor();
        let r = ((phi - cfg.phi_origin) / cfg.delta_phi).floor();
        if !(0.0..cfg.width as f64).contains(&c) || !(0.0..cfg.height as f64).contains(&r) {
            oov += 1;
            continue;
        }
        let at = r as usize * cfg.width + c as usize;
        let df = d as f32;
        match owner[at] {
            None => {
                owner[at] = Some(i);
                depth_of[at] = df;
            }
            Some(j) => {
                collisions += 1;
                let (a, b) = (key(i, df), key(j, depth_of[at]));
                let less = a
                    .iter()
                    .zip(&b)
                    .map(|(u, v)| u.total_cmp(v))
                    .find(|o| o.is_ne())
                    .is_some_and(|o| o.is_lt());
                if less {
                    owner[at] = Some(i);
                    depth_of[at] = df;
                }
            }
        }
    }
    let valid = owner.iter().flatten().count();
    (owner, [valid, oov, collisions])
}

/// Random cloud with in-view and out-of-view points, duplicates along rays
/// (forced collisions), exact duplicates and an occasional origin point.
pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    let mut points: Vec<[f32; 3]> = Vec::with_capacity(n);
    let mut refl = Vec::with_capacity(n);
    while points.len() < n {
        let roll: f64 = rng.gen();
        if roll < 0.1 && !points.is_empty() {
            let j = rng.gen_range(0..points.len());
            let s: f32 = rng.gen_range(0.5..2.0);
            let p = points[j];
            points.push(if roll < 0.03 { p } else { p.map(|v| v * s) });
        } else if roll < 0.11 {
            points.push([0.0; 3]);
        } else {
            points.push([
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-5.0..3.0),
            ]);
        }
        refl.push(rng.gen_range(0.0..1.0));
    }
    PointCloud::new(points, refl).unwrap()
}

/// Range image with random validity and coordinates.
pub fn random_image(rng: &mut impl Rng, h: usize, w: usize, valid_fraction: f64) -> RangeImage {
    let n = h * w;
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(valid_fraction)).collect();
    let channels = BASE_CHANNELS
        .iter()
        .map(|name| Channel {
            name: name.to_string(),
            data: (0..n).map(|_| rng.gen_range(0.5f32..40.0)).collect(),
        })
        .collect();
    let index = (0..n).map(|i| mask[i].then_some(i as u32)).collect();
    RangeImage::from_parts(h, w, channels, mask, index).unwrap()
}

/// Copy of `img` with `offset` added to x, y, z at valid pixels.
pub fn translate_image(img: &RangeImage, offset: [f32; 3]) -> RangeImage {
    let channels = img
        .channels()
        .iter()
        .map(|c| {
            let k = ["x", "y", "z"].iter().position(|n| *n == c.name);
            let data = c
                .data
                .iter()
                .zip(img.mask())
                .map(|(&v, &m)| match k {
                    Some(k) if m => v + offset[k],
                    _ => v,
                })
                .collect();
            Channel {
                name: c.name.clone(),
                data,
            }
        })
        .collect();
    RangeImage::from_parts(
        img.height(),
        img.width(),
        channels,
        img.mask().to_vec(),
        img.point_index().to_vec(),
    )
    .unwrap()
}

/// Image whose coordinates are multiples of 1/256 below 32, so adding an
/// equally quantised offset is exact in f32.
pub fn quantized_image(rng: &mut impl Rng, h: usize, w: usize) -> RangeImage {
    let img = random_image(rng, h, w, 0.8);
    let channels = img
        .channels()
        .iter()
        .map(|c| Channel {
            name: c.name.clone(),
            data: c.data.iter().map(|&v| (v * 256.0).round() / 256.0 * 0.75).collect(),
        })
        .collect();
    RangeImage::from_parts(h, w, channels, img.mask().to_vec(), img.point_index().to_vec()).unwrap()
}

/// Nested-loop neighbor field; slots NW, N, NE, W, E, SW, S, SE.
pub fn brute_force_neighbors(img: &RangeImage, relative: bool) -> Vec<f32> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let x = img.channel("x").unwrap();
    let y = img.channel("y").unwrap();
    let z = img.channel("z").unwrap();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = (r * w + c) as usize;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    let inside = rr >= 0 && rr < h && cc >= 0 && cc < w;
                    let j = (rr * w + cc) as usize;
                    if !img.mask()[i] || !inside || !img.mask()[j] {
                        out.extend([0.0; 3]);
                    } else if relative {
                        out.extend([x[j] - x[i], y[j] - y[i], z[j] - z[i]]);
                    } else {
                        out.extend([x[j], y[j], z[j]]);
                    }
                }
            }
        }
    }
    out
}

/// log-sum-exp cross-entropy directly on logits, `[B, K, H, W]`.
pub fn reference_cross_entropy(logits: &[f64], k: usize, plane: usize, labels: &[u8], mask: &[bool], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for px in 0..labels.len() {
        if !mask[px] {
            continue;
        }
        let (b, hw) = (px / plane, px % plane);
        let z: Vec<f64> = (0..k).map(|c| logits[(b * k + c) * plane + hw]).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += weights[px] * (lse - z[labels[px] as usize]);
    }
    total
}
