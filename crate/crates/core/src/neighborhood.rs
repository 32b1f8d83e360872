//! 8-connected neighbor coordinate sets over the range-image topology.

use rayon::prelude::*;

use crate::error::Result;
use crate::range_projection::image::{self, RangeImage};

/// Number of neighbors of a pixel.
pub const SLOTS: usize = 8;

/// Slot order: NW, N, NE, W, E, SW, S, SE as (row, col) offsets.
pub const SLOT_OFFSETS: [(isize, isize); SLOTS] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordMode {
    /// Neighbor minus centre, `q - p`.
    #[default]
    Relative,
    /// Neighbor coordinates as stored, `q`.
    Absolute,
}

/// `[H, W, 8, 3]` neighbor coordinates; empty slots hold (0, 0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborField {
    pub height: usize,
    pub width: usize,
    pub mode: CoordMode,
    pub values: Vec<f32>,
}

impl NeighborField {
    pub fn slot(&self, row: usize, col: usize, slot: usize) -> [f32; 3] {
        let at = ((row * self.width + col) * SLOTS + slot) * 3;
        [self.values[at], self.values[at + 1], self.values[at + 2]]
    }
}

/// Builds the neighbor field. Off-image neighbors count as empty, unless
/// `wrap` is set, in which case columns wrap around the azimuth seam.
pub fn build_neighbor_field(img: &RangeImage, mode: CoordMode, wrap: bool) -> Result<NeighborField> {
    let xs = img.channel(image::X)?;
    let ys = img.channel(image::Y)?;
    let zs = img.channel(image::Z)?;
    let (h, w) = (img.height(), img.width());
    let mask = img.mask();
    let mut values = vec![0.0f32; h * w * SLOTS * 3];
    values
        .par_chunks_mut(w * SLOTS * 3)
        .enumerate()
        .for_each(|(row, out)| {
            for col in 0..w {
                let c = row * w + col;
                if !mask[c] {
                    continue;
                }
                let p = [xs[c], ys[c], zs[c]];
                for (s, &(dr, dc)) in SLOT_OFFSETS.iter().enumerate() {
                    let r = row as isize + dr;
                    let mut k = col as isize + dc;
                    if wrap {
                        k = k.rem_euclid(w as isize);
                    }
                    if r < 0 || r >= h as isize || k < 0 || k >= w as isize {
                        continue;
                    }
                    let q = r as usize * w + k as usize;
                    if !mask[q] {
                        continue;
                    }
                    let dst = &mut out[(col * SLOTS + s) * 3..][..3];
                    let nq = [xs[q], ys[q], zs[q]];
                    for a in 0..3 {
                        dst[a] = match mode {
                            CoordMode::Relative => nq[a] - p[a],
                            CoordMode::Absolute => nq[a],
                        };
                    }
                }
            }
        });
    Ok(NeighborField {
        height: h,
        width: w,
        mode,
        values,
    })
}
