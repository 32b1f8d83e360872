//! Spherical binning of point clouds onto the sensor grid.
//!
//! Column and row of a point follow from its azimuth and elevation:
//! `col = floor((theta - theta_origin) / delta_theta)`,
//! `row = floor((phi - phi_origin) / delta_phi)`. Azimuth offsets are
//! taken modulo a full turn so a grid may start anywhere on the circle.

pub mod image;

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

pub use image::RangeImage;

use crate::error::{Error, Result};
use crate::pointcloud_io::PointCloud;

/// Binning parameters of the range image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub height: usize,
    pub width: usize,
    /// Azimuth step (radians).
    pub delta_theta: f64,
    /// Elevation step (radians).
    pub delta_phi: f64,
    /// Azimuth of the left edge of column 0.
    pub theta_origin: f64,
    /// Elevation of the lower edge of row 0.
    pub phi_origin: f64,
}

/// Vertical field of view of a 64-beam spinning sensor, in degrees.
pub const DEFAULT_FOV_UP_DEG: f64 = 2.0;
pub const DEFAULT_FOV_DOWN_DEG: f64 = -24.9;

impl Default for GridConfig {
    /// 64 x 512 over a 90 degree frontal azimuth window.
    fn default() -> Self {
        GridConfig::frontal(64, 512)
    }
}

impl GridConfig {
    /// `height x width` grid covering azimuth [-45, 45] degrees around +x and
    /// the default vertical field of view.
    pub fn frontal(height: usize, width: usize) -> Self {
        let fov = (DEFAULT_FOV_UP_DEG - DEFAULT_FOV_DOWN_DEG).to_radians();
        GridConfig {
            height,
            width,
            delta_theta: (PI / 2.0) / width.max(1) as f64,
            delta_phi: fov / height.max(1) as f64,
            theta_origin: -PI / 4.0,
            phi_origin: DEFAULT_FOV_DOWN_DEG.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.delta_theta, self.delta_phi, self.theta_origin, self.phi_origin]
            .iter()
            .all(|v| v.is_finite());
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid {}x{} is empty",
                self.height, self.width
            )));
        }
        if !finite || self.delta_theta <= 0.0 || self.delta_phi <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grid steps must be positive and finite: {self:?}"
            )));
        }
        if self.width as f64 * self.delta_theta > TAU * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig("azimuth span exceeds a full turn".into()));
        }
        if self.height as f64 * self.delta_phi > PI * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig("elevation span exceeds 180 degrees".into()));
        }
        Ok(())
    }

    /// True when the columns wrap around the full circle.
    pub fn is_full_turn(&self) -> bool {
        (self.width as f64 * self.delta_theta - TAU).abs() < 1e-9
    }

    /// Pixel containing the given direction, if it lies in the grid.
    pub fn pixel_of(&self, s: &Spherical) -> Option<(usize, usize)> {
        let col = ((s.theta - self.theta_origin).rem_euclid(TAU) / self.delta_theta).floor();
        let row = ((s.phi - self.phi_origin) / self.delta_phi).floor();
        let in_range = |v: f64, n: usize| v >= 0.0 && v < n as f64;
        (in_range(row, self.height) && in_range(col, self.width)).then_some((row as usize, col as usize))
    }

    /// Unit ray direction through the centre of a pixel.
    pub fn ray_direction(&self, row: usize, col: usize) -> [f64; 3] {
        let theta = self.theta_origin + (col as f64 + 0.5) * self.delta_theta;
        let phi = self.phi_origin + (row as f64 + 0.5) * self.delta_phi;
        [phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin()]
    }
}

/// Azimuth in (-pi, pi], elevation in [-pi/2, pi/2], range in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spherical {
    pub theta: f64,
    pub phi: f64,
    pub depth: f64,
}

/// Spherical coordinates of a point; theta is 0 on the vertical axis.
pub fn spherical_coords(p: [f32; 3]) -> Result<Spherical> {
    let [x, y, z] = p.map(f64::from);
    let depth = (x * x + y * y + z * z).sqrt();
    if depth == 0.0 {
        return Err(Error::ZeroPoint);
    }
    let theta = if x == 0.0 && y == 0.0 { 0.0 } else { y.atan2(x) };
    // atan2 returns -pi for (-x, -0.0); fold onto the closed end of the range
    let theta = if theta == -PI { PI } else { theta };
    let phi = (z / depth).clamp(-1.0, 1.0).asin();
    Ok(Spherical { theta, phi, depth })
}

/// Bookkeeping of a projection: `valid + dropped_out_of_view + dropped_by_collision`
/// equals the number of input points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProjectionStats {
    pub valid: usize,
    /// Points outside the grid, including points at the sensor origin.
    pub dropped_out_of_view: usize,
    /// Points that lost their pixel to a nearer point.
    pub dropped_by_collision: usize,
}

impl std::fmt::Display for ProjectionStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "valid={} dropped_oov={} dropped_collision={}",
            self.valid, self.dropped_out_of_view, self.dropped_by_collision
        )
    }
}

/// Order used to resolve collisions: nearest first, then the point's
/// values, so the winner does not depend on input order.
fn closer(a: (f32, [f32; 3], f32), b: (f32, [f32; 3], f32)) -> bool {
    let key = |(d, p, r): (f32, [f32; 3], f32)| [d, p[0], p[1], p[2], r];
    let (ka, kb) = (key(a), key(b));
    for (x, y) in ka.iter().zip(&kb) {
        match x.total_cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}

/// Bins `cloud` into a range image; on collisions the nearest point wins.
pub fn project(cloud: &PointCloud, cfg: &GridConfig) -> Result<(RangeImage, ProjectionStats)> {
    cfg.validate()?;
    let targets: Vec<Option<(usize, f32)>> = cloud
        .points()
        .par_iter()
        .map(|&p| {
            let s = spherical_coords(p).ok()?;
            let (row, col) = cfg.pixel_of(&s)?;
            Some((row * cfg.width + col, s.depth as f32))
        })
        .collect();

    let mut winner: Vec<Option<usize>> = vec![None; cfg.height * cfg.width];
    let mut stats = ProjectionStats::default();
    let candidate = |i: usize, depth: f32| (depth, cloud.points()[i], cloud.reflectance()[i]);
    for (i, target) in targets.iter().enumerate() {
        let Some((at, depth)) = *target else {
            stats.dropped_out_of_view += 1;
            continue;
        };
        match winner[at] {
            None => winner[at] = Some(i),
            Some(j) => {
                stats.dropped_by_collision += 1;
                let dj = targets[j].expect("winner has a target").1;
                if closer(candidate(i, depth), candidate(j, dj)) {
                    winner[at] = Some(i);
                }
            }
        }
    }

    let mut img = RangeImage::empty(cfg.height, cfg.width);
    for (at, w) in winner.iter().enumerate() {
        if let Some(i) = *w {
            let depth = targets[i].expect("winner has a target").1;
            img.set_pixel(at, cloud.points()[i], cloud.reflectance()[i], depth, i as u32);
            stats.valid += 1;
        }
    }
    Ok((img, stats))
}

/// Points of the valid pixels, in row-major pixel order.
pub fn unproject(img: &RangeImage) -> Result<PointCloud> {
    let x = img.channel(image::X)?;
    let y = img.channel(image::Y)?;
    let z = img.channel(image::Z)?;
    let r = img.channel(image::REFLECTANCE)?;
    let mut points = Vec::with_capacity(img.valid_count());
    let mut reflectance = Vec::with_capacity(img.valid_count());
    for (i, &m) in img.mask().iter().enumerate() {
        if m {
            points.push([x[i], y[i], z[i]]);
            reflectance.push(r[i]);
        }
    }
    PointCloud::new(points, reflectance)
}
