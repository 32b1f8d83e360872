//! Procedural scans: one ray per grid cell cast against a ground plane,
//! boxes (cars, cyclists) and vertical cylinders (pedestrians).
//!
//! Everything is expressed in the sensor frame, so the ground sits at
//! `z = -sensor_height`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::class::{Class, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pointcloud_io::{LabeledSample, PointCloud};
use crate::range_projection::{project, GridConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub cars: usize,
    pub pedestrians: usize,
    pub cyclists: usize,
    pub grid: GridConfig,
    /// Height of the sensor above the ground plane (m).
    pub sensor_height: f64,
    /// Forward distance range of object centres (m).
    pub min_distance: f64,
    pub max_distance: f64,
    /// Returns beyond this range are dropped (m).
    pub max_range: f64,
    /// Mean reflectance per class id.
    pub reflectance: [f32; NUM_CLASSES],
    /// Half-width of the uniform reflectance jitter.
    pub reflectance_noise: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            cars: 3,
            pedestrians: 2,
            cyclists: 2,
            grid: GridConfig::default(),
            sensor_height: 1.73,
            min_distance: 6.0,
            max_distance: 25.0,
            max_range: 80.0,
            reflectance: [0.15, 0.85, 0.45, 0.65],
            reflectance_noise: 0.04,
        }
    }
}

pub const CAR_SIZE: [f64; 3] = [4.0, 1.8, 1.5];
pub const CYCLIST_SIZE: [f64; 3] = [1.8, 0.5, 1.6];
pub const PEDESTRIAN_RADIUS: f64 = 0.4;
pub const PEDESTRIAN_HEIGHT: f64 = 1.7;

/// Minimum gap between object footprints (m).
const CLEARANCE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 1000;
const SCENE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned box between two corners.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Vertical cylinder standing on `z0`.
    Cylinder { center: [f64; 2], radius: f64, z0: f64, z1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub class: Class,
    pub shape: Shape,
}

impl Object {
    fn footprint(&self) -> ([f64; 2], f64) {
        match self.shape {
            Shape::Box { min, max } => {
                let c = [(min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0];
                (c, ((max[0] - min[0]).hypot(max[1] - min[1])) / 2.0)
            }
            Shape::Cylinder { center, radius, .. } => (center, radius),
        }
    }

    /// Ray parameter of the first hit along `d` from the origin.
    fn intersect(&self, d: [f64; 3]) -> Option<f64> {
        match self.shape {
            Shape::Box { min, max } => {
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if min[a] > 0.0 || max[a] < 0.0 {
                            return None;
                        }
                        continue;
                    }
                    let (t0, t1) = (min[a] / d[a], max[a] / d[a]);
                    near = near.max(t0.min(t1));
                    far = far.min(t0.max(t1));
                }
                (near <= far && near > 0.0).then_some(near)
            }
            Shape::Cylinder { center, radius, z0, z1 } => {
                let mut best: Option<f64> = None;
                let mut keep = |t: f64| {
                    if t > 0.0 && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let a = d[0] * d[0] + d[1] * d[1];
                if a > 0.0 {
                    let b = -2.0 * (d[0] * center[0] + d[1] * center[1]);
                    let c = center[0] * center[0] + center[1] * center[1] - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc >= 0.0 {
                        let t = (-b - disc.sqrt()) / (2.0 * a);
                        let z = t * d[2];
                        if (z0..=z1).contains(&z) {
                            keep(t);
                        }
                    }
                }
                for z in [z0, z1] {
                    if d[2] != 0.0 {
                        let t = z / d[2];
                        let (x, y) = (t * d[0] - center[0], t * d[1] - center[1]);
                        if x * x + y * y <= radius * radius {
                            keep(t);
                        }
                    }
                }
                best
            }
        }
    }
}

/// A generated scan with the grid cell each point was cast through.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<Object>,
    pub cloud: PointCloud,
    pub labels: Vec<Class>,
    /// `(row, col)` of the generating ray of every point.
    pub pixels: Vec<(usize, usize)>,
}

impl Scene {
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for l in &self.labels {
            counts[l.id() as usize] += 1;
        }
        counts
    }

    /// Projects the scan with `grid` and attaches the per-point labels.
    pub fn to_sample(&self, grid: &GridConfig) -> Result<LabeledSample> {
        let (image, _) = project(&self.cloud, grid)?;
        let labels = image
            .point_index()
            .iter()
            .map(|i| i.map_or(0, |i| self.labels[i as usize].id()))
            .collect();
        LabeledSample::new(image, labels)
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let ok = self.sensor_height > 0.0
            && self.min_distance > 0.0
            && self.max_distance >= self.min_distance
            && self.max_range > 0.0
            && (0.0..=0.5).contains(&self.reflectance_noise)
            && self.reflectance.iter().all(|r| (0.0..=1.0).contains(r));
        if !ok {
            return Err(Error::DegenerateConfig(format!("{self:?}")));
        }
        Ok(())
    }

    fn in_view(&self, x: f64, y: f64) -> bool {
        let g = &self.grid;
        if g.is_full_turn() {
            return true;
        }
        let off = (y.atan2(x) - g.theta_origin).rem_euclid(std::f64::consts::TAU);
        off < g.width as f64 * g.delta_theta
    }

    fn place(&self, class: Class, rng: &mut ChaCha8Rng, placed: &[Object]) -> Result<Object> {
        let ground = -self.sensor_height;
        let g = &self.grid;
        let span = if g.is_full_turn() { std::f64::consts::TAU } else { g.width as f64 * g.delta_theta };
        for _ in 0..PLACEMENT_ATTEMPTS {
            let dist = rng.gen_range(self.min_distance..=self.max_distance);
            let azimuth = g.theta_origin + rng.gen_range(0.0..span);
            let (cx, cy) = (dist * azimuth.cos(), dist * azimuth.sin());
            let shape = match class {
                Class::Pedestrian => Shape::Cylinder {
                    center: [cx, cy],
                    radius: PEDESTRIAN_RADIUS,
                    z0: ground,
                    z1: ground + PEDESTRIAN_HEIGHT,
                },
                _ => {
                    let [mut l, mut w, h] = if class == Class::Car { CAR_SIZE } else { CYCLIST_SIZE };
                    if rng.gen_bool(0.5) {
                        std::mem::swap(&mut l, &mut w);
                    }
                    Shape::Box {
                        min: [cx - l / 2.0, cy - w / 2.0, ground],
                        max: [cx + l / 2.0, cy + w / 2.0, ground + h],
                    }
                }
            };
            let obj = Object { class, shape };
            let (c, r) = obj.footprint();
            let corners = [(-r, -r), (-r, r), (r, -r), (r, r)];
            if !corners.iter().all(|(dx, dy)| self.in_view(c[0] + dx, c[1] + dy)) {
                continue;
            }
            if c[0].hypot(c[1]) - r < 1.0 {
                continue;
            }
            let clear = placed.iter().all(|o| {
                let (oc, or) = o.footprint();
                (c[0] - oc[0]).hypot(c[1] - oc[1]) > r + or + CLEARANCE
            });
            if clear {
                return Ok(obj);
            }
        }
        Err(Error::DegenerateConfig(format!(
            "could not place a {class} without overlap after {PLACEMENT_ATTEMPTS} attempts"
        )))
    }

    fn layout(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Object>> {
        let mut objects = Vec::new();
        let wanted = [
            (Class::Car, self.cars),
            (Class::Pedestrian, self.pedestrians),
            (Class::Cyclist, self.cyclists),
        ];
        for (class, n) in wanted {
            for _ in 0..n {
                let obj = self.place(class, rng, &objects)?;
                objects.push(obj);
            }
        }
        Ok(objects)
    }
}

/// Casts every ray of the grid; returns `(row, col, point, object index or
/// None for ground)` for the rays that hit something within range.
fn cast(cfg: &SceneConfig, objects: &[Object]) -> Vec<(usize, usize, [f64; 3], Option<usize>)> {
    let g = &cfg.grid;
    (0..g.height * g.width)
        .into_par_iter()
        .filter_map(|i| {
            let (row, col) = (i / g.width, i % g.width);
            let d = g.ray_direction(row, col);
            let mut hit: Option<(f64, Option<usize>)> = None;
            if d[2] < 0.0 {
                hit = Some((-cfg.sensor_height / d[2], None));
            }
            for (k, o) in objects.iter().enumerate() {
                if let Some(t) = o.intersect(d) {
                    if hit.is_none_or(|(best, _)| t < best) {
                        hit = Some((t, Some(k)));
                    }
                }
            }
            let (t, what) = hit?;
            (t <= cfg.max_range).then(|| (row, col, [t * d[0], t * d[1], t * d[2]], what))
        })
        .collect()
}

/// Generates a labeled scan. Every requested object receives at least one
/// return; layouts where one is fully hidden are redrawn.
pub fn generate(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..SCENE_ATTEMPTS {
        let objects = cfg.layout(&mut rng)?;
        let hits = cast(cfg, &objects);
        let mut seen = vec![false; objects.len()];
        for (_, _, _, what) in &hits {
            if let Some(k) = what {
                seen[*k] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            continue;
        }
        let mut points = Vec::with_capacity(hits.len());
        let mut reflectance = Vec::with_capacity(hits.len());
        let mut labels = Vec::with_capacity(hits.len());
        let mut pixels = Vec::with_capacity(hits.len());
        for (row, col, p, what) in hits {
            let class = what.map_or(Class::Background, |k| objects[k].class);
            let noise = if cfg.reflectance_noise > 0.0 {
                rng.gen_range(-cfg.reflectance_noise..=cfg.reflectance_noise)
            } else {
                0.0
            };
            points.push(p.map(|v| v as f32));
            reflectance.push((cfg.reflectance[class.id() as usize] + noise).clamp(0.0, 1.0));
            labels.push(class);
            pixels.push((row, col));
        }
        return Ok(Scene {
            objects,
            cloud: PointCloud::new(points, reflectance)?,
            labels,
            pixels,
        });
    }
    Err(Error::DegenerateConfig(format!(
        "no layout with every object visible after {SCENE_ATTEMPTS} attempts"
    )))
}

/// Grid of the desk-scale fixtures: 64 x 128 over the default field of view.
pub fn small_grid() -> GridConfig {
    GridConfig::frontal(64, 128)
}
