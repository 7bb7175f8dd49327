//! Formation shape generators.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use pcr_formation::formation::{FormationError, FormationSpec};
use pcr_formation::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("{generator} does not support {count} agents ({reason})")]
    UnsupportedCount {
        generator: &'static str,
        count: usize,
        reason: &'static str,
    },
    #[error("{generator}: {what} must be positive and finite")]
    InvalidDimension {
        generator: &'static str,
        what: &'static str,
    },
    #[error(transparent)]
    Formation(#[from] FormationError),
}

fn default_pitch() -> f64 {
    2.0
}
fn default_heart_width() -> f64 {
    12.0
}
fn default_vertebra_spacing() -> f64 {
    1.6
}
fn default_vertebra_width() -> f64 {
    1.5
}
fn default_extent() -> [f64; 3] {
    [10.0, 10.0, 4.0]
}
fn default_min_spacing() -> f64 {
    1.2
}
fn default_rect_length() -> f64 {
    13.5
}
fn default_rect_width() -> f64 {
    1.5
}
fn default_rocket_radius() -> f64 {
    2.0
}
fn default_rocket_spacing() -> f64 {
    1.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    /// Row-major fill of the smallest cube lattice holding `count` points.
    CubeGrid {
        count: usize,
        #[serde(default = "default_pitch")]
        pitch: f64,
    },
    /// Planar heart curve, `width` across.
    #[serde(rename = "heart_2d")]
    Heart2d {
        count: usize,
        #[serde(default = "default_heart_width")]
        width: f64,
    },
    /// Curved column of vertebrae: a body point and two lateral processes
    /// per segment.
    Vertebral {
        count: usize,
        #[serde(default = "default_vertebra_spacing")]
        spacing: f64,
        #[serde(default = "default_vertebra_width")]
        width: f64,
    },
    /// Uniform points in a box with a minimum pairwise spacing.
    #[serde(rename = "random_3d")]
    Random3d {
        count: usize,
        #[serde(default = "default_extent")]
        extent: [f64; 3],
        #[serde(default = "default_min_spacing")]
        min_spacing: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Perimeter of a flat rectangle: `count / 2` agents on each long edge,
    /// the end pairs forming the short edges.
    SlenderRect {
        count: usize,
        #[serde(default = "default_rect_length")]
        length: f64,
        #[serde(default = "default_rect_width")]
        width: f64,
    },
    /// Rocket silhouette: ringed body, spiral nose cone and four fins.
    Rocket {
        count: usize,
        #[serde(default = "default_rocket_radius")]
        radius: f64,
        #[serde(default = "default_rocket_spacing")]
        spacing: f64,
    },
}

impl ShapeSpec {
    pub fn count(&self) -> usize {
        match *self {
            ShapeSpec::CubeGrid { count, .. }
            | ShapeSpec::Heart2d { count, .. }
            | ShapeSpec::Vertebral { count, .. }
            | ShapeSpec::Random3d { count, .. }
            | ShapeSpec::SlenderRect { count, .. }
            | ShapeSpec::Rocket { count, .. } => count,
        }
    }

    pub fn generator(&self) -> &'static str {
        match self {
            ShapeSpec::CubeGrid { .. } => "cube_grid",
            ShapeSpec::Heart2d { .. } => "heart_2d",
            ShapeSpec::Vertebral { .. } => "vertebral",
            ShapeSpec::Random3d { .. } => "random_3d",
            ShapeSpec::SlenderRect { .. } => "slender_rect",
            ShapeSpec::Rocket { .. } => "rocket",
        }
    }

    pub fn with_count(&self, n: usize) -> ShapeSpec {
        let mut out = self.clone();
        match &mut out {
            ShapeSpec::CubeGrid { count, .. }
            | ShapeSpec::Heart2d { count, .. }
            | ShapeSpec::Vertebral { count, .. }
            | ShapeSpec::Random3d { count, .. }
            | ShapeSpec::SlenderRect { count, .. }
            | ShapeSpec::Rocket { count, .. } => *count = n,
        }
        out
    }
}

const MAX_COUNT: usize = 5000;

fn check_dims(generator: &'static str, dims: &[(&'static str, f64)]) -> Result<(), ShapeError> {
    for &(what, v) in dims {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ShapeError::InvalidDimension { generator, what });
        }
    }
    Ok(())
}

fn check_count(generator: &'static str, count: usize, min: usize) -> Result<(), ShapeError> {
    if count < min {
        return Err(ShapeError::UnsupportedCount {
            generator,
            count,
            reason: "too few points",
        });
    }
    if count > MAX_COUNT {
        return Err(ShapeError::UnsupportedCount {
            generator,
            count,
            reason: "too many points",
        });
    }
    Ok(())
}

pub fn generate_shape(spec: &ShapeSpec) -> Result<FormationSpec, ShapeError> {
    let g = spec.generator();
    let points = match *spec {
        ShapeSpec::CubeGrid { count, pitch } => {
            check_count(g, count, 4)?;
            check_dims(g, &[("pitch", pitch)])?;
            cube_grid(count, pitch)
        }
        ShapeSpec::Heart2d { count, width } => {
            check_count(g, count, 3)?;
            check_dims(g, &[("width", width)])?;
            heart(count, width)
        }
        ShapeSpec::Vertebral { count, spacing, width } => {
            check_count(g, count, 4)?;
            check_dims(g, &[("spacing", spacing), ("width", width)])?;
            vertebral(count, spacing, width)
        }
        ShapeSpec::Random3d {
            count,
            extent,
            min_spacing,
            seed,
        } => {
            check_count(g, count, 4)?;
            check_dims(
                g,
                &[
                    ("extent", extent[0]),
                    ("extent", extent[1]),
                    ("extent", extent[2]),
                    ("min_spacing", min_spacing),
                ],
            )?;
            random_points(count, extent, min_spacing, seed).ok_or(ShapeError::UnsupportedCount {
                generator: g,
                count,
                reason: "box too small for the requested spacing",
            })?
        }
        ShapeSpec::SlenderRect { count, length, width } => {
            check_count(g, count, 4)?;
            check_dims(g, &[("length", length), ("width", width)])?;
            if count % 2 != 0 {
                return Err(ShapeError::UnsupportedCount {
                    generator: g,
                    count,
                    reason: "count must be even",
                });
            }
            slender_rect(count, length, width)
        }
        ShapeSpec::Rocket { count, radius, spacing } => {
            check_count(g, count, 20)?;
            check_dims(g, &[("radius", radius), ("spacing", spacing)])?;
            rocket(count, radius, spacing)
        }
    };
    Ok(FormationSpec::from_points(g, &points)?)
}

fn cube_grid(count: usize, pitch: f64) -> Vec<Point3> {
    let mut side = 1;
    while side * side * side < count {
        side += 1;
    }
    (0..count)
        .map(|k| {
            Vector3::new(
                (k % side) as f64,
                ((k / side) % side) as f64,
                (k / (side * side)) as f64,
            ) * pitch
        })
        .collect()
}

fn heart(count: usize, width: f64) -> Vec<Point3> {
    // the classic curve spans 32 units horizontally; points are spread at
    // equal arc length so the cusp does not crowd them
    const DENSE: usize = 4096;
    let s = width / 32.0;
    let curve = |t: f64| {
        let x = 16.0 * t.sin().powi(3);
        let y = 13.0 * t.cos() - 5.0 * (2.0 * t).cos() - 2.0 * (3.0 * t).cos() - (4.0 * t).cos();
        Vector3::new(x * s, y * s, 0.0)
    };
    let dense: Vec<Point3> = (0..=DENSE).map(|k| curve(TAU * k as f64 / DENSE as f64)).collect();
    let mut arc = vec![0.0];
    for w in dense.windows(2) {
        arc.push(arc.last().unwrap() + (w[1] - w[0]).norm());
    }
    let total = *arc.last().unwrap();
    let mut j = 0;
    (0..count)
        .map(|k| {
            let target = total * k as f64 / count as f64;
            while arc[j + 1] < target {
                j += 1;
            }
            let f = (target - arc[j]) / (arc[j + 1] - arc[j]);
            dense[j] + (dense[j + 1] - dense[j]) * f
        })
        .collect()
}

fn vertebral(count: usize, spacing: f64, width: f64) -> Vec<Point3> {
    let segments = count.div_ceil(3);
    let height = spacing * segments.max(2) as f64;
    (0..count)
        .map(|k| {
            let seg = k / 3;
            let z = seg as f64 * spacing;
            // gentle S-curve of the column in the sagittal plane
            let y = 0.15 * height * (TAU * z / height).sin();
            match k % 3 {
                0 => Vector3::new(0.0, y, z),
                1 => Vector3::new(-width, y + 0.5 * width, z),
                _ => Vector3::new(width, y + 0.5 * width, z),
            }
        })
        .collect()
}

fn random_points(count: usize, extent: [f64; 3], min_spacing: f64, seed: u64) -> Option<Vec<Point3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Point3> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pts.len() < count {
        attempts += 1;
        if attempts > 2000 * count {
            return None;
        }
        let p = Vector3::new(
            rng.random_range(0.0..extent[0]),
            rng.random_range(0.0..extent[1]),
            rng.random_range(0.0..extent[2]),
        );
        if pts.iter().all(|q| (p - q).norm() >= min_spacing) {
            pts.push(p);
        }
    }
    Some(pts)
}

fn slender_rect(count: usize, length: f64, width: f64) -> Vec<Point3> {
    let per_edge = count / 2;
    let dx = length / (per_edge - 1) as f64;
    (0..count)
        .map(|k| Vector3::new((k % per_edge) as f64 * dx, if k < per_edge { 0.0 } else { width }, 0.0))
        .collect()
}

fn rocket(count: usize, radius: f64, spacing: f64) -> Vec<Point3> {
    const RING: usize = 6;
    const FINS: usize = 4;
    let fin_count = (count / 5).max(FINS) / FINS * FINS;
    let nose_count = count / 6;
    let body_count = count - fin_count - nose_count;
    let mut pts = Vec::with_capacity(count);

    let rings = body_count.div_ceil(RING);
    for k in 0..body_count {
        let ring = k / RING;
        let stagger = if ring.is_multiple_of(2) { 0.0 } else { PI / RING as f64 };
        let a = TAU * (k % RING) as f64 / RING as f64 + stagger;
        pts.push(Vector3::new(radius * a.cos(), radius * a.sin(), ring as f64 * spacing));
    }
    let body_top = rings as f64 * spacing;

    let golden = PI * (3.0 - 5f64.sqrt());
    let nose_len = nose_count as f64 * spacing * 0.5;
    for k in 0..nose_count {
        let f = k as f64 / nose_count as f64;
        let r = radius * (1.0 - f).sqrt() * 0.9;
        let a = k as f64 * golden;
        pts.push(Vector3::new(r * a.cos(), r * a.sin(), body_top + f * nose_len));
    }

    // each fin is a right triangle hanging off the lower body
    let per_fin = fin_count / FINS;
    for fin in 0..FINS {
        let a = TAU * (fin as f64 + 0.5) / FINS as f64;
        let (c, s) = (a.cos(), a.sin());
        let mut placed = 0;
        let mut row = 0;
        while placed < per_fin {
            for col in 0..=row {
                if placed == per_fin {
                    break;
                }
                let out = radius + spacing * (col as f64 + 1.0);
                pts.push(Vector3::new(out * c, out * s, -spacing * row as f64));
                placed += 1;
            }
            row += 1;
        }
    }
    pts
}
