//! Analytic obstacle field: spheres and axis-aligned boxes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::Point3;
use crate::optimizer::DistanceField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Sphere {
    fn signed_distance(&self, p: &Point3) -> (f64, Vector3<f64>) {
        let d = p - Vector3::from(self.center);
        let n = d.norm();
        let grad = if n > 0.0 { d / n } else { Vector3::x() };
        (n - self.radius, grad)
    }
}

impl Aabb {
    fn signed_distance(&self, p: &Point3) -> (f64, Vector3<f64>) {
        let lo = Vector3::from(self.min);
        let hi = Vector3::from(self.max);
        let center = (lo + hi) * 0.5;
        let half = (hi - lo) * 0.5;
        let rel = p - center;
        let sign = rel.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        let q = rel.abs() - half;
        let outside = q.map(|v| v.max(0.0));
        let out_norm = outside.norm();
        if out_norm > 0.0 {
            return (out_norm, outside.component_mul(&sign) / out_norm);
        }
        // inside: nearest face, lowest axis on ties
        let mut axis = 0;
        for k in 1..3 {
            if q[k] > q[axis] {
                axis = k;
            }
        }
        let mut grad = Vector3::zeros();
        grad[axis] = sign[axis];
        (q[axis], grad)
    }
}

/// Union of primitives. Spheres come first in the index order used to
/// break distance ties.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleField {
    pub spheres: Vec<Sphere>,
    pub boxes: Vec<Aabb>,
}

impl ObstacleField {
    pub fn validate(&self) -> Result<(), SimError> {
        for s in &self.spheres {
            if !(s.radius > 0.0) || s.center.iter().any(|c| !c.is_finite()) {
                return Err(SimError::InvalidObstacle(format!("sphere {:?}", s)));
            }
        }
        for b in &self.boxes {
            if (0..3).any(|k| !(b.max[k] > b.min[k]) || !b.min[k].is_finite() || !b.max[k].is_finite()) {
                return Err(SimError::InvalidObstacle(format!("box {:?}", b)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spheres.len() + self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed distance to the nearest primitive; `+∞` for an empty field.
    pub fn signed_distance(&self, p: &Point3) -> (f64, Vector3<f64>) {
        let mut best = (f64::INFINITY, Vector3::x());
        let all = self
            .spheres
            .iter()
            .map(|s| s.signed_distance(p))
            .chain(self.boxes.iter().map(|b| b.signed_distance(p)));
        for candidate in all {
            if candidate.0 < best.0 {
                best = candidate;
            }
        }
        best
    }
}

impl DistanceField for ObstacleField {
    fn signed_distance(&self, p: &Point3) -> (f64, Vector3<f64>) {
        ObstacleField::signed_distance(self, p)
    }

    fn is_empty(&self) -> bool {
        ObstacleField::is_empty(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    /// Closest surface distance by dense parametric sampling, refined by
    /// alternating 1-D golden-section searches around the best sample.
    fn surface_distance_sphere(s: &Sphere, p: &Point3) -> f64 {
        let c = Vector3::from(s.center);
        let at = |th: f64, ph: f64| c + Vector3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * s.radius;
        let dist = |th: f64, ph: f64| (at(th, ph) - p).norm();
        let n = 120;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=n {
            for j in 0..2 * n {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                let ph = std::f64::consts::PI * j as f64 / n as f64;
                let d = dist(th, ph);
                if d < best.0 {
                    best = (d, th, ph);
                }
            }
        }
        let (_, mut th, mut ph) = best;
        let step = std::f64::consts::PI / n as f64;
        for _ in 0..20 {
            th = golden_min(th - 2.0 * step, th + 2.0 * step, |t| dist(t, ph));
            ph = golden_min(ph - 2.0 * step, ph + 2.0 * step, |f| dist(th, f));
        }
        dist(th, ph)
    }

    fn surface_distance_box(b: &Aabb, p: &Point3) -> f64 {
        let mut best = f64::INFINITY;
        for axis in 0..3 {
            for side in [b.min[axis], b.max[axis]] {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                let point = |a: f64, c: f64| {
                    let mut q = Vector3::zeros();
                    q[axis] = side;
                    q[u] = a;
                    q[v] = c;
                    q
                };
                let dist = |a: f64, c: f64| (point(a, c) - p).norm();
                let n = 80;
                let mut sample = (f64::INFINITY, 0.0, 0.0);
                for i in 0..=n {
                    for j in 0..=n {
                        let a = b.min[u] + (b.max[u] - b.min[u]) * i as f64 / n as f64;
                        let c = b.min[v] + (b.max[v] - b.min[v]) * j as f64 / n as f64;
                        let d = dist(a, c);
                        if d < sample.0 {
                            sample = (d, a, c);
                        }
                    }
                }
                let (_, mut a, mut c) = sample;
                for _ in 0..20 {
                    a = golden_min(b.min[u], b.max[u], |x| dist(x, c));
                    c = golden_min(b.min[v], b.max[v], |x| dist(a, x));
                }
                best = best.min(dist(a, c));
            }
        }
        best
    }

    #[test]
    fn sphere_examples() {
        let field = ObstacleField {
            spheres: vec![Sphere {
                center: [0.0; 3],
                radius: 1.0,
            }],
            boxes: vec![],
        };
        let (d, g) = field.signed_distance(&Vector3::zeros());
        assert_eq!(d, -1.0);
        assert_eq!(g, Vector3::x());
        let p = Vector3::new(1.0, 2.0, -2.0) * (2.0 / 3.0);
        let (d, g) = field.signed_distance(&p);
        assert!((d - 1.0).abs() < 1e-15);
        assert!((g - p / 2.0).norm() < 1e-15);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let field = ObstacleField {
            spheres: vec![
                Sphere {
                    center: [-2.0, 0.0, 0.0],
                    radius: 1.0,
                },
                Sphere {
                    center: [2.0, 0.0, 0.0],
                    radius: 1.0,
                },
            ],
            boxes: vec![],
        };
        let (d, g) = field.signed_distance(&Vector3::zeros());
        assert_eq!(d, 1.0);
        assert_eq!(g, Vector3::x());
    }

    #[test]
    fn box_gradient_inside_and_outside() {
        let b = Aabb {
            min: [0.0, 0.0, 0.0],
            max: [2.0, 4.0, 6.0],
        };
        let field = ObstacleField {
            spheres: vec![],
            boxes: vec![b],
        };
        let (d, g) = field.signed_distance(&Vector3::new(1.9, 2.0, 3.0));
        assert!((d + 0.1).abs() < 1e-12);
        assert_eq!(g, Vector3::x());
        let (d, g) = field.signed_distance(&Vector3::new(5.0, 8.0, 3.0));
        assert!((d - 5.0).abs() < 1e-12);
        assert!((g - Vector3::new(0.6, 0.8, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn matches_surface_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..15 {
            let s = Sphere {
                center: [
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ],
                radius: rng.random_range(0.3..2.0),
            };
            let lo = [
                rng.random_range(-3.0..0.0),
                rng.random_range(-3.0..0.0),
                rng.random_range(-3.0..0.0),
            ];
            let b = Aabb {
                min: lo,
                max: [
                    lo[0] + rng.random_range(0.5..3.0),
                    lo[1] + rng.random_range(0.5..3.0),
                    lo[2] + rng.random_range(0.5..3.0),
                ],
            };
            let field = ObstacleField {
                spheres: vec![s],
                boxes: vec![b],
            };
            for _ in 0..4 {
                let p = Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                );
                let inside_s = (p - Vector3::from(s.center)).norm() < s.radius;
                let inside_b = (0..3).all(|k| p[k] > b.min[k] && p[k] < b.max[k]);
                let ds = surface_distance_sphere(&s, &p) * if inside_s { -1.0 } else { 1.0 };
                let db = surface_distance_box(&b, &p) * if inside_b { -1.0 } else { 1.0 };
                let (d, g) = field.signed_distance(&p);
                assert!((d - ds.min(db)).abs() < 1e-6, "{d} vs {}", ds.min(db));
                assert!((g.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn validation() {
        let bad = ObstacleField {
            spheres: vec![Sphere {
                center: [0.0; 3],
                radius: 0.0,
            }],
            boxes: vec![],
        };
        assert!(bad.validate().is_err());
        let flat = ObstacleField {
            spheres: vec![],
            boxes: vec![Aabb {
                min: [0.0; 3],
                max: [1.0, 0.0, 1.0],
            }],
        };
        assert!(flat.validate().is_err());
    }
}
