//! RANSAC over id-matched correspondences for Sim(3) registration.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{align_closed_form, GeometryError, Point3, Sim3Transform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RansacError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no hypothesis reached {0} inliers")]
    NoConsensus(usize),
    #[error("every drawn sample was degenerate")]
    DegenerateConfiguration,
    #[error("inlier ratio {0} outside (0, 1]")]
    InvalidRatio(f64),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    /// Residual bound (m) for a correspondence to count as inlier.
    pub inlier_threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_sample_size: usize,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 0.15,
            confidence: 0.99,
            max_iterations: 1000,
            min_sample_size: 3,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), RansacError> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RansacError::InvalidConfig("confidence must lie in (0, 1)"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(RansacError::InvalidConfig("inlier_threshold must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(RansacError::InvalidConfig("max_iterations must be at least 1"));
        }
        if self.min_sample_size < 3 {
            return Err(RansacError::InvalidConfig("min_sample_size must be at least 3"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustRegistration {
    pub transform: Sim3Transform,
    /// Classification of every correspondence under `transform`.
    pub inlier_mask: Vec<bool>,
    /// Mask the final least-squares refit was computed on. Equal to
    /// `inlier_mask` unless the second polish pass still moved the boundary.
    pub refit_mask: Vec<bool>,
    pub iterations_used: usize,
    pub inlier_residual_rms: f64,
}

impl RobustRegistration {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }

    pub fn inlier_fraction(&self) -> f64 {
        if self.inlier_mask.is_empty() {
            0.0
        } else {
            self.inlier_count() as f64 / self.inlier_mask.len() as f64
        }
    }
}

/// Adaptive RANSAC stopping bound `⌈log(1−p)/log(1−wᵏ)⌉`, at least 1.
pub fn required_iterations(confidence: f64, inlier_ratio: f64, sample_size: usize) -> Result<usize, RansacError> {
    if !(inlier_ratio > 0.0 && inlier_ratio <= 1.0) {
        return Err(RansacError::InvalidRatio(inlier_ratio));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(RansacError::InvalidConfig("confidence must lie in (0, 1)"));
    }
    let all_good = inlier_ratio.powi(sample_size as i32);
    if all_good >= 1.0 {
        return Ok(1);
    }
    let denom = (1.0 - all_good).ln();
    if denom == 0.0 {
        // wᵏ below f64 resolution
        return Ok(usize::MAX);
    }
    let n = ((1.0 - confidence).ln() / denom).ceil();
    Ok(if n.is_finite() && n < usize::MAX as f64 {
        (n as usize).max(1)
    } else {
        usize::MAX
    })
}

/// Least-squares refit restricted to `mask`.
pub fn refit_inliers(src: &[Point3], dst: &[Point3], mask: &[bool]) -> Result<Sim3Transform, GeometryError> {
    if mask.len() != src.len() {
        return Err(GeometryError::LengthMismatch(src.len(), mask.len()));
    }
    let (s, d): (Vec<Point3>, Vec<Point3>) = src
        .iter()
        .zip(dst)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((s, d), _)| (*s, *d))
        .unzip();
    align_closed_form(&s, &d, None)
}

struct Score {
    mask: Vec<bool>,
    count: usize,
    rms: f64,
}

fn score(transform: &Sim3Transform, src: &[Point3], dst: &[Point3], threshold: f64) -> Score {
    let mut mask = vec![false; src.len()];
    let mut count = 0;
    let mut sq = 0.0;
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let r2 = (d - transform.apply(s)).norm_squared();
        if r2 <= threshold * threshold {
            mask[i] = true;
            count += 1;
            sq += r2;
        }
    }
    let rms = if count > 0 {
        (sq / count as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Score { mask, count, rms }
}

/// Registers `src` onto `dst` (index-matched) with RANSAC consensus.
///
/// Degenerate minimal samples are redrawn without consuming the iteration
/// budget, up to `10 × max_iterations` draws in total. Equal consensus
/// counts are broken by lower inlier RMS, then by draw order.
pub fn ransac_register(src: &[Point3], dst: &[Point3], cfg: &RansacConfig) -> Result<RobustRegistration, RansacError> {
    cfg.validate()?;
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch(src.len(), dst.len()).into());
    }
    let n = src.len();
    let k = cfg.min_sample_size;
    if n < k {
        return Err(RansacError::TooFewPoints { needed: k, got: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let max_draws = cfg.max_iterations.saturating_mul(10);
    let mut budget = cfg.max_iterations;
    let mut iterations = 0usize;
    let mut draws = 0usize;
    let mut best: Option<(Sim3Transform, Score)> = None;
    let mut sample_src = Vec::with_capacity(k);
    let mut sample_dst = Vec::with_capacity(k);

    while iterations < budget && draws < max_draws {
        draws += 1;
        let picks = index::sample(&mut rng, n, k);
        sample_src.clear();
        sample_dst.clear();
        for i in picks.iter() {
            sample_src.push(src[i]);
            sample_dst.push(dst[i]);
        }
        let hypothesis = match align_closed_form(&sample_src, &sample_dst, None) {
            Ok(t) => t,
            Err(_) => continue,
        };
        iterations += 1;
        let s = score(&hypothesis, src, dst, cfg.inlier_threshold);
        let better = match &best {
            None => true,
            Some((_, b)) => s.count > b.count || (s.count == b.count && s.rms < b.rms),
        };
        if better {
            if s.count > 0 {
                let ratio = s.count as f64 / n as f64;
                let adaptive = required_iterations(cfg.confidence, ratio, k)?;
                budget = adaptive.min(cfg.max_iterations);
            }
            best = Some((hypothesis, s));
        }
    }

    let (hypothesis, hyp_score) = match best {
        None => return Err(RansacError::DegenerateConfiguration),
        Some(b) => b,
    };
    if hyp_score.count < k {
        return Err(RansacError::NoConsensus(k));
    }

    // two-pass polish: refit, reclassify, refit again if the mask moved
    let mut refit_mask = hyp_score.mask.clone();
    let mut transform = hypothesis;
    let mut current = hyp_score;
    for _ in 0..2 {
        let candidate = match refit_inliers(src, dst, &current.mask) {
            Ok(t) => t,
            Err(_) => break,
        };
        let next = score(&candidate, src, dst, cfg.inlier_threshold);
        if next.count < k {
            break;
        }
        refit_mask = current.mask.clone();
        transform = candidate;
        let unchanged = next.mask == current.mask;
        current = next;
        if unchanged {
            break;
        }
    }

    Ok(RobustRegistration {
        transform,
        inlier_mask: current.mask,
        refit_mask,
        iterations_used: iterations,
        inlier_residual_rms: current.rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::Rng;

    fn setup(seed: u64, n: usize) -> (Sim3Transform, Vec<Point3>, Vec<Point3>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rv = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let t = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let truth = Sim3Transform::from_parts(rv, t, rng.random_range(0.5..2.0));
        let src: Vec<Point3> = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let dst = src.iter().map(|p| truth.apply(p)).collect();
        (truth, src, dst, rng)
    }

    #[test]
    fn required_iterations_examples() {
        assert_eq!(required_iterations(0.99, 1.0, 3).unwrap(), 1);
        assert_eq!(required_iterations(0.99, 0.5, 3).unwrap(), 35);
        assert_eq!(required_iterations(0.99, 0.9, 3).unwrap(), 4);
        assert_eq!(required_iterations(0.99, 0.0, 3), Err(RansacError::InvalidRatio(0.0)));
        assert_eq!(required_iterations(0.99, 1.5, 3), Err(RansacError::InvalidRatio(1.5)));
    }

    #[test]
    fn clean_cloud_all_inliers() {
        let (truth, src, dst, _) = setup(11, 40);
        let reg = ransac_register(&src, &dst, &RansacConfig::default()).unwrap();
        assert!(reg.transform.max_abs_diff(&truth) < 1e-8);
        assert!(reg.inlier_mask.iter().all(|&m| m));
        assert_eq!(reg.iterations_used, 1);
    }

    #[test]
    fn thirty_percent_outliers() {
        let (truth, src, mut dst, mut rng) = setup(12, 40);
        for d in dst.iter_mut().take(12) {
            *d = Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            );
        }
        let reg = ransac_register(&src, &dst, &RansacConfig::default()).unwrap();
        let expected: Vec<bool> = (0..40).map(|i| i >= 12).collect();
        assert_eq!(reg.inlier_mask, expected);
        assert!(reg.transform.max_abs_diff(&truth) < 1e-6);
    }

    #[test]
    fn too_few_points() {
        let (_, src, dst, _) = setup(13, 2);
        assert_eq!(
            ransac_register(&src, &dst, &RansacConfig::default()),
            Err(RansacError::TooFewPoints { needed: 3, got: 2 })
        );
    }

    #[test]
    fn all_degenerate_samples() {
        let src: Vec<Point3> = (0..6).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let err = ransac_register(&src, &src, &RansacConfig::default()).unwrap_err();
        assert_eq!(err, RansacError::DegenerateConfiguration);
    }

    #[test]
    fn no_consensus_when_everything_disagrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let src: Vec<Point3> = (0..12)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let dst: Vec<Point3> = (0..12)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let cfg = RansacConfig {
            inlier_threshold: 1e-6,
            ..Default::default()
        };
        assert_eq!(ransac_register(&src, &dst, &cfg), Err(RansacError::NoConsensus(3)));
    }

    #[test]
    fn refit_examples() {
        let (truth, src, mut dst, _) = setup(15, 10);
        let all = vec![true; 10];
        assert_eq!(
            refit_inliers(&src, &dst, &all).unwrap(),
            align_closed_form(&src, &dst, None).unwrap()
        );
        dst[4] += Vector3::new(3.0, -1.0, 2.0);
        let mut mask = all.clone();
        mask[4] = false;
        assert!(refit_inliers(&src, &dst, &mask).unwrap().max_abs_diff(&truth) < 1e-9);

        let line: Vec<Point3> = (0..5).map(|i| Vector3::new(i as f64, i as f64, 0.0)).collect();
        let mut src2 = src.clone();
        src2[..5].copy_from_slice(&line);
        let m: Vec<bool> = (0..10).map(|i| i < 3).collect();
        assert_eq!(
            refit_inliers(&src2, &dst, &m),
            Err(GeometryError::DegenerateConfiguration)
        );
    }

    #[test]
    fn deterministic_for_seed() {
        let (_, src, mut dst, mut rng) = setup(16, 30);
        for d in dst.iter_mut().take(8) {
            *d += Vector3::new(rng.random_range(-4.0..4.0), 2.0, 0.0);
        }
        let cfg = RansacConfig::default().with_seed(99);
        let a = ransac_register(&src, &dst, &cfg).unwrap();
        let b = ransac_register(&src, &dst, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_config() {
        let (_, src, dst, _) = setup(17, 10);
        let cfg = RansacConfig {
            confidence: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            ransac_register(&src, &dst, &cfg),
            Err(RansacError::InvalidConfig(_))
        ));
    }
}
