//! Sim(3) transforms, weighted closed-form alignment and per-point influence.
//!
//! Alignment minimizes the weighted *squared* residual
//! `Σ wᵢ‖dstᵢ − (s·R·srcᵢ + t)‖²`, which has a closed-form solution through
//! the SVD of the weighted cross-covariance. Robustness against gross
//! outliers is supplied one level up by [`crate::robust`].

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

/// A position in meters.
pub type Point3 = Vector3<f64>;

/// Ratio between the second-largest and largest eigenvalue of the centered
/// source scatter below which the configuration is treated as collinear.
pub const COLLINEARITY_RATIO: f64 = 1e-9;

/// Computed scales at or below this value are rejected.
pub const MIN_SCALE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("at least 3 correspondences are required, got {0}")]
    TooFewPoints(usize),
    #[error("source points are collinear or coincident")]
    DegenerateConfiguration,
    #[error("estimated scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("weights must be non-negative with a positive sum")]
    InvalidWeights,
}

/// Similarity transform `p ↦ s·R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        Self {
            rotation,
            translation,
            scale,
        }
    }

    /// Builds a transform from an axis-angle rotation vector.
    pub fn from_parts(rotation_vector: Vector3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        let rotation = nalgebra::Rotation3::new(rotation_vector).into_inner();
        Self::new(rotation, translation, scale)
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `apply(compose(a, b), p) == apply(a, apply(b, p))`.
    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let rt = self.rotation.transpose();
        let inv_scale = 1.0 / self.scale;
        Sim3Transform {
            rotation: rt,
            translation: -inv_scale * (rt * self.translation),
            scale: inv_scale,
        }
    }

    /// Rotation angle of `R` in radians.
    pub fn rotation_angle(&self) -> f64 {
        ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Checks `RᵀR = I`, `det R = +1` (both within `tol`) and `s > 0`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let orth = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        orth <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
            && self.scale > 0.0
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Largest absolute difference across rotation, translation and scale.
    pub fn max_abs_diff(&self, other: &Sim3Transform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t).max((self.scale - other.scale).abs())
    }
}

/// Optional guard rails for [`align_closed_form_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlignOptions {
    /// Clamp the estimated scale into `[min, max]`; disabled by default.
    pub scale_bounds: Option<(f64, f64)>,
}

pub fn align_closed_form(
    src: &[Point3],
    dst: &[Point3],
    weights: Option<&[f64]>,
) -> Result<Sim3Transform, GeometryError> {
    align_closed_form_with(src, dst, weights, &AlignOptions::default())
}

/// Weighted least-squares similarity from `src` onto `dst`.
pub fn align_closed_form_with(
    src: &[Point3],
    dst: &[Point3],
    weights: Option<&[f64]>,
    options: &AlignOptions,
) -> Result<Sim3Transform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(GeometryError::TooFewPoints(src.len()));
    }
    if let Some(w) = weights {
        if w.len() != src.len() {
            return Err(GeometryError::LengthMismatch(src.len(), w.len()));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(GeometryError::InvalidWeights);
        }
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(weight).sum();
    if !(total > 0.0) {
        return Err(GeometryError::InvalidWeights);
    }

    let mut mu_src = Vector3::zeros();
    let mut mu_dst = Vector3::zeros();
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let w = weight(i);
        mu_src += w * s;
        mu_dst += w * d;
    }
    mu_src /= total;
    mu_dst /= total;

    let mut cross = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let w = weight(i);
        let sc = s - mu_src;
        let dc = d - mu_dst;
        cross += w * dc * sc.transpose();
        scatter += w * sc * sc.transpose();
    }
    cross /= total;
    scatter /= total;

    let mut eig = SymmetricEigen::new(scatter).eigenvalues.as_slice().to_vec();
    eig.sort_by(|a, b| b.total_cmp(a));
    if !(eig[0] > 0.0) || eig[1] < COLLINEARITY_RATIO * eig[0] {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let src_var = scatter.trace();

    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sv = svd.singular_values;
    let mut sign = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        // flip the direction with the smallest singular value
        let imin = sv.imin();
        sign[imin] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&sign) * v_t;
    let mut scale = sv.dot(&sign) / src_var;
    if !(scale > MIN_SCALE) {
        return Err(GeometryError::NonPositiveScale(scale));
    }
    if let Some((lo, hi)) = options.scale_bounds {
        scale = scale.clamp(lo, hi);
    }
    let translation = mu_dst - scale * (rotation * mu_src);
    Ok(Sim3Transform {
        rotation,
        translation,
        scale,
    })
}

/// Per-pair residual norms `‖dstᵢ − T(srcᵢ)‖`, in input order.
pub fn residuals(transform: &Sim3Transform, src: &[Point3], dst: &[Point3]) -> Result<Vec<f64>, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch(src.len(), dst.len()));
    }
    Ok(src
        .iter()
        .zip(dst)
        .map(|(s, d)| (d - transform.apply(s)).norm())
        .collect())
}

/// Sum of unsquared residual norms.
pub fn residual_norm_sum(transform: &Sim3Transform, src: &[Point3], dst: &[Point3]) -> f64 {
    src.iter().zip(dst).map(|(s, d)| (d - transform.apply(s)).norm()).sum()
}

pub fn centroid(points: &[Point3]) -> Point3 {
    if points.is_empty() {
        return Point3::zeros();
    }
    points.iter().sum::<Vector3<f64>>() / points.len() as f64
}

/// A point's contribution to the registration information matrix.
///
/// With the centered point `p′`, the scale block is `‖p′‖²`, the rotation
/// block `s²‖p′‖²`, and the translation block is the identity regardless of
/// where the point sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceSummary {
    pub scale_info: f64,
    pub rotation_info: f64,
    pub translation_info: Matrix3<f64>,
}

pub fn influence(p_centered: &Point3, scale: f64) -> InfluenceSummary {
    let sq = p_centered.norm_squared();
    InfluenceSummary {
        scale_info: sq,
        rotation_info: scale * scale * sq,
        translation_info: Matrix3::identity(),
    }
}
