//! Piecewise quintic trajectories of the minimum-jerk class.

mod banded;
mod minco;
mod poly;

pub use banded::{BandedLu, BandedMatrix};
pub use minco::{map_gradients, minco_map, piece_jerk_energy, Minco};
pub use poly::{basis, KinematicSample, Piece, PolyTrajectory, TrajectoryRecord, DEGREE, NCOEFF};

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::Point3;

/// Durations below this are rejected at construction.
pub const MIN_DURATION: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no pieces")]
    Empty,
    #[error("piece {0} has invalid duration {1}")]
    InvalidDuration(usize, f64),
    #[error("t = {t} outside [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("coefficient system is singular")]
    SingularSystem,
    #[error("no cached factorization matches this request")]
    StaleCache,
    #[error("expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("decode error: {0}")]
    Decode(&'static str),
}

/// Position, velocity and acceleration at a trajectory end.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryState {
    pub position: Point3,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl BoundaryState {
    pub fn new(position: Point3, velocity: Vector3<f64>, acceleration: Vector3<f64>) -> Self {
        Self {
            position,
            velocity,
            acceleration,
        }
    }

    pub fn at_rest(position: Point3) -> Self {
        Self {
            position,
            ..Default::default()
        }
    }
}

/// Strictly positive piece durations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVector(Vec<f64>);

impl TimeVector {
    pub fn new(durations: Vec<f64>) -> Result<Self, TrajectoryError> {
        if durations.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        if let Some(i) = durations.iter().position(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(TrajectoryError::InvalidDuration(i, durations[i]));
        }
        Ok(Self(durations))
    }

    pub fn uniform(total: f64, pieces: usize) -> Result<Self, TrajectoryError> {
        Self::new(vec![total / pieces as f64; pieces])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}
