//! Minimum-jerk (s = 3) piecewise quintic map `c = M(q, T)` and its adjoint.
//!
//! Unknowns are the 6M coefficients. Rows are ordered
//!
//! ```text
//! 0..3            head position, velocity, acceleration (piece 0 at t = 0)
//! 6i+3            piece i at Tᵢ equals waypoint qᵢ
//! 6i+4 ..= 6i+8   continuity of derivative 0..=4 between piece i and i+1
//! 6M−3..6M        tail position, velocity, acceleration (last piece at T_M)
//! ```
//!
//! which keeps the system inside a band of 4 sub- and 2 super-diagonals.

use nalgebra::{Matrix6x3, Vector3};

use super::banded::{BandedLu, BandedMatrix};
use super::poly::{basis, Piece, PolyTrajectory, NCOEFF};
use super::{BoundaryState, TimeVector, TrajectoryError, MIN_DURATION};
use crate::geometry::Point3;

const LOWER: usize = 4;
const UPPER: usize = 2;
const PIVOT_TOL: f64 = 1e-14;

/// Builder for minimum-jerk trajectories that keeps the factorization of the
/// last solve for gradient back-propagation.
#[derive(Debug, Clone)]
pub struct Minco {
    head: BoundaryState,
    tail: BoundaryState,
    pieces: usize,
    durations: Vec<f64>,
    coeffs: Vec<Matrix6x3<f64>>,
    lu: Option<BandedLu>,
}

impl Minco {
    pub fn new(head: BoundaryState, tail: BoundaryState, pieces: usize) -> Self {
        assert!(pieces >= 1, "at least one piece");
        Self {
            head,
            tail,
            pieces,
            durations: Vec::new(),
            coeffs: Vec::new(),
            lu: None,
        }
    }

    pub fn pieces(&self) -> usize {
        self.pieces
    }

    pub fn head(&self) -> &BoundaryState {
        &self.head
    }

    pub fn tail(&self) -> &BoundaryState {
        &self.tail
    }

    /// Changing a boundary invalidates the cached solution.
    pub fn set_boundaries(&mut self, head: BoundaryState, tail: BoundaryState) {
        self.head = head;
        self.tail = tail;
        self.lu = None;
    }

    pub fn coefficients(&self) -> &[Matrix6x3<f64>] {
        &self.coeffs
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    fn build_matrix(durations: &[f64]) -> BandedMatrix {
        let m = durations.len();
        let n = 6 * m;
        let mut a = BandedMatrix::zeros(n, LOWER, UPPER);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(2, 2, 2.0);
        for (i, &t) in durations.iter().enumerate().take(m - 1) {
            let col = 6 * i;
            let row = 6 * i + 3;
            for (k, v) in basis(t, 0).iter().enumerate() {
                a.set(row, col + k, *v);
            }
            for d in 0..=4 {
                let r = row + 1 + d;
                for (k, v) in basis(t, d).iter().enumerate() {
                    if *v != 0.0 {
                        a.set(r, col + k, *v);
                    }
                }
                // next piece derivative d at 0 is d!·c_{d}
                let fact: f64 = (1..=d).map(|v| v as f64).product();
                a.set(r, col + 6 + d, -fact);
            }
        }
        let t = durations[m - 1];
        let col = 6 * (m - 1);
        for d in 0..3 {
            for (k, v) in basis(t, d).iter().enumerate() {
                if *v != 0.0 {
                    a.set(n - 3 + d, col + k, *v);
                }
            }
        }
        a
    }

    fn rhs(&self, waypoints: &[Point3]) -> Vec<Vector3<f64>> {
        let n = 6 * self.pieces;
        let mut b = vec![Vector3::zeros(); n];
        b[0] = self.head.position;
        b[1] = self.head.velocity;
        b[2] = self.head.acceleration;
        for (i, q) in waypoints.iter().enumerate() {
            b[6 * i + 3] = *q;
        }
        b[n - 3] = self.tail.position;
        b[n - 2] = self.tail.velocity;
        b[n - 1] = self.tail.acceleration;
        b
    }

    /// Solves for the coefficients given `M − 1` waypoints and `M` durations.
    pub fn solve(&mut self, waypoints: &[Point3], durations: &[f64]) -> Result<(), TrajectoryError> {
        self.lu = None;
        if durations.len() != self.pieces {
            return Err(TrajectoryError::DimensionMismatch {
                what: "durations",
                expected: self.pieces,
                got: durations.len(),
            });
        }
        if waypoints.len() + 1 != self.pieces {
            return Err(TrajectoryError::DimensionMismatch {
                what: "waypoints",
                expected: self.pieces - 1,
                got: waypoints.len(),
            });
        }
        if let Some(i) = durations.iter().position(|&t| !(t >= MIN_DURATION) || !t.is_finite()) {
            return Err(TrajectoryError::InvalidDuration(i, durations[i]));
        }
        let lu = Self::build_matrix(durations)
            .factor(PIVOT_TOL)
            .map_err(|_| TrajectoryError::SingularSystem)?;
        let mut b = self.rhs(waypoints);
        lu.solve(&mut b);
        if b.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(TrajectoryError::SingularSystem);
        }
        self.coeffs = (0..self.pieces)
            .map(|i| Matrix6x3::from_fn(|k, d| b[6 * i + k][d]))
            .collect();
        self.durations = durations.to_vec();
        self.lu = Some(lu);
        Ok(())
    }

    pub fn trajectory(&self, start_time: f64) -> Result<PolyTrajectory, TrajectoryError> {
        if self.lu.is_none() {
            return Err(TrajectoryError::StaleCache);
        }
        let pieces = self
            .coeffs
            .iter()
            .zip(&self.durations)
            .map(|(c, &t)| Piece {
                coeffs: *c,
                duration: t,
            })
            .collect();
        PolyTrajectory::new(pieces, start_time)
    }

    /// Chain rule through the linear system: given `∂J/∂c` and the explicit
    /// `∂J/∂T` (coefficients held fixed), returns `(∂J/∂q, ∂J/∂T)`.
    pub fn propagate_gradient(
        &self,
        grad_coeffs: &[Matrix6x3<f64>],
        grad_durations: &[f64],
    ) -> Result<(Vec<Vector3<f64>>, Vec<f64>), TrajectoryError> {
        let lu = self.lu.as_ref().ok_or(TrajectoryError::StaleCache)?;
        let m = self.pieces;
        if grad_coeffs.len() != m || grad_durations.len() != m {
            return Err(TrajectoryError::DimensionMismatch {
                what: "gradient pieces",
                expected: m,
                got: grad_coeffs.len().min(grad_durations.len()),
            });
        }
        let mut adj: Vec<Vector3<f64>> = Vec::with_capacity(6 * m);
        for g in grad_coeffs {
            for k in 0..NCOEFF {
                adj.push(g.row(k).transpose());
            }
        }
        lu.solve_transposed(&mut adj);

        let grad_q = (0..m - 1).map(|i| adj[6 * i + 3]).collect();
        let mut grad_t = grad_durations.to_vec();
        for (i, gt) in grad_t.iter_mut().enumerate() {
            let piece = Piece {
                coeffs: self.coeffs[i],
                duration: self.durations[i],
            };
            let t = self.durations[i];
            // ∂(Ac)/∂Tᵢ picks up one more derivative of piece i at Tᵢ
            let rows: &[(usize, usize)] = if i + 1 < m {
                &[(3, 0), (4, 0), (5, 1), (6, 2), (7, 3), (8, 4)]
            } else {
                &[(3, 0), (4, 1), (5, 2)]
            };
            let base = if i + 1 < m { 6 * i } else { 6 * m - 6 };
            for &(offset, order) in rows {
                *gt -= adj[base + offset].dot(&piece.eval(t, order + 1));
            }
        }
        Ok((grad_q, grad_t))
    }

    /// Residual `‖A c − b‖∞` of the last solve.
    pub fn system_residual(&self, waypoints: &[Point3]) -> Result<f64, TrajectoryError> {
        if self.lu.is_none() {
            return Err(TrajectoryError::StaleCache);
        }
        let a = Self::build_matrix(&self.durations);
        let flat: Vec<Vector3<f64>> = self
            .coeffs
            .iter()
            .flat_map(|c| (0..NCOEFF).map(move |k| c.row(k).transpose()))
            .collect();
        let ac = a.mul_vec(&flat);
        let b = self.rhs(waypoints);
        Ok(ac.iter().zip(&b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max))
    }
}

/// Minimum-jerk trajectory through `waypoints` with the given piece times.
pub fn minco_map(
    waypoints: &[Point3],
    times: &TimeVector,
    head: &BoundaryState,
    tail: &BoundaryState,
    start_time: f64,
) -> Result<PolyTrajectory, TrajectoryError> {
    let mut m = Minco::new(*head, *tail, times.len());
    m.solve(waypoints, times.as_slice())?;
    m.trajectory(start_time)
}

/// `∫‖p⁽³⁾‖²` over one piece, with gradients w.r.t. the coefficients and
/// the duration.
pub fn piece_jerk_energy(coeffs: &Matrix6x3<f64>, t: f64) -> (f64, Matrix6x3<f64>, f64) {
    let mut value = 0.0;
    let mut grad = Matrix6x3::zeros();
    let mut grad_t = 0.0;
    let (t2, t3, t4, t5) = (t * t, t * t * t, t.powi(4), t.powi(5));
    for d in 0..3 {
        // jerk = a + b·τ + c·τ²
        let a = 6.0 * coeffs[(3, d)];
        let b = 24.0 * coeffs[(4, d)];
        let c = 60.0 * coeffs[(5, d)];
        value += a * a * t + a * b * t2 + (b * b + 2.0 * a * c) * t3 / 3.0 + b * c * t4 / 2.0 + c * c * t5 / 5.0;
        let da = 2.0 * a * t + b * t2 + 2.0 * c * t3 / 3.0;
        let db = a * t2 + 2.0 * b * t3 / 3.0 + c * t4 / 2.0;
        let dc = 2.0 * a * t3 / 3.0 + b * t4 / 2.0 + 2.0 * c * t5 / 5.0;
        grad[(3, d)] = 6.0 * da;
        grad[(4, d)] = 24.0 * db;
        grad[(5, d)] = 60.0 * dc;
        let j_end = a + b * t + c * t2;
        grad_t += j_end * j_end;
    }
    (value, grad, grad_t)
}

/// Pulls `∂J/∂c` and the explicit `∂J/∂T` back to `(∂J/∂q, ∂J/∂T)` through
/// the factorization cached by the last [`Minco::solve`].
pub fn map_gradients(
    minco: &Minco,
    grad_coeffs: &[Matrix6x3<f64>],
    grad_durations: &[f64],
) -> Result<(Vec<Vector3<f64>>, Vec<f64>), TrajectoryError> {
    minco.propagate_gradient(grad_coeffs, grad_durations)
}
