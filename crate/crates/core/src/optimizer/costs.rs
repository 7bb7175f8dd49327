//! Penalty terms on a piecewise-quintic trajectory.
//!
//! Every term returns its weighted value together with the gradient with
//! respect to the piece coefficients and the piece durations (coefficients
//! held fixed). Inequality terms use the cubic hinge `max(0, x)³`.

use nalgebra::{Matrix6x3, Vector3};

use super::{DistanceField, DynamicLimits, OptimizerError};
use crate::geometry::Point3;
use crate::trajectory::{basis, piece_jerk_energy, KinematicSample, PolyTrajectory};

/// Tolerance for timestamps that fall numerically just before the start.
const TIME_SLACK: f64 = 1e-9;

/// Gradient of a scalar cost with respect to the trajectory parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGradient {
    pub coeffs: Vec<Matrix6x3<f64>>,
    pub durations: Vec<f64>,
}

impl TrajectoryGradient {
    pub fn zeros(pieces: usize) -> Self {
        Self {
            coeffs: vec![Matrix6x3::zeros(); pieces],
            durations: vec![0.0; pieces],
        }
    }

    pub fn add(&mut self, other: &TrajectoryGradient) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        for (a, b) in self.durations.iter_mut().zip(&other.durations) {
            *a += b;
        }
    }

    /// `∂/∂c` of `dval · p⁽ᵒʳᵈᵉʳ⁾(t)` at local time `t`.
    fn push_coeffs(&mut self, piece: usize, t: f64, order: usize, dval: &Vector3<f64>) {
        let b = basis(t, order);
        let g = &mut self.coeffs[piece];
        for (k, bk) in b.iter().enumerate() {
            if *bk != 0.0 {
                for d in 0..3 {
                    g[(k, d)] += bk * dval[d];
                }
            }
        }
    }
}

/// A formation reference point at an absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationTarget {
    pub time: f64,
    pub point: Point3,
}

#[inline]
fn hinge3(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x * x * x, 3.0 * x * x)
    } else {
        (0.0, 0.0)
    }
}

/// `weight · Σᵢ ∫‖p⁽³⁾‖²`.
pub fn cost_control_effort(traj: &PolyTrajectory, weight: f64) -> (f64, TrajectoryGradient) {
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    let mut value = 0.0;
    for (i, piece) in traj.pieces().iter().enumerate() {
        let (v, gc, gt) = piece_jerk_energy(&piece.coeffs, piece.duration);
        value += weight * v;
        grad.coeffs[i] = gc * weight;
        grad.durations[i] = gt * weight;
    }
    (value, grad)
}

/// `rho · T_Σ`.
pub fn cost_time(traj: &PolyTrajectory, rho: f64) -> (f64, TrajectoryGradient) {
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    grad.durations.iter_mut().for_each(|g| *g = rho);
    (rho * traj.total_duration(), grad)
}

/// `weight · Σⱼ ‖p(tⱼ) − p#ⱼ‖²` at absolute times. Times after the end use
/// the constant-velocity continuation of the final state.
pub fn cost_formation(
    traj: &PolyTrajectory,
    targets: &[FormationTarget],
    weight: f64,
) -> Result<(f64, TrajectoryGradient), OptimizerError> {
    let m = traj.piece_count();
    let mut grad = TrajectoryGradient::zeros(m);
    let mut value = 0.0;
    let start = traj.start_time();
    let end = traj.end_time();
    let last = m - 1;
    for target in targets {
        let t = target.time;
        if t < start - TIME_SLACK || !t.is_finite() {
            return Err(OptimizerError::TimestampOutOfDomain { t, start });
        }
        if t <= end {
            let (i, local) = traj.locate(t.max(start))?;
            let piece = &traj.pieces()[i];
            let p = piece.eval(local, 0);
            let diff = p - target.point;
            value += weight * diff.norm_squared();
            let dp = diff * (2.0 * weight);
            grad.push_coeffs(i, local, 0, &dp);
            let shift = -dp.dot(&piece.eval(local, 1));
            for g in &mut grad.durations[..i] {
                *g += shift;
            }
        } else {
            let piece = &traj.pieces()[last];
            let tl = piece.duration;
            let dt = t - end;
            let v = piece.eval(tl, 1);
            let p = piece.eval(tl, 0) + v * dt;
            let diff = p - target.point;
            value += weight * diff.norm_squared();
            let dp = diff * (2.0 * weight);
            grad.push_coeffs(last, tl, 0, &dp);
            grad.push_coeffs(last, tl, 1, &(dp * dt));
            grad.durations[last] += dp.dot(&(piece.eval(tl, 2) * dt));
            for g in &mut grad.durations[..last] {
                *g -= dp.dot(&v);
            }
        }
    }
    Ok((value, grad))
}

fn sample_ratio(traj: &PolyTrajectory, s: &KinematicSample) -> f64 {
    s.local_time / traj.pieces()[s.piece].duration
}

/// `weight · Σ max(0, d_safe − sdf(p))³` over the samples.
pub fn cost_obstacle(
    traj: &PolyTrajectory,
    samples: &[KinematicSample],
    field: &dyn DistanceField,
    d_safe: f64,
    weight: f64,
) -> (f64, TrajectoryGradient) {
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    let mut value = 0.0;
    for s in samples {
        let (dist, n) = field.signed_distance(&s.position);
        let (h, dh) = hinge3(d_safe - dist);
        if h == 0.0 {
            continue;
        }
        value += weight * h;
        let dp = n * (-weight * dh);
        grad.push_coeffs(s.piece, s.local_time, 0, &dp);
        grad.durations[s.piece] += sample_ratio(traj, s) * dp.dot(&s.velocity);
    }
    (value, grad)
}

/// Peer state for the chain rule: position and its rate with respect to
/// absolute time (zero while the peer is held at its start).
fn peer_state(peer: &PolyTrajectory, t: f64) -> (Point3, Vector3<f64>) {
    let p = peer.eval_extended(t, 0);
    let v = if t > peer.start_time() {
        peer.eval_extended(t, 1)
    } else {
        Vector3::zeros()
    };
    (p, v)
}

/// `weight · Σ max(0, clearance − ‖p(t) − q(t)‖)³` over samples and peers.
/// Peers are fixed; their time dependence still enters through the sample
/// timestamps.
pub fn cost_swarm(
    traj: &PolyTrajectory,
    samples: &[KinematicSample],
    peers: &[PolyTrajectory],
    clearance: f64,
    weight: f64,
) -> (f64, TrajectoryGradient) {
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    let mut value = 0.0;
    for s in samples {
        let ratio = sample_ratio(traj, s);
        for peer in peers {
            let (q, qv) = peer_state(peer, s.time);
            let d = s.position - q;
            let dist = d.norm();
            let (h, dh) = hinge3(clearance - dist);
            if h == 0.0 {
                continue;
            }
            value += weight * h;
            let dir = if dist > 1e-12 { d / dist } else { Vector3::x() };
            let dp = dir * (-weight * dh);
            grad.push_coeffs(s.piece, s.local_time, 0, &dp);
            // moving the sample time moves the peer: ∂C/∂q = −∂C/∂p
            let gt = -dp.dot(&qv);
            for g in &mut grad.durations[..s.piece] {
                *g += gt;
            }
            grad.durations[s.piece] += ratio * (dp.dot(&s.velocity) + gt);
        }
    }
    (value, grad)
}

/// `weight · Σ [max(0, ‖v‖² − v_max²)³ + max(0, ‖a‖² − a_max²)³]`.
pub fn cost_dynamics(
    traj: &PolyTrajectory,
    samples: &[KinematicSample],
    limits: &DynamicLimits,
    weight: f64,
) -> (f64, TrajectoryGradient) {
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    let mut value = 0.0;
    let vm2 = limits.v_max * limits.v_max;
    let am2 = limits.a_max * limits.a_max;
    for s in samples {
        let ratio = sample_ratio(traj, s);
        let (h, dh) = hinge3(s.velocity.norm_squared() - vm2);
        if h > 0.0 {
            value += weight * h;
            let dv = s.velocity * (2.0 * weight * dh);
            grad.push_coeffs(s.piece, s.local_time, 1, &dv);
            grad.durations[s.piece] += ratio * dv.dot(&s.acceleration);
        }
        let (h, dh) = hinge3(s.acceleration.norm_squared() - am2);
        if h > 0.0 {
            value += weight * h;
            let da = s.acceleration * (2.0 * weight * dh);
            grad.push_coeffs(s.piece, s.local_time, 2, &da);
            grad.durations[s.piece] += ratio * da.dot(&s.jerk);
        }
    }
    (value, grad)
}

/// Central finite-difference gradient of `f` with respect to every
/// coefficient and duration of `traj`.
pub fn finite_difference_gradient<F>(traj: &PolyTrajectory, step: f64, mut f: F) -> TrajectoryGradient
where
    F: FnMut(&PolyTrajectory) -> f64,
{
    let m = traj.piece_count();
    let mut grad = TrajectoryGradient::zeros(m);
    let rebuild = |pieces: Vec<crate::trajectory::Piece>| {
        PolyTrajectory::new(pieces, traj.start_time()).expect("perturbed trajectory stays valid")
    };
    for i in 0..m {
        for k in 0..6 {
            for d in 0..3 {
                let mut plus = traj.pieces().to_vec();
                let mut minus = traj.pieces().to_vec();
                plus[i].coeffs[(k, d)] += step;
                minus[i].coeffs[(k, d)] -= step;
                grad.coeffs[i][(k, d)] = (f(&rebuild(plus)) - f(&rebuild(minus))) / (2.0 * step);
            }
        }
        let mut plus = traj.pieces().to_vec();
        let mut minus = traj.pieces().to_vec();
        plus[i].duration += step;
        minus[i].duration -= step;
        grad.durations[i] = (f(&rebuild(plus)) - f(&rebuild(minus))) / (2.0 * step);
    }
    grad
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)` over all components.
pub fn gradient_relative_error(a: &TrajectoryGradient, b: &TrajectoryGradient, floor: f64) -> f64 {
    let flat = |g: &TrajectoryGradient| -> Vec<f64> {
        g.coeffs
            .iter()
            .flat_map(|c| c.iter().copied().collect::<Vec<_>>())
            .chain(g.durations.iter().copied())
            .collect()
    };
    let (fa, fb) = (flat(a), flat(b));
    let diff: f64 = fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = fa.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = fb.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}
