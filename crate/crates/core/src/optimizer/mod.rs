//! Penalty-transcribed trajectory optimization.
//!
//! Decision variables are the interior waypoints `q` and the unconstrained
//! log-durations `τ` (`Tᵢ = T_min + exp τᵢ`). Every evaluation maps `(q, T)` to
//! coefficients through the minimum-jerk map, sums the cost terms and pulls
//! their gradients back through the map.

mod costs;
mod lbfgs;

pub use costs::{
    cost_control_effort, cost_dynamics, cost_formation, cost_obstacle, cost_swarm, cost_time,
    finite_difference_gradient, gradient_relative_error, FormationTarget, TrajectoryGradient,
};
pub use lbfgs::{minimize, LbfgsParams, LbfgsResult, Termination};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::Ofps;
use crate::geometry::Point3;
use crate::trajectory::{BoundaryState, Minco, PolyTrajectory, TimeVector, TrajectoryError, MIN_DURATION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("formation timestamp {t} precedes trajectory start {start}")]
    TimestampOutOfDomain { t: f64, start: f64 },
    #[error("cost is not finite at the initial guess")]
    NonFiniteCost,
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Signed distance queries used by the obstacle term.
pub trait DistanceField: Sync {
    /// Signed distance (negative inside) and its spatial gradient.
    fn signed_distance(&self, p: &Point3) -> (f64, Vector3<f64>);

    /// Lets the planner skip the obstacle term entirely.
    fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerWeights {
    pub formation: f64,
    pub control_effort: f64,
    pub time: f64,
    pub obstacle: f64,
    pub swarm: f64,
    pub dynamics: f64,
    /// Time regularization; falls back to `time` when unset.
    pub rho: Option<f64>,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            formation: 300.0,
            control_effort: 80.0,
            time: 80.0,
            obstacle: 10000.0,
            swarm: 10000.0,
            dynamics: 100.0,
            rho: None,
        }
    }
}

impl PlannerWeights {
    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(self.time)
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let all = [
            self.formation,
            self.control_effort,
            self.time,
            self.obstacle,
            self.swarm,
            self.dynamics,
            self.rho(),
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(OptimizerError::InvalidProblem(
                "weights must be finite and non-negative",
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicLimits {
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for DynamicLimits {
    fn default() -> Self {
        Self { v_max: 2.0, a_max: 4.0 }
    }
}

/// `Tᵢ = floor + exp τᵢ`.
pub fn time_map(tau: &[f64], floor: f64) -> Result<TimeVector, TrajectoryError> {
    TimeVector::new(tau.iter().map(|t| floor + t.exp()).collect())
}

/// Inverse of [`time_map`]; durations at or below the floor map to a
/// very negative `τ`.
pub fn time_map_inverse(times: &[f64], floor: f64) -> Vec<f64> {
    times.iter().map(|t| (t - floor).max(MIN_DURATION).ln()).collect()
}

/// Chain rule `∂/∂τᵢ = Tᵢ · ∂/∂Tᵢ`.
pub fn time_map_gradient(tau: &[f64], grad_t: &[f64]) -> Vec<f64> {
    tau.iter().zip(grad_t).map(|(t, g)| t.exp() * g).collect()
}

/// Planner settings shared by all agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub weights: PlannerWeights,
    pub limits: DynamicLimits,
    pub pieces: usize,
    pub kappa: usize,
    pub horizon: f64,
    /// Lower bound on the trajectory length as a fraction of the horizon,
    /// spread evenly over the pieces. Without it the time penalty can
    /// collapse a trajectory whose targets are already met.
    pub min_duration_fraction: f64,
    pub ofps_samples: usize,
    pub obstacle_clearance: f64,
    pub swarm_clearance: f64,
    pub lbfgs: LbfgsParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            weights: PlannerWeights::default(),
            limits: DynamicLimits::default(),
            pieces: 5,
            kappa: 8,
            horizon: 3.0,
            min_duration_fraction: 0.8,
            ofps_samples: 15,
            obstacle_clearance: 0.5,
            swarm_clearance: 0.6,
            lbfgs: LbfgsParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        self.weights.validate()?;
        if !(self.limits.v_max > 0.0 && self.limits.a_max > 0.0) {
            return Err(OptimizerError::InvalidProblem("dynamic limits must be positive"));
        }
        if self.pieces == 0 || self.kappa == 0 || self.ofps_samples == 0 {
            return Err(OptimizerError::InvalidProblem(
                "pieces, kappa and ofps_samples must be positive",
            ));
        }
        if !(self.horizon > 0.0) {
            return Err(OptimizerError::InvalidProblem("horizon must be positive"));
        }
        if !(0.0..1.0).contains(&self.min_duration_fraction) {
            return Err(OptimizerError::InvalidProblem(
                "min_duration_fraction must lie in [0, 1)",
            ));
        }
        if !(self.obstacle_clearance >= 0.0 && self.swarm_clearance >= 0.0) {
            return Err(OptimizerError::InvalidProblem("clearances must be non-negative"));
        }
        Ok(())
    }
}

pub fn targets_from_ofps(ofps: &Ofps) -> Vec<FormationTarget> {
    ofps.times
        .iter()
        .zip(&ofps.points)
        .map(|(&time, &point)| FormationTarget { time, point })
        .collect()
}

/// One agent's trajectory optimization problem.
#[derive(Clone)]
pub struct PlanningProblem<'a> {
    pub start_time: f64,
    pub head: BoundaryState,
    pub tail: BoundaryState,
    pub targets: Vec<FormationTarget>,
    pub peers: Vec<PolyTrajectory>,
    pub field: Option<&'a dyn DistanceField>,
    pub weights: PlannerWeights,
    pub limits: DynamicLimits,
    /// Constraint samples per piece.
    pub kappa: Vec<usize>,
    /// Every piece lasts at least this long.
    pub min_piece_duration: f64,
    pub obstacle_clearance: f64,
    pub swarm_clearance: f64,
}

impl<'a> PlanningProblem<'a> {
    /// Problem with the configured defaults and a uniform `κ`.
    pub fn new(config: &PlannerConfig, start_time: f64, head: BoundaryState, tail: BoundaryState) -> Self {
        Self {
            start_time,
            head,
            tail,
            targets: Vec::new(),
            peers: Vec::new(),
            field: None,
            weights: config.weights,
            limits: config.limits,
            kappa: vec![config.kappa; config.pieces],
            min_piece_duration: config.min_duration_fraction * config.horizon / config.pieces as f64,
            obstacle_clearance: config.obstacle_clearance,
            swarm_clearance: config.swarm_clearance,
        }
    }

    pub fn pieces(&self) -> usize {
        self.kappa.len()
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        self.weights.validate()?;
        if self.kappa.is_empty() || self.kappa.contains(&0) {
            return Err(OptimizerError::InvalidProblem("kappa must be positive for every piece"));
        }
        if !(self.limits.v_max > 0.0 && self.limits.a_max > 0.0) {
            return Err(OptimizerError::InvalidProblem("dynamic limits must be positive"));
        }
        if !(self.min_piece_duration >= 0.0 && self.min_piece_duration.is_finite()) {
            return Err(OptimizerError::InvalidProblem(
                "min_piece_duration must be non-negative",
            ));
        }
        Ok(())
    }
}

impl std::fmt::Debug for PlanningProblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PlanningProblem")
            .field("start_time", &self.start_time)
            .field("head", &self.head)
            .field("tail", &self.tail)
            .field("targets", &self.targets.len())
            .field("peers", &self.peers.len())
            .field("field", &self.field.is_some())
            .field("weights", &self.weights)
            .field("kappa", &self.kappa)
            .field("min_piece_duration", &self.min_piece_duration)
            .finish()
    }
}

/// Weighted value of every cost term.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub control_effort: f64,
    pub time: f64,
    pub formation: f64,
    pub obstacle: f64,
    pub swarm: f64,
    pub dynamics: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.control_effort + self.time + self.formation + self.obstacle + self.swarm + self.dynamics
    }
}

/// Initial waypoints and durations.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub waypoints: Vec<Point3>,
    pub durations: Vec<f64>,
}

impl InitialGuess {
    /// Evenly spaced waypoints on the segment between the boundary
    /// positions, with uniform durations.
    pub fn straight_line(head: &BoundaryState, tail: &BoundaryState, pieces: usize, total: f64) -> Self {
        let waypoints = (1..pieces)
            .map(|i| head.position + (tail.position - head.position) * (i as f64 / pieces as f64))
            .collect();
        Self {
            waypoints,
            durations: vec![total / pieces as f64; pieces],
        }
    }

    /// Waypoints and durations read back from a trajectory.
    pub fn from_trajectory(traj: &PolyTrajectory) -> Self {
        let pieces = traj.pieces();
        Self {
            waypoints: pieces[..pieces.len() - 1]
                .iter()
                .map(|p| p.eval(p.duration, 0))
                .collect(),
            durations: traj.durations(),
        }
    }

    /// Decision vector for pieces no shorter than `min_piece_duration`.
    pub fn to_vector(&self, min_piece_duration: f64) -> Vec<f64> {
        let mut x: Vec<f64> = self.waypoints.iter().flat_map(|q| [q.x, q.y, q.z]).collect();
        x.extend(time_map_inverse(&self.durations, min_piece_duration));
        x
    }
}

fn unpack(x: &[f64], pieces: usize) -> (Vec<Point3>, &[f64]) {
    let nq = 3 * (pieces - 1);
    let q = x[..nq]
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect();
    (q, &x[nq..])
}

/// Evaluation of the full objective at a decision vector.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub breakdown: CostBreakdown,
    pub gradient: Vec<f64>,
    pub trajectory: PolyTrajectory,
}

/// Sums every cost term on `traj`, returning the weighted breakdown and the
/// gradient with respect to coefficients and durations.
pub fn evaluate_trajectory(
    problem: &PlanningProblem<'_>,
    traj: &PolyTrajectory,
) -> Result<(CostBreakdown, TrajectoryGradient), OptimizerError> {
    let w = &problem.weights;
    let mut grad = TrajectoryGradient::zeros(traj.piece_count());
    let mut out = CostBreakdown::default();

    let (v, g) = cost_control_effort(traj, w.control_effort);
    out.control_effort = v;
    grad.add(&g);
    let (v, g) = cost_time(traj, w.rho());
    out.time = v;
    grad.add(&g);
    if !problem.targets.is_empty() && w.formation > 0.0 {
        let (v, g) = cost_formation(traj, &problem.targets, w.formation)?;
        out.formation = v;
        grad.add(&g);
    }

    let need_obstacle = w.obstacle > 0.0 && problem.field.is_some_and(|f| !f.is_empty());
    let need_swarm = w.swarm > 0.0 && !problem.peers.is_empty();
    let samples = traj.sample_constraint_points_per_piece(&problem.kappa);
    if let (true, Some(field)) = (need_obstacle, problem.field) {
        let (v, g) = cost_obstacle(traj, &samples, field, problem.obstacle_clearance, w.obstacle);
        out.obstacle = v;
        grad.add(&g);
    }
    if need_swarm {
        let (v, g) = cost_swarm(traj, &samples, &problem.peers, problem.swarm_clearance, w.swarm);
        out.swarm = v;
        grad.add(&g);
    }
    if w.dynamics > 0.0 {
        let (v, g) = cost_dynamics(traj, &samples, &problem.limits, w.dynamics);
        out.dynamics = v;
        grad.add(&g);
    }
    Ok((out, grad))
}

/// Evaluates the objective and its gradient in `(q, τ)`.
pub struct Objective<'p, 'a> {
    problem: &'p PlanningProblem<'a>,
    minco: Minco,
}

impl<'p, 'a> Objective<'p, 'a> {
    pub fn new(problem: &'p PlanningProblem<'a>) -> Self {
        Self {
            problem,
            minco: Minco::new(problem.head, problem.tail, problem.pieces()),
        }
    }

    pub fn evaluate(&mut self, x: &[f64]) -> Result<Evaluation, OptimizerError> {
        let m = self.problem.pieces();
        if x.len() != 4 * m - 3 {
            return Err(OptimizerError::InvalidProblem(
                "decision vector length does not match piece count",
            ));
        }
        let (q, tau) = unpack(x, m);
        let times = time_map(tau, self.problem.min_piece_duration)?;
        self.minco.solve(&q, times.as_slice())?;
        let traj = self.minco.trajectory(self.problem.start_time)?;
        let (breakdown, grad) = evaluate_trajectory(self.problem, &traj)?;
        let (gq, gt) = self.minco.propagate_gradient(&grad.coeffs, &grad.durations)?;
        let mut gradient: Vec<f64> = gq.iter().flat_map(|v| [v.x, v.y, v.z]).collect();
        gradient.extend(time_map_gradient(tau, &gt));
        Ok(Evaluation {
            breakdown,
            gradient,
            trajectory: traj,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub line_search_failed: bool,
    pub initial_cost: f64,
    pub breakdown: CostBreakdown,
    pub grad_norm: f64,
    pub cost_history: Vec<f64>,
}

impl OptimizationReport {
    pub fn final_cost(&self) -> f64 {
        self.breakdown.total()
    }

    pub fn converged(&self) -> bool {
        !self.line_search_failed
    }
}

/// Minimizes the problem objective from `guess` with L-BFGS.
pub fn optimize(
    problem: &PlanningProblem<'_>,
    guess: &InitialGuess,
    params: &LbfgsParams,
) -> Result<(PolyTrajectory, OptimizationReport), OptimizerError> {
    problem.validate()?;
    let m = problem.pieces();
    if guess.durations.len() != m || guess.waypoints.len() + 1 != m {
        return Err(OptimizerError::InvalidProblem(
            "initial guess does not match piece count",
        ));
    }
    let x0 = guess.to_vector(problem.min_piece_duration);
    let mut objective = Objective::new(problem);
    let initial = objective.evaluate(&x0)?;
    let initial_cost = initial.breakdown.total();
    if !initial_cost.is_finite() || initial.gradient.iter().any(|g| !g.is_finite()) {
        return Err(OptimizerError::NonFiniteCost);
    }

    let result = minimize(
        |x, g| match objective.evaluate(x) {
            Ok(e) => {
                let total = e.breakdown.total();
                if total.is_finite() && e.gradient.iter().all(|v| v.is_finite()) {
                    g.copy_from_slice(&e.gradient);
                    total
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        },
        x0,
        params,
    );

    let final_eval = objective.evaluate(&result.x)?;
    let report = OptimizationReport {
        iterations: result.iterations,
        evaluations: result.evaluations + 2,
        termination: result.termination,
        line_search_failed: result.termination == Termination::LineSearchFailure,
        initial_cost,
        breakdown: final_eval.breakdown,
        grad_norm: result.grad_norm,
        cost_history: result.cost_history,
    };
    Ok((final_eval.trajectory, report))
}
