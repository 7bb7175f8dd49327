use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bus::BroadcastBus;
use super::field::ObstacleField;
use super::metrics::{MetricSample, MetricsLog, RunningStats};
use super::{DropPolicy, OutlierBehavior, OutlierPolicy, SimConfig, SimError};
use crate::formation::{
    compute_ofps, formation_error, sample_peer_frames, AgentId, FormationError, FormationSpec, Ofps, PositionFrame,
};
use crate::geometry::{align_closed_form, Point3};
use crate::optimizer::{
    optimize, targets_from_ofps, DistanceField, FormationTarget, InitialGuess, OptimizationReport, PlanningProblem,
};
use crate::trajectory::{BoundaryState, PolyTrajectory};

const DIVERGENCE_BOUND: f64 = 1e5;
const RANDOM_WALK_PERIOD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Normal,
    Outlier,
    CommLost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerRecord {
    pub trajectory: PolyTrajectory,
    pub received_at: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentFlags {
    pub replans: usize,
    pub registration_fallbacks: usize,
    pub insufficient_peers: usize,
    pub optimizer_failures: usize,
    pub line_search_failures: usize,
    /// Replans whose optimum still pays an obstacle, swarm or dynamics
    /// penalty above [`VIOLATION_TOLERANCE`] times its weight.
    pub constraint_violations: usize,
}

/// Penalty per unit weight below which a plan counts as feasible: one
/// sample violating by 1 cm.
pub const VIOLATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
struct OutlierRuntime {
    behavior: OutlierBehavior,
    velocity: Vector3<f64>,
    next_resample: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: AgentId,
    pub status: AgentStatus,
    pub trajectory: PolyTrajectory,
    pub position: Point3,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
    pub next_replan: f64,
    pub last_replan: Option<f64>,
    /// Last OFPS that passed registration, before any migration shift.
    pub last_ofps: Option<Ofps>,
    pub last_inlier_fraction: f64,
    pub peers: BTreeMap<AgentId, PeerRecord>,
    pub flags: AgentFlags,
    outlier: Option<OutlierRuntime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplanStatus {
    Registered,
    /// Registration failed; a previous OFPS was re-timed and reused.
    HeldLastOfps,
    /// Registration failed with nothing to hold; all-peer least squares.
    LeastSquaresFallback,
    OptimizerFailed,
}

#[derive(Debug, Clone)]
pub struct ReplanOutcome {
    pub agent: AgentId,
    pub status: ReplanStatus,
    /// Raw OFPS (no migration shift) used for this replan.
    pub ofps: Ofps,
    /// OFPS after the migration shift, as tracked by the planner.
    pub targets: Vec<FormationTarget>,
    pub trajectory: Option<PolyTrajectory>,
    pub report: Option<OptimizationReport>,
    /// Wall-clock seconds spent on registration and optimization.
    pub duration: f64,
}

/// Straight reference path for the formation centroid.
#[derive(Debug, Clone, Copy)]
struct ReferencePath {
    start: Point3,
    dir: Vector3<f64>,
    length: f64,
    speed: f64,
}

impl ReferencePath {
    fn position(&self, t: f64) -> Point3 {
        self.start + self.dir * (self.speed * t.max(0.0)).min(self.length)
    }

    fn velocity(&self, t: f64) -> Vector3<f64> {
        if self.speed * t < self.length {
            self.dir * self.speed
        } else {
            Vector3::zeros()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub status: String,
    pub agents: usize,
    pub simulated_time: f64,
    pub final_e_dist_all: f64,
    pub final_e_dist_normal: f64,
    pub steady_e_dist_all: f64,
    pub steady_e_dist_normal: f64,
    pub steady_window: f64,
    pub t_opt_mean: f64,
    pub t_opt_std: f64,
    pub t_opt_max: f64,
    pub min_pair_dist: f64,
    pub min_obs_clearance: Option<f64>,
    pub inlier_fraction_mean: f64,
    pub flags: AgentFlags,
    pub fully_converged: bool,
}

pub struct World {
    config: SimConfig,
    spec: FormationSpec,
    field: ObstacleField,
    bus: BroadcastBus,
    agents: Vec<AgentState>,
    step_index: u64,
    time: f64,
    next_metric: f64,
    metrics: MetricsLog,
    timing: RunningStats,
    reference: Option<ReferencePath>,
    outlier_policies: Vec<OutlierPolicy>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl World {
    /// Agents start at rest at `starts`; everybody initially knows everybody
    /// else's starting point.
    pub fn new(
        config: SimConfig,
        spec: FormationSpec,
        field: ObstacleField,
        starts: &BTreeMap<AgentId, Point3>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        field.validate()?;
        for id in starts.keys() {
            if spec.position(*id).is_none() {
                return Err(SimError::UnknownAgent(*id));
            }
        }
        let horizon = config.planner.horizon;
        let mut phase_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x5eed));
        let mut agents: Vec<AgentState> = starts
            .iter()
            .map(|(&id, &p)| {
                let phase = rand::Rng::random_range(&mut phase_rng, 0.0..config.replan_period);
                AgentState {
                    id,
                    status: AgentStatus::Normal,
                    trajectory: PolyTrajectory::stationary(p, 0.0, horizon),
                    position: p,
                    velocity: Vector3::zeros(),
                    acceleration: Vector3::zeros(),
                    next_replan: phase,
                    last_replan: None,
                    last_ofps: None,
                    last_inlier_fraction: f64::NAN,
                    peers: BTreeMap::new(),
                    flags: AgentFlags::default(),
                    outlier: None,
                }
            })
            .collect();
        let snapshot: Vec<(AgentId, PolyTrajectory)> = agents.iter().map(|a| (a.id, a.trajectory.clone())).collect();
        for agent in &mut agents {
            for (id, traj) in &snapshot {
                if *id != agent.id {
                    agent.peers.insert(
                        *id,
                        PeerRecord {
                            trajectory: traj.clone(),
                            received_at: 0.0,
                        },
                    );
                }
            }
        }
        let reference = config.goal.map(|goal| {
            let n = agents.len().max(1) as f64;
            let start = agents.iter().map(|a| a.position).sum::<Vector3<f64>>() / n;
            let delta = Vector3::from(goal) - start;
            let length = delta.norm();
            ReferencePath {
                start,
                dir: if length > 0.0 { delta / length } else { Vector3::zeros() },
                length,
                speed: config.cruise_speed,
            }
        });
        let bus = BroadcastBus::new(config.bus_latency);
        let mut world = Self {
            config,
            spec,
            field,
            bus,
            agents,
            step_index: 0,
            time: 0.0,
            next_metric: 0.0,
            metrics: MetricsLog::default(),
            timing: RunningStats::default(),
            reference,
            outlier_policies: Vec::new(),
        };
        world.next_metric = world.config.metric_period;
        Ok(world)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn spec(&self) -> &FormationSpec {
        &self.spec
    }

    pub fn field(&self) -> &ObstacleField {
        &self.field
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentState> {
        self.index_of(id).map(|i| &self.agents[i])
    }

    pub fn agent_mut(&mut self, id: AgentId) -> Option<&mut AgentState> {
        self.index_of(id).map(move |i| &mut self.agents[i])
    }

    fn index_of(&self, id: AgentId) -> Option<usize> {
        self.agents.binary_search_by_key(&id, |a| a.id).ok()
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn timing(&self) -> &RunningStats {
        &self.timing
    }

    pub fn positions(&self) -> BTreeMap<AgentId, Point3> {
        self.agents.iter().map(|a| (a.id, a.position)).collect()
    }

    pub fn normal_positions(&self) -> BTreeMap<AgentId, Point3> {
        self.agents
            .iter()
            .filter(|a| a.status != AgentStatus::Outlier)
            .map(|a| (a.id, a.position))
            .collect()
    }

    /// Installs a trajectory for an agent directly (test and setup hook).
    pub fn set_trajectory(&mut self, id: AgentId, trajectory: PolyTrajectory) -> Result<(), SimError> {
        let i = self.index_of(id).ok_or(SimError::UnknownAgent(id))?;
        let t = self.time;
        let a = &mut self.agents[i];
        a.position = trajectory.eval_extended(t, 0);
        a.velocity = trajectory.eval_extended(t, 1);
        a.acceleration = trajectory.eval_extended(t, 2);
        a.trajectory = trajectory.clone();
        for other in &mut self.agents {
            if other.id != id {
                other.peers.insert(
                    id,
                    PeerRecord {
                        trajectory: trajectory.clone(),
                        received_at: t,
                    },
                );
            }
        }
        Ok(())
    }

    /// Stops an agent from replanning (used by tests that script an agent).
    pub fn disable_replanning(&mut self, id: AgentId) -> Result<(), SimError> {
        let i = self.index_of(id).ok_or(SimError::UnknownAgent(id))?;
        self.agents[i].next_replan = f64::INFINITY;
        Ok(())
    }

    /// Marks agents as outliers from `policy.onset` on.
    pub fn inject_outliers(&mut self, policy: OutlierPolicy) -> Result<(), SimError> {
        for id in &policy.agents {
            if self.index_of(*id).is_none() {
                return Err(SimError::UnknownAgent(*id));
            }
        }
        if let OutlierBehavior::RandomWalk { sigma } = policy.behavior {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(SimError::InvalidConfig("random walk sigma must be non-negative".into()));
            }
        }
        if !policy.agents.is_empty() {
            self.outlier_policies.push(policy);
        }
        Ok(())
    }

    fn activate_events(&mut self) {
        let now = self.time;
        let seed = self.config.seed;
        for policy in &self.outlier_policies {
            if policy.onset > now + 1e-9 {
                continue;
            }
            for id in &policy.agents {
                let i = self.agents.binary_search_by_key(id, |a| a.id).expect("validated");
                let a = &mut self.agents[i];
                if a.outlier.is_some() {
                    continue;
                }
                a.status = AgentStatus::Outlier;
                a.velocity = Vector3::zeros();
                a.acceleration = Vector3::zeros();
                a.outlier = Some(OutlierRuntime {
                    behavior: policy.behavior,
                    velocity: Vector3::zeros(),
                    next_resample: now,
                    rng: ChaCha8Rng::seed_from_u64(mix(seed, (1u64 << 40) ^ id.0 as u64)),
                });
            }
        }
        for ev in &self.config.comm_loss {
            if ev.onset <= now + 1e-9 {
                if let Ok(i) = self.agents.binary_search_by_key(&ev.agent, |a| a.id) {
                    if self.agents[i].status == AgentStatus::Normal {
                        self.agents[i].status = AgentStatus::CommLost;
                        self.bus.mute(ev.agent);
                        self.bus.set_policy(ev.agent, DropPolicy::DropAll);
                    }
                }
            }
        }
    }

    fn ransac_seed(&self, id: AgentId) -> u64 {
        mix(
            mix(self.config.seed ^ self.config.ransac.rng_seed, id.0 as u64 + 1),
            self.step_index,
        )
    }

    /// Advances the world by `dt`.
    pub fn step(&mut self, dt: f64) -> Result<(), SimError> {
        assert!(dt > 0.0, "dt must be positive");
        self.activate_events();
        let now = self.time;
        let horizon = self.config.planner.horizon;

        let due: Vec<usize> = (0..self.agents.len())
            .filter(|&i| {
                let a = &self.agents[i];
                a.status != AgentStatus::Outlier && a.next_replan <= now + 1e-9
            })
            .collect();
        let outcomes: Vec<(usize, Result<ReplanOutcome, SimError>)> = {
            let world: &World = self;
            due.par_iter().map(|&i| (i, replan_index(world, i))).collect()
        };
        for (i, outcome) in outcomes {
            self.commit(i, outcome, now);
        }

        // outliers keep broadcasting their current point on the same schedule
        let period = self.config.replan_period;
        for a in &mut self.agents {
            if a.status == AgentStatus::Outlier && a.next_replan <= now + 1e-9 {
                let traj = PolyTrajectory::stationary(a.position, now, horizon);
                self.bus.broadcast(a.id, traj.to_bytes(), now);
                a.trajectory = traj;
                while a.next_replan <= now + 1e-9 {
                    a.next_replan += period;
                }
            }
        }

        self.step_index += 1;
        let t_new = self.step_index as f64 * dt;
        let t_new = if (t_new - (now + dt)).abs() < 1e-9 {
            t_new
        } else {
            now + dt
        };
        for a in &mut self.agents {
            match &mut a.outlier {
                Some(rt) => {
                    if let OutlierBehavior::RandomWalk { sigma } = rt.behavior {
                        while rt.next_resample <= now + 1e-9 {
                            let normal = Normal::new(0.0, sigma).expect("validated sigma");
                            rt.velocity = Vector3::new(
                                normal.sample(&mut rt.rng),
                                normal.sample(&mut rt.rng),
                                normal.sample(&mut rt.rng),
                            );
                            rt.next_resample += RANDOM_WALK_PERIOD;
                        }
                    }
                    let v = match rt.behavior {
                        OutlierBehavior::Frozen => Vector3::zeros(),
                        OutlierBehavior::RandomWalk { .. } => rt.velocity,
                        OutlierBehavior::ConstantDrift { velocity } => Vector3::from(velocity),
                    };
                    a.position += v * (t_new - now);
                    a.velocity = v;
                    a.acceleration = Vector3::zeros();
                }
                None => {
                    a.position = a.trajectory.eval_extended(t_new, 0);
                    a.velocity = a.trajectory.eval_extended(t_new, 1);
                    a.acceleration = a.trajectory.eval_extended(t_new, 2);
                }
            }
        }
        self.time = t_new;

        let receivers: Vec<AgentId> = self.agents.iter().map(|a| a.id).collect();
        for d in self.bus.deliver_due(t_new, &receivers) {
            let Ok(traj) = PolyTrajectory::from_bytes(&d.payload) else {
                continue;
            };
            let i = self
                .agents
                .binary_search_by_key(&d.receiver, |a| a.id)
                .expect("known receiver");
            self.agents[i].peers.insert(
                d.sender,
                PeerRecord {
                    trajectory: traj,
                    received_at: d.send_time,
                },
            );
        }

        for a in &self.agents {
            if !a.position.iter().all(|v| v.is_finite()) || a.position.amax() > DIVERGENCE_BOUND {
                return Err(SimError::SimulationDiverged {
                    time: t_new,
                    agent: a.id,
                });
            }
        }

        if t_new >= self.next_metric - 1e-9 {
            self.record_metrics();
            while self.next_metric <= t_new + 1e-9 {
                self.next_metric += self.config.metric_period;
            }
        }
        Ok(())
    }

    fn commit(&mut self, i: usize, outcome: Result<ReplanOutcome, SimError>, now: f64) {
        let horizon = self.config.planner.horizon;
        let period = self.config.replan_period;
        let a = &mut self.agents[i];
        while a.next_replan <= now + 1e-9 {
            a.next_replan += period;
        }
        a.last_replan = Some(now);
        a.flags.replans += 1;
        match outcome {
            Ok(out) => {
                self.timing.push(out.duration);
                match out.status {
                    ReplanStatus::Registered => {
                        a.last_inlier_fraction = out.ofps.mean_inlier_fraction();
                        a.last_ofps = Some(out.ofps);
                    }
                    ReplanStatus::HeldLastOfps | ReplanStatus::LeastSquaresFallback => {
                        a.flags.registration_fallbacks += 1;
                        a.last_inlier_fraction = 0.0;
                    }
                    ReplanStatus::OptimizerFailed => a.flags.optimizer_failures += 1,
                }
                if let Some(r) = &out.report {
                    if r.line_search_failed {
                        a.flags.line_search_failures += 1;
                    }
                    let w = &self.config.planner.weights;
                    let b = &r.breakdown;
                    if b.obstacle > VIOLATION_TOLERANCE * w.obstacle
                        || b.swarm > VIOLATION_TOLERANCE * w.swarm
                        || b.dynamics > VIOLATION_TOLERANCE * w.dynamics
                    {
                        a.flags.constraint_violations += 1;
                    }
                }
                if let Some(traj) = out.trajectory {
                    self.bus.broadcast(a.id, traj.to_bytes(), now);
                    a.trajectory = traj;
                }
            }
            Err(SimError::InsufficientPeers { .. }) => {
                a.flags.insufficient_peers += 1;
                let hold = PolyTrajectory::stationary(a.position, now, horizon);
                self.bus.broadcast(a.id, hold.to_bytes(), now);
                a.trajectory = hold;
            }
            Err(_) => {
                a.flags.optimizer_failures += 1;
            }
        }
    }

    fn record_metrics(&mut self) {
        let all = self.positions();
        let normal = self.normal_positions();
        let e = |m: &BTreeMap<AgentId, Point3>| {
            if m.len() >= 3 {
                formation_error(m, &self.spec).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            }
        };
        let mut min_pair = f64::INFINITY;
        for (k, a) in self.agents.iter().enumerate() {
            for b in &self.agents[k + 1..] {
                min_pair = min_pair.min((a.position - b.position).norm());
            }
        }
        let min_obs = if self.field.is_empty() {
            None
        } else {
            Some(
                self.agents
                    .iter()
                    .map(|a| self.field.signed_distance(&a.position).0)
                    .fold(f64::INFINITY, f64::min),
            )
        };
        let fractions: Vec<f64> = self
            .agents
            .iter()
            .filter(|a| a.status == AgentStatus::Normal && a.last_inlier_fraction.is_finite())
            .map(|a| a.last_inlier_fraction)
            .collect();
        let inlier = if fractions.is_empty() {
            f64::NAN
        } else {
            fractions.iter().sum::<f64>() / fractions.len() as f64
        };
        let timing = (self.config.wall_clock_timing && self.timing.count > 0).then_some(self.timing);
        self.metrics.push(MetricSample {
            time: self.time,
            e_dist_all: e(&all),
            e_dist_normal: e(&normal),
            t_opt_mean: timing.map(|t| t.mean),
            t_opt_std: timing.map(|t| t.std()),
            min_pair_dist: min_pair,
            min_obs_clearance: min_obs,
            inlier_fraction_mean: inlier,
        });
    }

    /// Steps until `duration` simulated seconds have elapsed.
    pub fn run(&mut self, duration: f64) -> Result<SimSummary, SimError> {
        let dt = self.config.dt;
        let steps = ((duration - self.time) / dt - 1e-9).ceil().max(0.0) as u64;
        for _ in 0..steps {
            self.step(dt)?;
        }
        Ok(self.summary())
    }

    pub fn summary(&self) -> SimSummary {
        let window = self.config.steady_window;
        let last = self.metrics.last();
        let mut flags = AgentFlags::default();
        for a in &self.agents {
            flags.replans += a.flags.replans;
            flags.registration_fallbacks += a.flags.registration_fallbacks;
            flags.insufficient_peers += a.flags.insufficient_peers;
            flags.optimizer_failures += a.flags.optimizer_failures;
            flags.line_search_failures += a.flags.line_search_failures;
            flags.constraint_violations += a.flags.constraint_violations;
        }
        SimSummary {
            status: "completed".into(),
            agents: self.agents.len(),
            simulated_time: self.time,
            final_e_dist_all: last.map_or(f64::NAN, |s| s.e_dist_all),
            final_e_dist_normal: last.map_or(f64::NAN, |s| s.e_dist_normal),
            steady_e_dist_all: self.metrics.steady_state_e_dist_all(window).unwrap_or(f64::NAN),
            steady_e_dist_normal: self.metrics.steady_state_e_dist_normal(window).unwrap_or(f64::NAN),
            steady_window: window,
            t_opt_mean: self.timing.mean,
            t_opt_std: self.timing.std(),
            t_opt_max: self.timing.max,
            min_pair_dist: self.metrics.min_pair_dist(),
            min_obs_clearance: self.metrics.min_obs_clearance(),
            inlier_fraction_mean: last.map_or(f64::NAN, |s| s.inlier_fraction_mean),
            flags,
            fully_converged: flags.line_search_failures == 0
                && flags.constraint_violations == 0
                && flags.optimizer_failures == 0
                && flags.insufficient_peers == 0,
        }
    }
}

/// Least-squares all-peer OFPS, used when robust registration fails and
/// there is nothing to hold on to.
fn least_squares_ofps(agent: AgentId, spec: &FormationSpec, frames: &[PositionFrame]) -> Result<Ofps, FormationError> {
    let own = *spec.position(agent).ok_or(FormationError::UnknownAgent(agent))?;
    let mut out = Ofps {
        agent_id: agent,
        times: Vec::new(),
        points: Vec::new(),
        transforms: Vec::new(),
        inlier_masks: Vec::new(),
        peer_ids: Vec::new(),
    };
    for f in frames {
        let ids: Vec<AgentId> = f.positions.keys().copied().filter(|id| *id != agent).collect();
        let src: Vec<Point3> = ids.iter().map(|id| f.positions[id]).collect();
        let dst = ids
            .iter()
            .map(|id| spec.position(*id).copied().ok_or(FormationError::UnknownAgent(*id)))
            .collect::<Result<Vec<_>, _>>()?;
        let to_world = align_closed_form(&src, &dst, None)?.inverse();
        out.times.push(f.time);
        out.points.push(to_world.apply(&own));
        out.transforms.push(to_world);
        out.inlier_masks.push(vec![true; ids.len()]);
        out.peer_ids.push(ids);
    }
    Ok(out)
}

fn segment_distance(p: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * s)).norm()
}

fn interpolate_targets(targets: &[FormationTarget], t: f64) -> Point3 {
    let first = targets.first().expect("non-empty targets");
    if t <= first.time {
        return first.point;
    }
    for w in targets.windows(2) {
        if t <= w[1].time {
            let s = (t - w[0].time) / (w[1].time - w[0].time);
            return w[0].point + (w[1].point - w[0].point) * s;
        }
    }
    targets.last().expect("non-empty targets").point
}

fn replan_index(world: &World, i: usize) -> Result<ReplanOutcome, SimError> {
    replan_agent(world, world.agents[i].id)
}

/// One replan of `id` against the current world snapshot: peer frames,
/// OFPS, planning problem, optimization. Nothing is committed.
pub fn replan_agent(world: &World, id: AgentId) -> Result<ReplanOutcome, SimError> {
    let agent = world.agent(id).ok_or(SimError::UnknownAgent(id))?;
    let cfg = &world.config;
    let planner = &cfg.planner;
    let t0 = world.time;
    let horizon = planner.horizon;

    let peers: BTreeMap<AgentId, PolyTrajectory> = agent
        .peers
        .iter()
        .filter(|(pid, rec)| {
            **pid != id && rec.received_at >= t0 - cfg.peer_timeout && world.spec.position(**pid).is_some()
        })
        .map(|(pid, rec)| (*pid, rec.trajectory.clone()))
        .collect();
    let needed = cfg.ransac.min_sample_size;
    if peers.len() < needed {
        return Err(SimError::InsufficientPeers {
            agent: id,
            available: peers.len(),
            needed,
        });
    }

    let started = Instant::now();
    let frames = sample_peer_frames(&peers, t0, horizon, planner.ofps_samples)?;
    let ransac = cfg.ransac.with_seed(world.ransac_seed(id));
    let registered = compute_ofps(id, &world.spec, &frames, &ransac).ok().filter(|o| {
        o.inlier_masks.iter().all(|m| {
            let inl = m.iter().filter(|&&b| b).count() as f64;
            inl >= cfg.min_inlier_fraction * m.len() as f64
        })
    });
    let (ofps, mut status) = match (registered, &agent.last_ofps) {
        (Some(o), _) => (o, ReplanStatus::Registered),
        (None, Some(prev)) => {
            let shift = t0 - prev.times[0];
            let mut held = prev.clone();
            held.times.iter_mut().for_each(|t| *t += shift);
            (held, ReplanStatus::HeldLastOfps)
        }
        (None, None) => (
            least_squares_ofps(id, &world.spec, &frames)?,
            ReplanStatus::LeastSquaresFallback,
        ),
    };

    // migration: pull each frame towards the reference centroid path
    let planned = match &world.reference {
        Some(reference) => {
            let centroid = world.spec.centroid();
            let last = (ofps.len() - 1).max(1) as f64;
            ofps.shifted(|m| {
                let gap = reference.position(ofps.times[m]) - ofps.transforms[m].apply(&centroid);
                let n = gap.norm();
                let gap = if n > cfg.max_migration_shift {
                    gap * (cfg.max_migration_shift / n)
                } else {
                    gap
                };
                gap * (m as f64 / last)
            })
        }
        None => ofps.clone(),
    };
    let targets = targets_from_ofps(&planned);
    let terminal = targets.last().expect("at least one frame");
    let tail_velocity = world.reference.map_or(Vector3::zeros(), |r| r.velocity(t0 + horizon));
    let head = BoundaryState::new(agent.position, agent.velocity, agent.acceleration);
    // the end point is a hard constraint, so keep it within reach; the
    // formation targets still pull towards the full OFPS
    let reach = 0.5 * planner.limits.v_max * horizon + tail_velocity.norm() * horizon;
    let offset = terminal.point - agent.position;
    let end = if offset.norm() > reach {
        agent.position + offset * (reach / offset.norm())
    } else {
        terminal.point
    };
    let tail = BoundaryState::new(end, tail_velocity, Vector3::zeros());

    let mut problem = PlanningProblem::new(planner, t0, head, tail);
    // keep peers that come near the segment from here to any target
    let reach = planner.swarm_clearance + cfg.peer_filter_margin;
    problem.peers = peers
        .iter()
        .filter(|(pid, _)| {
            frames
                .iter()
                .zip(&targets)
                .any(|(f, tgt)| segment_distance(&f.positions[*pid], &agent.position, &tgt.point) < reach)
        })
        .map(|(_, t)| t.clone())
        .collect();
    if !world.field.is_empty() {
        problem.field = Some(&world.field as &dyn DistanceField);
    }
    problem.targets = targets.clone();

    let m = planner.pieces;
    let step = horizon / m as f64;
    let guess = InitialGuess {
        waypoints: (1..m)
            .map(|k| interpolate_targets(&targets, t0 + k as f64 * step))
            .collect(),
        durations: vec![step; m],
    };
    let (trajectory, report) = match optimize(&problem, &guess, &planner.lbfgs) {
        Ok((traj, report)) => (Some(traj), Some(report)),
        Err(_) => {
            status = ReplanStatus::OptimizerFailed;
            (None, None)
        }
    };
    let duration = started.elapsed().as_secs_f64();
    Ok(ReplanOutcome {
        agent: id,
        status,
        ofps,
        targets,
        trajectory,
        report,
        duration,
    })
}
