//! Distributed, asynchronous swarm simulation.
//!
//! A single coordinator advances time in fixed steps. Agents replan on a
//! fixed period with per-agent phase offsets; replans read an immutable
//! snapshot of the world, run in parallel, and are committed in id order so
//! runs are reproducible under a fixed seed.

mod bus;
mod field;
mod metrics;
mod world;

pub use bus::{BroadcastBus, Delivery, DropPolicy, Message};
pub use field::{Aabb, ObstacleField, Sphere};
pub use metrics::{MetricSample, MetricsLog, RunningStats, CSV_HEADER};
pub use world::{
    replan_agent, AgentFlags, AgentState, AgentStatus, PeerRecord, ReplanOutcome, ReplanStatus, SimSummary, World,
    VIOLATION_TOLERANCE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formation::{AgentId, FormationError};
use crate::optimizer::{OptimizerError, PlannerConfig};
use crate::robust::RansacConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid obstacle: {0}")]
    InvalidObstacle(String),
    #[error("agent {0} is not part of the swarm")]
    UnknownAgent(AgentId),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("agent {agent} diverged at t = {time}")]
    SimulationDiverged { time: f64, agent: AgentId },
    #[error("agent {agent} sees {available} peers, needs {needed}")]
    InsufficientPeers {
        agent: AgentId,
        available: usize,
        needed: usize,
    },
    #[error(transparent)]
    Formation(#[from] FormationError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutlierBehavior {
    Frozen,
    /// Piecewise-constant velocity, each axis drawn from `N(0, σ²)` and
    /// resampled every second.
    RandomWalk {
        sigma: f64,
    },
    ConstantDrift {
        velocity: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierPolicy {
    pub agents: Vec<AgentId>,
    pub behavior: OutlierBehavior,
    #[serde(default)]
    pub onset: f64,
}

/// An agent whose radio fails: it neither sends nor receives from `onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommLossEvent {
    pub agent: AgentId,
    pub onset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub metric_period: f64,
    pub replan_period: f64,
    pub bus_latency: f64,
    /// Peers silent for longer than this are dropped from frames.
    pub peer_timeout: f64,
    /// Registrations whose inlier fraction falls below this count as failed.
    pub min_inlier_fraction: f64,
    /// Formation-centroid goal; `None` keeps the swarm where it forms up.
    pub goal: Option<[f64; 3]>,
    pub cruise_speed: f64,
    /// Bound on the per-replan pull towards the migration reference.
    pub max_migration_shift: f64,
    /// Peers that never come within clearance + margin of the straight
    /// path from the agent to its OFPS are ignored by the avoidance term.
    pub peer_filter_margin: f64,
    pub steady_window: f64,
    /// Record replan wall times in the metrics CSV (makes it run-dependent).
    pub wall_clock_timing: bool,
    pub seed: u64,
    pub planner: PlannerConfig,
    pub ransac: RansacConfig,
    pub comm_loss: Vec<CommLossEvent>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.05,
            metric_period: 0.2,
            replan_period: 0.5,
            bus_latency: 0.0,
            peer_timeout: 2.0,
            min_inlier_fraction: 0.5,
            goal: None,
            cruise_speed: 1.0,
            max_migration_shift: 1.5,
            peer_filter_margin: 2.0,
            steady_window: 5.0,
            wall_clock_timing: false,
            seed: 0,
            planner: PlannerConfig::default(),
            ransac: RansacConfig::default(),
            comm_loss: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("metric_period", self.metric_period),
            ("replan_period", self.replan_period),
            ("peer_timeout", self.peer_timeout),
            ("cruise_speed", self.cruise_speed),
            ("steady_window", self.steady_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.bus_latency >= 0.0) {
            return Err(SimError::InvalidConfig("bus_latency must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.min_inlier_fraction) {
            return Err(SimError::InvalidConfig("min_inlier_fraction must lie in [0, 1]".into()));
        }
        if !(self.max_migration_shift >= 0.0 && self.peer_filter_margin >= 0.0) {
            return Err(SimError::InvalidConfig("shift and margin must be non-negative".into()));
        }
        self.planner.validate()?;
        self.ransac
            .validate()
            .map_err(|e| SimError::InvalidConfig(format!("ransac: {e}")))?;
        Ok(())
    }
}
