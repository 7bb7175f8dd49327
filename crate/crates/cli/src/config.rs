//! Versioned TOML scenario configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::Vector3;
use pcr_formation::formation::{AgentId, FormationSpec};
use pcr_formation::optimizer::PlannerConfig;
use pcr_formation::robust::RansacConfig;
use pcr_formation::sim::{CommLossEvent, ObstacleField, OutlierBehavior, OutlierPolicy, SimConfig};
use pcr_formation::Point3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shapes::{generate_shape, ShapeError, ShapeSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("shape: {0}")]
    Shape(#[from] ShapeError),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

/// Box the agents are scattered in at t = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRegion {
    pub center: [f64; 3],
    pub extent: [f64; 3],
    #[serde(default = "default_start_spacing")]
    pub min_spacing: f64,
}

fn default_start_spacing() -> f64 {
    1.0
}

impl Default for StartRegion {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0, 2.0],
            extent: [12.0, 12.0, 3.0],
            min_spacing: default_start_spacing(),
        }
    }
}

/// Either explicit agent ids or a fraction of the swarm (rounded up,
/// chosen with the scenario seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub behavior: OutlierBehavior,
    #[serde(default)]
    pub onset: f64,
}

/// Simulation knobs other than seed, goal, planner and registration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub dt: f64,
    pub metric_period: f64,
    pub replan_period: f64,
    pub bus_latency: f64,
    pub peer_timeout: f64,
    pub min_inlier_fraction: f64,
    pub cruise_speed: f64,
    pub max_migration_shift: f64,
    pub peer_filter_margin: f64,
    pub steady_window: f64,
    pub wall_clock_timing: bool,
    pub comm_loss: Vec<CommLossEvent>,
}

impl Default for SimSettings {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            metric_period: d.metric_period,
            replan_period: d.replan_period,
            bus_latency: d.bus_latency,
            peer_timeout: d.peer_timeout,
            min_inlier_fraction: d.min_inlier_fraction,
            cruise_speed: d.cruise_speed,
            max_migration_shift: d.max_migration_shift,
            peer_filter_margin: d.peer_filter_margin,
            steady_window: d.steady_window,
            wall_clock_timing: d.wall_clock_timing,
            comm_loss: d.comm_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub start: StartRegion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<[f64; 3]>,
    #[serde(default)]
    pub obstacles: ObstacleField,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outliers: Option<OutlierSpec>,
    #[serde(default)]
    pub sim: SimSettings,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub ransac: RansacConfig,
}

/// Everything needed to build a world.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: FormationSpec,
    pub starts: BTreeMap<AgentId, Point3>,
    pub sim: SimConfig,
    pub outliers: Option<OutlierPolicy>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config is always representable")
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            dt: s.dt,
            metric_period: s.metric_period,
            replan_period: s.replan_period,
            bus_latency: s.bus_latency,
            peer_timeout: s.peer_timeout,
            min_inlier_fraction: s.min_inlier_fraction,
            goal: self.goal,
            cruise_speed: s.cruise_speed,
            max_migration_shift: s.max_migration_shift,
            peer_filter_margin: s.peer_filter_margin,
            steady_window: s.steady_window,
            wall_clock_timing: s.wall_clock_timing,
            seed: self.seed,
            planner: self.planner.clone(),
            ransac: self.ransac,
            comm_loss: s.comm_loss.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        let n = self.shape.count();
        let st = &self.start;
        if st.extent.iter().any(|e| !(*e >= 0.0 && e.is_finite())) || st.center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("start", "center must be finite and extent non-negative"));
        }
        if !(st.min_spacing >= 0.0) {
            return Err(invalid("start.min_spacing", "must be non-negative"));
        }
        if self.goal.is_some_and(|g| g.iter().any(|c| !c.is_finite())) {
            return Err(invalid("goal", "must be finite"));
        }
        self.obstacles
            .validate()
            .map_err(|e| invalid("obstacles", e.to_string()))?;
        if let Some(o) = &self.outliers {
            match (&o.agents, o.fraction) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(invalid("outliers", "give exactly one of `agents` or `fraction`"));
                }
                (Some(ids), None) => {
                    if let Some(bad) = ids.iter().find(|id| **id as usize >= n) {
                        return Err(invalid("outliers.agents", format!("agent {bad} is not in the swarm")));
                    }
                }
                (None, Some(f)) => {
                    if !(0.0..1.0).contains(&f) {
                        return Err(invalid("outliers.fraction", "must lie in [0, 1)"));
                    }
                }
            }
            if !(o.onset >= 0.0) {
                return Err(invalid("outliers.onset", "must be non-negative"));
            }
            if let OutlierBehavior::RandomWalk { sigma } = o.behavior {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid("outliers.behavior.sigma", "must be non-negative"));
                }
            }
        }
        if let Some(ev) = self.sim.comm_loss.iter().find(|ev| ev.agent.0 as usize >= n) {
            return Err(invalid(
                "sim.comm_loss",
                format!("agent {} is not in the swarm", ev.agent),
            ));
        }
        self.sim_config().validate().map_err(|e| {
            let key = match &e {
                pcr_formation::sim::SimError::InvalidConfig(m) if m.starts_with("ransac") => "ransac",
                pcr_formation::sim::SimError::Optimizer(_) => "planner",
                _ => "sim",
            };
            invalid(key, e.to_string())
        })?;
        generate_shape(&self.shape)?;
        Ok(())
    }

    /// Outlier agent ids; a fraction is rounded up.
    pub fn outlier_ids(&self) -> Vec<AgentId> {
        let Some(o) = &self.outliers else {
            return Vec::new();
        };
        let n = self.shape.count();
        let mut ids: Vec<AgentId> = match (&o.agents, o.fraction) {
            (Some(ids), _) => ids.iter().map(|i| AgentId(*i)).collect(),
            (None, Some(f)) => {
                let k = ((f * n as f64) - 1e-9).ceil().max(0.0) as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6f75_746c_6965_7273);
                sample(&mut rng, n, k.min(n))
                    .into_iter()
                    .map(|i| AgentId(i as u32))
                    .collect()
            }
            (None, None) => Vec::new(),
        };
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn build(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let spec = generate_shape(&self.shape)?;
        let starts = scatter(&spec, &self.start, self.seed)
            .ok_or_else(|| invalid("start", "region too small for the swarm at the requested spacing"))?;
        let outliers = self.outliers.as_ref().map(|o| OutlierPolicy {
            agents: self.outlier_ids(),
            behavior: o.behavior,
            onset: o.onset,
        });
        Ok(Scenario {
            spec,
            starts,
            sim: self.sim_config(),
            outliers,
        })
    }
}

fn scatter(spec: &FormationSpec, region: &StartRegion, seed: u64) -> Option<BTreeMap<AgentId, Point3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x57_4741_5254));
    let c = Vector3::from(region.center);
    let half = Vector3::from(region.extent) * 0.5;
    let mut placed: Vec<Point3> = Vec::with_capacity(spec.len());
    let mut out = BTreeMap::new();
    let ids: BTreeSet<AgentId> = spec.ids().collect();
    for id in ids {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > 100_000 {
                return None;
            }
            let mut p = c;
            for k in 0..3 {
                if half[k] > 0.0 {
                    p[k] += rng.random_range(-half[k]..=half[k]);
                }
            }
            if placed.iter().all(|q| (p - q).norm() >= region.min_spacing) {
                placed.push(p);
                out.insert(id, p);
                break;
            }
        }
    }
    Some(out)
}
