//! Experiment commands shared by the binary and the acceptance suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use pcr_formation::formation::{
    compute_ofps, formation_error, laplacian_error_baseline, AgentId, FormationError, FormationSpec, PositionFrame,
};
use pcr_formation::robust::RansacConfig;
use pcr_formation::sim::{MetricsLog, ObstacleField, SimError, SimSummary, World};
use pcr_formation::{Point3, Sim3Transform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::shapes::{generate_shape, ShapeSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Sim(_) => 2,
            CliError::Io { .. } | CliError::Internal(_) => 3,
        }
    }
}

impl From<FormationError> for CliError {
    fn from(e: FormationError) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: SimSummary,
    pub metrics: MetricsLog,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        self.metrics.to_csv()
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let scenario = cfg.build()?;
    let mut world = World::new(scenario.sim, scenario.spec, cfg.obstacles.clone(), &scenario.starts)?;
    if let Some(policy) = scenario.outliers {
        world.inject_outliers(policy)?;
    }
    let summary = world.run(cfg.duration)?;
    Ok(RunOutput {
        summary,
        metrics: world.metrics().clone(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes `<name>_metrics.csv` and `<name>_summary.json` into `dir`.
pub fn write_run(dir: &Path, name: &str, out: &RunOutput) -> Result<(PathBuf, PathBuf), CliError> {
    ensure_dir(dir)?;
    let csv = dir.join(format!("{name}_metrics.csv"));
    let json = dir.join(format!("{name}_summary.json"));
    write_file(&csv, &out.csv())?;
    write_file(&json, &out.summary_json())?;
    Ok((csv, json))
}

pub fn write_text(dir: &Path, file: &str, contents: &str) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let path = dir.join(file);
    write_file(&path, contents)?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfpsBenchRow {
    pub count: usize,
    pub t_mean: f64,
    pub t_std: f64,
    pub t_max: f64,
    /// Trials whose registration failed (still timed).
    pub failures: usize,
}

pub const OFPS_BENCH_HEADER: &str = "count,t_mean,t_std,t_max";

fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3Transform {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let rv = axis.try_normalize(1e-9).unwrap_or(Vector3::z()) * rng.random_range(0.0..std::f64::consts::PI);
    let t = Vector3::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
    );
    Sim3Transform::from_parts(rv, t, rng.random_range(0.5..2.0))
}

/// Random formation at roughly constant density (one agent per 8 m³).
pub fn random_formation(rng: &mut ChaCha8Rng, count: usize) -> Result<FormationSpec, FormationError> {
    let side = (8.0 * count as f64).cbrt();
    let pts: Vec<Point3> = (0..count)
        .map(|_| {
            Vector3::new(
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
            )
        })
        .collect();
    FormationSpec::from_points("random", &pts)
}

/// Desired positions under a fresh random similarity per frame plus
/// isotropic Gaussian noise.
pub fn perturbed_frames(
    rng: &mut ChaCha8Rng,
    spec: &FormationSpec,
    frames: usize,
    sigma: f64,
    dt: f64,
) -> Vec<PositionFrame> {
    let noise = Normal::new(0.0, sigma).expect("sigma is non-negative");
    (0..frames)
        .map(|m| {
            let g = random_sim3(rng);
            let positions: BTreeMap<AgentId, Point3> = spec
                .desired()
                .iter()
                .map(|(id, p)| {
                    let n = Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng));
                    (*id, g.apply(p) + n)
                })
                .collect();
            PositionFrame {
                timestamp_index: m,
                time: m as f64 * dt,
                positions,
            }
        })
        .collect()
}

fn stats(samples: &[f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), max)
}

/// Wall time of one full OFPS computation (`frames` registrations) per
/// trial, for each point count.
pub fn bench_ofps(counts: &[usize], trials: usize, frames: usize, seed: u64) -> Result<Vec<OfpsBenchRow>, CliError> {
    if trials == 0 || frames == 0 {
        return Err(CliError::Internal("trials and frames must be positive".into()));
    }
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        if count < 4 {
            return Err(CliError::Internal(format!(
                "bench-ofps needs at least 4 points, got {count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (count as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut times = Vec::with_capacity(trials);
        let mut failures = 0;
        for trial in 0..trials {
            let spec = random_formation(&mut rng, count)?;
            let frames = perturbed_frames(&mut rng, &spec, frames, 0.1, 0.2);
            let cfg = RansacConfig::default().with_seed(seed.wrapping_add(trial as u64));
            let started = Instant::now();
            let result = compute_ofps(AgentId(0), &spec, &frames, &cfg);
            times.push(started.elapsed().as_secs_f64());
            if result.is_err() {
                failures += 1;
            }
        }
        let (t_mean, t_std, t_max) = stats(&times);
        rows.push(OfpsBenchRow {
            count,
            t_mean,
            t_std,
            t_max,
            failures,
        });
    }
    Ok(rows)
}

pub fn ofps_bench_csv(rows: &[OfpsBenchRow]) -> String {
    let mut out = format!("{OFPS_BENCH_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.count, r.t_mean, r.t_std, r.t_max).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub agents: usize,
    pub t_mean: f64,
    pub t_std: f64,
    pub e_dist: f64,
    pub e_dist_final: f64,
    pub fully_converged: bool,
}

pub const SCALING_HEADER: &str = "agents,t_mean,t_std,e_dist,e_dist_final,fully_converged";

/// `base` resized to `n` agents; the start box grows with the swarm so the
/// initial density stays put.
pub fn resized(base: &ScenarioConfig, n: usize) -> ScenarioConfig {
    let mut cfg = base.clone();
    let ratio = (n as f64 / base.shape.count() as f64).cbrt();
    cfg.shape = base.shape.with_count(n);
    cfg.name = format!("{}_n{n}", base.name);
    for e in &mut cfg.start.extent {
        *e *= ratio;
    }
    cfg
}

pub fn bench_scaling(base: &ScenarioConfig, sizes: &[usize], parallel: bool) -> Result<Vec<ScalingRow>, CliError> {
    if let Some(bad) = sizes.iter().find(|&&n| n < 4) {
        return Err(CliError::Internal(format!(
            "bench-scaling needs at least 4 agents, got {bad}"
        )));
    }
    let run = |n: usize| -> Result<ScalingRow, CliError> {
        let out = run_scenario(&resized(base, n))?;
        let s = &out.summary;
        Ok(ScalingRow {
            agents: n,
            t_mean: s.t_opt_mean,
            t_std: s.t_opt_std,
            e_dist: s.steady_e_dist_all,
            e_dist_final: s.final_e_dist_all,
            fully_converged: s.fully_converged,
        })
    };
    if parallel {
        sizes.par_iter().map(|&n| run(n)).collect()
    } else {
        sizes.iter().map(|&n| run(n)).collect()
    }
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = format!("{SCALING_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.agents, r.t_mean, r.t_std, r.e_dist, r.e_dist_final, r.fully_converged
        )
        .unwrap();
    }
    out
}

/// Response of both formation metrics to two deformations of a slender
/// rectangle that move the same agents by the same distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinchProbe {
    pub displacement: f64,
    pub pcr_pinch: f64,
    pub pcr_stretch: f64,
    pub laplacian_pinch: f64,
    pub laplacian_stretch: f64,
}

impl PinchProbe {
    pub fn pcr_ratio(&self) -> f64 {
        self.pcr_pinch / self.pcr_stretch
    }

    pub fn laplacian_ratio(&self) -> f64 {
        self.laplacian_pinch / self.laplacian_stretch
    }

    /// The PCR metric reacts to the short-axis pinch at least as strongly,
    /// relative to the long-axis stretch, as the Laplacian baseline does.
    pub fn pcr_at_least_as_sensitive(&self) -> bool {
        self.pcr_ratio() >= self.laplacian_ratio()
    }
}

/// Pinch: the middle agent of each long edge moves `d` towards the long
/// axis. Stretch: one corner on each long edge moves `d` outward along it.
pub fn pinch_probe(spec: &FormationSpec, d: f64) -> Result<PinchProbe, CliError> {
    let pts = spec.desired();
    let (lo, hi) = pts.values().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let size = hi - lo;
    let (long, short) = if size.x >= size.y { (0, 1) } else { (1, 0) };
    let mid_long = 0.5 * (lo[long] + hi[long]);
    let mid_short = 0.5 * (lo[short] + hi[short]);

    let mut pinch = pts.clone();
    let mut stretch = pts.clone();
    for edge in [lo[short], hi[short]] {
        let on_edge: Vec<(AgentId, Point3)> = pts
            .iter()
            .filter(|(_, p)| (p[short] - edge).abs() < 1e-9)
            .map(|(i, p)| (*i, *p))
            .collect();
        let middle = on_edge
            .iter()
            .min_by(|a, b| (a.1[long] - mid_long).abs().total_cmp(&(b.1[long] - mid_long).abs()))
            .ok_or_else(|| CliError::Internal("pinch probe needs agents on both long edges".into()))?;
        pinch.get_mut(&middle.0).expect("agent exists")[short] += d * (mid_short - edge).signum();
        let corner = on_edge
            .iter()
            .max_by(|a, b| a.1[long].total_cmp(&b.1[long]))
            .expect("edge is non-empty");
        stretch.get_mut(&corner.0).expect("agent exists")[long] += d;
    }
    Ok(PinchProbe {
        displacement: d,
        pcr_pinch: formation_error(&pinch, spec)?,
        pcr_stretch: formation_error(&stretch, spec)?,
        laplacian_pinch: laplacian_error_baseline(&pinch, spec)?,
        laplacian_stretch: laplacian_error_baseline(&stretch, spec)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlenderReport {
    pub obstacles: bool,
    pub e_dist_steady: f64,
    pub e_dist_final: f64,
    pub fully_converged: bool,
    pub probe: PinchProbe,
    pub pcr_ratio: f64,
    pub laplacian_ratio: f64,
    pub pcr_at_least_as_sensitive: bool,
}

pub fn compare_slender(cfg: &ScenarioConfig, obstacles: bool) -> Result<(SlenderReport, RunOutput), CliError> {
    let mut cfg = cfg.clone();
    if !obstacles {
        cfg.obstacles = ObstacleField::default();
    }
    let out = run_scenario(&cfg)?;
    let spec = generate_shape(&cfg.shape).map_err(ConfigError::from)?;
    let probe = pinch_probe(&spec, 0.3)?;
    let report = SlenderReport {
        obstacles,
        e_dist_steady: out.summary.steady_e_dist_all,
        e_dist_final: out.summary.final_e_dist_all,
        fully_converged: out.summary.fully_converged,
        probe,
        pcr_ratio: probe.pcr_ratio(),
        laplacian_ratio: probe.laplacian_ratio(),
        pcr_at_least_as_sensitive: probe.pcr_at_least_as_sensitive(),
    };
    Ok((report, out))
}

/// CSV of a generated shape: `id,x,y,z`.
pub fn shape_csv(shape: &ShapeSpec) -> Result<String, CliError> {
    let spec = generate_shape(shape).map_err(ConfigError::from)?;
    let mut out = String::from("id,x,y,z\n");
    for (id, p) in spec.desired() {
        writeln!(out, "{},{},{},{}", id, p.x, p.y, p.z).unwrap();
    }
    Ok(out)
}
