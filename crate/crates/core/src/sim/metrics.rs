use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str =
    "time,e_dist_all,e_dist_normal,t_opt_mean,t_opt_std,min_pair_dist,min_obs_clearance,inlier_fraction_mean";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub time: f64,
    pub e_dist_all: f64,
    pub e_dist_normal: f64,
    /// `None` when wall-clock timing is disabled or nothing ran yet.
    pub t_opt_mean: Option<f64>,
    pub t_opt_std: Option<f64>,
    pub min_pair_dist: f64,
    /// `None` without obstacles.
    pub min_obs_clearance: Option<f64>,
    pub inlier_fraction_mean: f64,
}

/// Running mean and standard deviation (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: usize,
    pub mean: f64,
    m2: f64,
    pub max: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        self.max = if self.count == 1 { x } else { self.max.max(x) };
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub samples: Vec<MetricSample>,
}

fn cell(out: &mut String, v: Option<f64>) {
    match v {
        Some(x) => write!(out, ",{x}").unwrap(),
        None => out.push_str(",nan"),
    }
}

impl MetricsLog {
    pub fn push(&mut self, sample: MetricSample) {
        if let Some(last) = self.samples.last() {
            assert!(sample.time > last.time, "metric timestamps must increase");
        }
        self.samples.push(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&MetricSample> {
        self.samples.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            write!(out, "{}", s.time).unwrap();
            cell(&mut out, Some(s.e_dist_all));
            cell(&mut out, Some(s.e_dist_normal));
            cell(&mut out, s.t_opt_mean);
            cell(&mut out, s.t_opt_std);
            cell(&mut out, Some(s.min_pair_dist));
            cell(&mut out, s.min_obs_clearance);
            cell(&mut out, Some(s.inlier_fraction_mean));
            out.push('\n');
        }
        out
    }

    /// Mean of `f` over samples with `time ≥ end − window`.
    pub fn window_mean(&self, window: f64, f: impl Fn(&MetricSample) -> f64) -> Option<f64> {
        let end = self.samples.last()?.time;
        let vals: Vec<f64> = self
            .samples
            .iter()
            .filter(|s| s.time >= end - window - 1e-9)
            .map(f)
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn steady_state_e_dist_normal(&self, window: f64) -> Option<f64> {
        self.window_mean(window, |s| s.e_dist_normal)
    }

    pub fn steady_state_e_dist_all(&self, window: f64) -> Option<f64> {
        self.window_mean(window, |s| s.e_dist_all)
    }

    pub fn min_pair_dist(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.min_pair_dist)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_obs_clearance(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.min_obs_clearance).reduce(f64::min)
    }
}
