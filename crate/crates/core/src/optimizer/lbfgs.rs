//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsParams {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub grad_tolerance: f64,
    pub rel_cost_tolerance: f64,
    pub max_iterations: usize,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            memory: 8,
            c1: 1e-4,
            c2: 0.9,
            grad_tolerance: 1e-5,
            rel_cost_tolerance: 1e-8,
            max_iterations: 500,
            max_line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientNorm,
    RelativeCostChange,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
}

/// Minimizer of the cubic through two probes, safeguarded into the bracket.
fn interpolate(lo: &Probe, hi: &Probe) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let width = right - left;
    let fallback = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return fallback;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return fallback;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    if t.is_finite() && t > left + 0.1 * width && t < right - 0.1 * width {
        t
    } else {
        fallback
    }
}

/// Minimizes `f` starting from `x0`. `f` writes the gradient into its
/// second argument and returns the cost; non-finite costs are treated as
/// arbitrarily large during the line search.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, params: &LbfgsParams) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(params.memory);
    let mut iterations = 0;
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];

    let termination = loop {
        let gnorm = norm(&g);
        if gnorm < params.grad_tolerance {
            break Termination::GradientNorm;
        }
        if iterations >= params.max_iterations {
            break Termination::MaxIterations;
        }

        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope0 = -gnorm * gnorm;
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };

        // strong-Wolfe search: bracketing phase followed by zoom
        let mut eval = |alpha: f64, xt: &mut Vec<f64>, gt: &mut Vec<f64>| -> Probe {
            for i in 0..n {
                xt[i] = x[i] + alpha * d[i];
            }
            let fv = f(xt, gt);
            let fv = if fv.is_finite() { fv } else { f64::INFINITY };
            let slope = if fv.is_finite() { dot(gt, &d) } else { f64::NAN };
            Probe { alpha, f: fv, slope }
        };
        let mut accepted: Option<Probe> = None;
        let mut prev = Probe {
            alpha: 0.0,
            f: fx,
            slope: slope0,
        };
        let mut alpha = alpha0;
        let mut used = 0;
        let mut zoom_bracket: Option<(Probe, Probe)> = None;
        while used < params.max_line_search_evals {
            let cur = eval(alpha, &mut xt, &mut gt);
            used += 1;
            if !cur.f.is_finite() {
                alpha = 0.5 * (prev.alpha + alpha);
                continue;
            }
            if cur.f > fx + params.c1 * alpha * slope0 || (used > 1 && cur.f >= prev.f) {
                zoom_bracket = Some((prev, cur));
                break;
            }
            if cur.slope.abs() <= -params.c2 * slope0 {
                accepted = Some(cur);
                break;
            }
            if cur.slope >= 0.0 {
                zoom_bracket = Some((cur, prev));
                break;
            }
            prev = cur;
            alpha *= 2.0;
        }
        if let Some((mut lo, mut hi)) = zoom_bracket {
            while accepted.is_none() && used < params.max_line_search_evals {
                let a = if hi.f.is_finite() && hi.slope.is_finite() {
                    interpolate(&lo, &hi)
                } else {
                    0.5 * (lo.alpha + hi.alpha)
                };
                let cur = eval(a, &mut xt, &mut gt);
                used += 1;
                if !cur.f.is_finite() || cur.f > fx + params.c1 * a * slope0 || cur.f >= lo.f {
                    hi = cur;
                } else {
                    if cur.slope.abs() <= -params.c2 * slope0 {
                        accepted = Some(cur);
                        break;
                    }
                    if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                        hi = lo;
                    }
                    lo = cur;
                }
                if (hi.alpha - lo.alpha).abs() < 1e-16 * (1.0 + lo.alpha.abs()) {
                    break;
                }
            }
            // a sufficient-decrease point is still progress
            if accepted.is_none() && lo.alpha > 0.0 && lo.f < fx {
                accepted = Some(lo);
            }
        }
        evaluations += used;

        let Some(step) = accepted else {
            if !pairs.is_empty() {
                pairs.clear();
                continue;
            }
            break Termination::LineSearchFailure;
        };
        // the gradient buffer holds the last probe, which may differ
        if (xt.iter().zip(&x).zip(&d).any(|((a, b), di)| *a != b + step.alpha * di)) || step.f.is_nan() {
            for i in 0..n {
                xt[i] = x[i] + step.alpha * d[i];
            }
            let fv = f(&xt, &mut gt);
            evaluations += 1;
            debug_assert!((fv - step.f).abs() <= 1e-12 * fv.abs().max(1.0));
        }
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let f_prev = fx;
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = step.f;
        iterations += 1;
        history.push(fx);
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if pairs.len() == params.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        if (f_prev - fx).abs() <= params.rel_cost_tolerance * f_prev.abs() {
            break Termination::RelativeCostChange;
        }
    };

    LbfgsResult {
        grad_norm: norm(&g),
        x,
        cost: fx,
        iterations,
        evaluations,
        termination,
        cost_history: history,
    }
}
