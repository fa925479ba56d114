//! Projected limited-memory BFGS for box-constrained minimization.
//!
//! Each iteration fixes the variables sitting on a bound with the gradient
//! pushing outward, builds a two-loop L-BFGS direction on the remaining
//! variables and backtracks along the projected path until the Armijo
//! condition holds.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOptions {
    pub max_iter: usize,
    /// Stop once an accepted step decreases the objective by less than this
    /// fraction of the first step's decrease.
    pub rel_decrease_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Largest infinity-norm move of a steepest-descent trial step.
    pub max_initial_step: f64,
    /// Stop when the projected gradient's infinity norm falls below this.
    pub projected_gradient_tol: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            rel_decrease_tol: 1e-4,
            memory: 10,
            armijo: 1e-4,
            max_backtracks: 40,
            max_initial_step: 0.1,
            projected_gradient_tol: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    MaxIterations,
    SmallDecrease,
    Stationary,
    /// No acceptable step was found; the best iterate is returned.
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub status: Status,
    pub iterations: usize,
    /// Objective at the start followed by its value after every accepted step.
    pub log: Vec<f64>,
    pub evaluations: usize,
}

pub fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*l, *u);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinates held fixed this iteration.
fn active_set(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<bool> {
    (0..x.len())
        .map(|i| {
            lower[i] == upper[i] || (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)
        })
        .collect()
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    (0..x.len())
        .map(|i| ((x[i] - g[i]).clamp(lower[i], upper[i]) - x[i]).abs())
        .fold(0.0, f64::max)
}

fn two_loop(g: &[f64], active: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(active).map(|(x, a)| if *a { 0.0 } else { *x }).collect()
    };
    let mut q = mask(g);
    let masked: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(s, y)| (mask(s), mask(y))).collect();
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y) in masked.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let gamma = masked
        .last()
        .map(|(s, y)| {
            let yy = dot(y, y);
            let sy = dot(s, y);
            if yy > 0.0 && sy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), a) in masked.iter().zip(alphas.into_iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimize `f` over the box `[lower, upper]` starting from `x0`.
///
/// `f` returns the value and gradient. Errors at the starting point are
/// returned; errors at trial points are treated as rejected steps.
pub fn minimize<F>(mut f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &OptimizerOptions) -> Result<OptimizeResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension("bounds do not match the starting point".into()));
    }
    if let Some(i) = (0..n).find(|&i| !(lower[i] <= upper[i])) {
        return Err(Error::Config(format!("empty bound interval at coordinate {i}")));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective is not finite at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut log = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(opts.memory);
    let mut first_decrease: Option<f64> = None;
    let mut status = Status::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, lower, upper) <= opts.projected_gradient_tol {
            status = Status::Stationary;
            break;
        }
        let active = active_set(&x, &g, lower, upper);
        let mut d = two_loop(&g, &active, &pairs);
        let mut steepest = pairs.is_empty();
        if dot(&g, &d) >= 0.0 {
            pairs.clear();
            d = two_loop(&g, &active, &pairs);
            steepest = true;
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax == 0.0 {
            status = Status::Stationary;
            break;
        }
        let mut step = if steepest { (opts.max_initial_step / dmax).min(1.0) } else { 1.0 };

        let mut accepted = None;
        let mut trial = vec![0.0; n];
        for _ in 0..=opts.max_backtracks {
            for i in 0..n {
                trial[i] = x[i] + step * d[i];
            }
            project(&mut trial, lower, upper);
            let predicted: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if predicted < 0.0 {
                evaluations += 1;
                if let Ok((ft, gt)) = f(&trial) {
                    if ft.is_finite() && ft <= fx + opts.armijo * predicted {
                        accepted = Some((ft, gt));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((ft, gt)) = accepted else {
            log::warn!("line search failed after {iterations} iterations; returning the best iterate");
            status = Status::LineSearchFailed;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gt[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            if opts.memory > 0 {
                pairs.push_back((s, y));
            }
        }
        let decrease = fx - ft;
        x.copy_from_slice(&trial);
        fx = ft;
        g = gt;
        log.push(fx);
        match first_decrease {
            None => first_decrease = Some(decrease),
            Some(first) if decrease < opts.rel_decrease_tol * first => {
                status = Status::SmallDecrease;
                break;
            }
            _ => {}
        }
    }
    Ok(OptimizeResult { x, value: fx, status, iterations, log, evaluations })
}
