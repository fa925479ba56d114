//! Deterministic inversion: log-space misfit, parameter penalty, the
//! objective `J = F + lambda G`, box bounds and the coarse-to-fine fit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ObservationSet, MODEL_FLOOR};
use crate::error::{Error, Result};
use crate::gradient::{adjoint_solve, forward_solve};
use crate::model::{
    integrate_days, interpolate_ratio, CompartmentState, Epidemic, Observable, ObservableSeries, ParameterSet,
    RatioKind, Scalars, TimeGrid, GROUPS, SCALAR_DIM, STATE_DIM,
};
use crate::optimizer::{minimize, OptimizeResult, OptimizerOptions};
use crate::reference;

/// Everything needed to evaluate the data misfit for a parameter set.
#[derive(Clone, Debug)]
pub struct Problem {
    pub obs: ObservationSet,
    pub init: CompartmentState,
    /// Day of the initial state.
    pub t_start: i64,
    /// Last simulated day; must cover every observation.
    pub t_end: i64,
    pub substeps_per_day: u32,
}

impl Problem {
    pub fn new(obs: ObservationSet, init: CompartmentState, t_start: i64, substeps_per_day: u32) -> Result<Self> {
        let t_end = obs.last_day().ok_or_else(|| Error::Data("observation set is empty".into()))?;
        let first = obs.first_day().expect("nonempty");
        if first < t_start {
            return Err(Error::Data(format!("observations start on day {first}, before the model start {t_start}")));
        }
        for b in &obs.blocks {
            if b.observable.is_daily() && !b.is_empty() && b.start <= t_start {
                return Err(Error::Data(format!(
                    "daily block {} starts on day {}, which has no previous model day",
                    b.observable.name(),
                    b.start
                )));
            }
        }
        Ok(Self { obs, init, t_start, t_end, substeps_per_day })
    }

    pub fn days(&self) -> usize {
        (self.t_end - self.t_start) as usize
    }

    pub fn grid(&self, delta_t: u32) -> Result<TimeGrid> {
        TimeGrid::new(self.t_start, self.t_end, delta_t, self.substeps_per_day)
    }
}

/// Level of `obs` in a state vector.
#[inline]
fn level(obs: Observable, y: &[f64]) -> f64 {
    obs.components().iter().map(|&k| y[k]).sum()
}

/// `sum over blocks of coef(w) * (log m - log data)^2`, with per-day seeds if requested.
///
/// `days[d]` is the model state on day `t_start + d`.
fn log_residual_sum<'a, C>(
    problem: &Problem,
    day_state: impl Fn(usize) -> &'a [f64],
    coef: C,
    mut seeds: Option<&mut [Vec<f64>]>,
) -> f64
where
    C: Fn(f64) -> f64,
{
    let mut total = 0.0;
    for b in &problem.obs.blocks {
        let c = coef(b.weight);
        for (day, y) in b.days().zip(&b.values) {
            let d = (day - problem.t_start) as usize;
            let log_data = y / b.weight;
            let mut m = level(b.observable, day_state(d));
            if b.observable.is_daily() {
                m -= level(b.observable, day_state(d - 1));
            }
            let (log_m, floored) = if m > MODEL_FLOOR { (m.ln(), false) } else { (MODEL_FLOOR.ln(), true) };
            let r = log_m - log_data;
            total += c * r * r;
            if let (Some(seeds), false) = (seeds.as_deref_mut(), floored) {
                let dm = 2.0 * c * r / m;
                for &k in &b.observable.components() {
                    seeds[d][k] += dm;
                    if b.observable.is_daily() {
                        seeds[d - 1][k] -= dm;
                    }
                }
            }
        }
    }
    total
}

/// Sum of `coef(w) * (log m - log data)^2` over all blocks.
pub fn weighted_log_misfit<C: Fn(f64) -> f64>(params: &ParameterSet, problem: &Problem, coef: C) -> Result<f64> {
    let traj = integrate_days(params, &problem.init, problem.t_start, problem.days(), problem.substeps_per_day)?;
    Ok(log_residual_sum(problem, |d| &traj.states[d].0[..], coef, None))
}

/// Value and parameter gradient of [`weighted_log_misfit`] by the discrete adjoint.
pub fn weighted_log_misfit_gradient<C: Fn(f64) -> f64>(
    params: &ParameterSet,
    problem: &Problem,
    coef: C,
) -> Result<(f64, Vec<f64>)> {
    params.validate()?;
    if problem.t_start < params.t0 {
        return Err(Error::Domain("problem starts before the first knot".into()));
    }
    let sys = Epidemic::new(params);
    let sol = forward_solve(&sys, &problem.init.0, problem.t_start as f64, problem.days(), problem.substeps_per_day)?;
    let mut seeds = vec![vec![0.0; STATE_DIM]; problem.days() + 1];
    let value = log_residual_sum(problem, |d| sol.day(d), coef, Some(&mut seeds));
    let adj = adjoint_solve(&sys, &sol, &seeds)?;
    Ok((value, adj.gradient))
}

/// Deterministic misfit `F`: daily blocks weighted 0.1, the rest 1.
pub fn misfit(params: &ParameterSet, problem: &Problem) -> Result<f64> {
    weighted_log_misfit(params, problem, |w| w)
}

pub fn misfit_gradient(params: &ParameterSet, problem: &Problem) -> Result<(f64, Vec<f64>)> {
    weighted_log_misfit_gradient(params, problem, |w| w)
}

/// Scales and reference values of the penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub lambda: f64,
    /// Deviation scale of the time-dependent ratios.
    pub s_t: f64,
    /// Relative deviation scale of the scalars.
    pub s: f64,
    pub tau: [f64; GROUPS],
    pub zeta: [f64; GROUPS],
    pub xi: [f64; GROUPS],
    pub beta: [f64; GROUPS],
    pub sigma: [f64; GROUPS],
    pub eta: [f64; GROUPS],
    pub mu: [f64; GROUPS],
    pub gamma_i: [f64; GROUPS],
    pub gamma_h: [f64; GROUPS],
    pub contact: [[f64; GROUPS]; GROUPS],
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            s_t: 10.0,
            s: 5.0,
            tau: reference::TAU,
            zeta: reference::ZETA,
            xi: reference::XI,
            beta: reference::BETA,
            sigma: reference::SIGMA,
            eta: reference::ETA,
            mu: reference::MU,
            gamma_i: reference::GAMMA_I,
            gamma_h: reference::GAMMA_H,
            contact: reference::CONTACT,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.s_t > 0.0 && self.s > 0.0) {
            return Err(Error::Config("penalty scales must be positive (lambda nonnegative)".into()));
        }
        if self.reference_scalars().iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("scalar reference values must be positive".into()));
        }
        let ratios = [self.tau, self.zeta, self.xi];
        if ratios.iter().flatten().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Config("ratio reference values must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn reference_scalars(&self) -> Scalars {
        let mut p = ParameterSet::constant(
            &TimeGrid { t_start: 0, t_end: 0, delta_t: 1, substeps_per_day: 1 },
            [[0.0; 2]; 4],
            &[0.0; SCALAR_DIM],
            [1.0, 1.0],
        );
        p.beta = self.beta;
        p.sigma = self.sigma;
        p.eta = self.eta;
        p.mu = self.mu;
        p.gamma_i = self.gamma_i;
        p.gamma_h = self.gamma_h;
        p.contact = self.contact;
        p.scalars()
    }

    /// Reference of a ratio kind; `None` for transmission reduction, which has no deviation term.
    pub fn reference_ratio(&self, kind: RatioKind) -> Option<[f64; GROUPS]> {
        match kind {
            RatioKind::Alpha => None,
            RatioKind::Tau => Some(self.tau),
            RatioKind::Zeta => Some(self.zeta),
            RatioKind::Xi => Some(self.xi),
        }
    }
}

/// Penalty `G` and its gradient in flat-vector layout.
pub fn penalty_with_gradient(params: &ParameterSet, cfg: &PenaltyConfig) -> (f64, Vec<f64>) {
    let n = params.knot_count();
    let dt = params.delta_t as f64;
    let mut grad = vec![0.0; params.dim()];
    let mut total = 0.0;
    for kind in RatioKind::ALL {
        for g in 0..GROUPS {
            let v = params.ratio(kind, g);
            let off = params.sequence_offset(kind, g);
            for j in 1..n {
                // ((v_j - v_{j-1}) / dt)^2 dt
                let diff = v[j] - v[j - 1];
                total += diff * diff / dt;
                grad[off + j] += 2.0 * diff / dt;
                grad[off + j - 1] -= 2.0 * diff / dt;
                if kind == RatioKind::Alpha && g == 0 && diff < 0.0 {
                    total += diff * diff / dt;
                    grad[off + j] += 2.0 * diff / dt;
                    grad[off + j - 1] -= 2.0 * diff / dt;
                }
            }
            if let Some(reference) = cfg.reference_ratio(kind) {
                let s2 = cfg.s_t * cfg.s_t;
                for j in 0..n {
                    let r = v[j] - reference[g];
                    total += r * r / s2 * dt;
                    grad[off + j] += 2.0 * r / s2 * dt;
                }
            }
        }
    }
    let refs = cfg.reference_scalars();
    let values = params.scalars();
    let off = params.scalar_offset();
    for l in 0..SCALAR_DIM {
        let scale = cfg.s * refs[l];
        let r = (values[l] - refs[l]) / scale;
        total += r * r;
        grad[off + l] += 2.0 * r / scale;
    }
    (total, grad)
}

pub fn penalty(params: &ParameterSet, cfg: &PenaltyConfig) -> f64 {
    penalty_with_gradient(params, cfg).0
}

/// Values of the objective and its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParts {
    pub j: f64,
    pub f: f64,
    pub g: f64,
}

pub fn objective(params: &ParameterSet, problem: &Problem, cfg: &PenaltyConfig) -> Result<ObjectiveParts> {
    let f = misfit(params, problem)?;
    let g = penalty(params, cfg);
    Ok(ObjectiveParts { j: f + cfg.lambda * g, f, g })
}

pub fn objective_gradient(params: &ParameterSet, problem: &Problem, cfg: &PenaltyConfig) -> Result<(f64, Vec<f64>)> {
    let (f, mut grad) = misfit_gradient(params, problem)?;
    let (g, pg) = penalty_with_gradient(params, cfg);
    for (a, b) in grad.iter_mut().zip(pg) {
        *a += cfg.lambda * b;
    }
    Ok((f + cfg.lambda * g, grad))
}

/// Per-coordinate box in flat-vector layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    /// Transmission reduction in `[0, 0.1]` at the first knot and `[0, 0.9]` later;
    /// other ratios in `[r/4, 2r]`; scalars in `[r/2, 2r]` around the references.
    pub fn around_references(template: &ParameterSet, cfg: &PenaltyConfig) -> Self {
        let n = template.knot_count();
        let mut lower = vec![0.0; template.dim()];
        let mut upper = vec![0.0; template.dim()];
        for kind in RatioKind::ALL {
            for g in 0..GROUPS {
                let off = template.sequence_offset(kind, g);
                for j in 0..n {
                    let (lo, hi) = match cfg.reference_ratio(kind) {
                        None => (0.0, if j == 0 { 0.1 } else { 0.9 }),
                        Some(r) => (r[g] / 4.0, (2.0 * r[g]).min(1.0)),
                    };
                    lower[off + j] = lo;
                    upper[off + j] = hi;
                }
            }
        }
        let off = template.scalar_offset();
        for (l, r) in cfg.reference_scalars().iter().enumerate() {
            lower[off + l] = r / 2.0;
            upper[off + l] = 2.0 * r;
        }
        Self { lower, upper }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *l <= *v && *v <= *u)
    }

    /// Pin every scalar at its value in `params` (only ratio knots stay free).
    pub fn freeze_scalars(&mut self, params: &ParameterSet) {
        let off = self.lower.len() - SCALAR_DIM;
        for (l, v) in params.scalars().iter().enumerate() {
            self.lower[off + l] = *v;
            self.upper[off + l] = *v;
        }
    }

    /// Pin every sequence of `kind` at its values in `params`, which must share the bounds' layout.
    pub fn freeze_ratio(&mut self, params: &ParameterSet, kind: RatioKind) {
        assert_eq!(params.dim(), self.lower.len(), "parameter layout differs from the bounds");
        for g in 0..GROUPS {
            let off = params.sequence_offset(kind, g);
            for (j, v) in params.ratio(kind, g).iter().enumerate() {
                self.lower[off + j] = *v;
                self.upper[off + j] = *v;
            }
        }
    }
}

/// Minimize `J` within `bounds` from `theta0`.
pub fn optimize(
    theta0: &ParameterSet,
    problem: &Problem,
    cfg: &PenaltyConfig,
    bounds: &Bounds,
    opts: &OptimizerOptions,
) -> Result<(ParameterSet, OptimizeResult)> {
    cfg.validate()?;
    let x0 = theta0.to_vec();
    if !bounds.contains(&x0) {
        return Err(Error::Config("initial parameters violate the bounds".into()));
    }
    let result = minimize(
        |x| objective_gradient(&theta0.with_vec(x)?, problem, cfg),
        &x0,
        &bounds.lower,
        &bounds.upper,
        opts,
    )?;
    Ok((theta0.with_vec(&result.x)?, result))
}

/// Interpolate every ratio sequence onto a daily knot grid spanning `grid`.
pub fn interpolate_to_daily(coarse: &ParameterSet, grid: &TimeGrid) -> Result<ParameterSet> {
    resample(coarse, &grid.with_delta_t(1)?)
}

/// Evaluate every ratio sequence at the knots of `grid`; scalars are copied.
/// Values past the last source knot are held constant.
pub fn resample(params: &ParameterSet, grid: &TimeGrid) -> Result<ParameterSet> {
    let times = grid.knot_times();
    let mut out = params.clone();
    out.t0 = grid.t_start;
    out.delta_t = grid.delta_t;
    for kind in RatioKind::ALL {
        for g in 0..GROUPS {
            let seq = params.ratio(kind, g);
            let values = times
                .iter()
                .map(|&t| interpolate_ratio(seq, params.t0 as f64, params.delta_t as f64, t))
                .collect::<Result<Vec<_>>>()?;
            *out.ratio_mut(kind, g) = values;
        }
    }
    Ok(out)
}

/// Which parameter groups a fit holds fixed at known values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Freeze {
    pub scalars: bool,
    pub alpha: bool,
    pub tau: bool,
    pub zeta: bool,
    pub xi: bool,
}

impl Freeze {
    pub fn ratios(&self) -> Vec<RatioKind> {
        [(self.alpha, RatioKind::Alpha), (self.tau, RatioKind::Tau), (self.zeta, RatioKind::Zeta), (self.xi, RatioKind::Xi)]
            .into_iter()
            .filter_map(|(on, k)| on.then_some(k))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        !self.scalars && self.ratios().is_empty()
    }
}

/// Known parameter values and the groups pinned to them.
#[derive(Clone, Debug)]
pub struct Known {
    pub values: ParameterSet,
    pub freeze: Freeze,
}

impl Known {
    /// Copy the frozen groups into `params` (resampled to its knots) and pin them in `bounds`.
    pub fn apply(&self, params: &mut ParameterSet, bounds: &mut Bounds) -> Result<()> {
        if self.freeze.is_empty() {
            return Ok(());
        }
        let grid = TimeGrid::new(params.t0, params.knot_time(params.knot_count() - 1) as i64, params.delta_t, 1)?;
        let at_knots = resample(&self.values, &grid)?;
        if self.freeze.scalars {
            params.set_scalars(&at_knots.scalars());
            bounds.freeze_scalars(&at_knots);
        }
        for kind in self.freeze.ratios() {
            for g in 0..GROUPS {
                *params.ratio_mut(kind, g) = at_knots.ratio(kind, g).to_vec();
            }
            bounds.freeze_ratio(params, kind);
        }
        Ok(())
    }
}

/// Outcome of the two-stage fit.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub coarse: ParameterSet,
    pub coarse_result: OptimizeResult,
    pub theta: ParameterSet,
    pub fine_result: OptimizeResult,
    pub parts: ObjectiveParts,
}

/// Interpolate a coarse optimum to daily knots and re-optimize.
pub fn refine(
    coarse: &ParameterSet,
    problem: &Problem,
    cfg: &PenaltyConfig,
    opts: &OptimizerOptions,
) -> Result<(ParameterSet, OptimizeResult)> {
    refine_with(coarse, problem, cfg, opts, None)
}

fn start_within(theta: &ParameterSet, cfg: &PenaltyConfig, known: Option<&Known>) -> Result<(ParameterSet, Bounds)> {
    let mut bounds = Bounds::around_references(theta, cfg);
    let mut x0 = theta.to_vec();
    crate::optimizer::project(&mut x0, &bounds.lower, &bounds.upper);
    let mut start = theta.with_vec(&x0)?;
    if let Some(k) = known {
        k.apply(&mut start, &mut bounds)?;
    }
    Ok((start, bounds))
}

/// [`refine`] with optionally frozen groups.
pub fn refine_with(
    coarse: &ParameterSet,
    problem: &Problem,
    cfg: &PenaltyConfig,
    opts: &OptimizerOptions,
    known: Option<&Known>,
) -> Result<(ParameterSet, OptimizeResult)> {
    let grid = problem.grid(coarse.delta_t)?;
    let fine0 = interpolate_to_daily(coarse, &grid)?;
    let (start, bounds) = start_within(&fine0, cfg, known)?;
    optimize(&start, problem, cfg, &bounds, opts)
}

/// Coarse fit at `theta0`'s knot spacing, then the daily refinement.
pub fn fit_coarse_to_fine(
    theta0: &ParameterSet,
    problem: &Problem,
    cfg: &PenaltyConfig,
    opts: &OptimizerOptions,
) -> Result<FitOutcome> {
    fit_coarse_to_fine_with(theta0, problem, cfg, opts, None)
}

/// [`fit_coarse_to_fine`] with the groups in `known` held at their known values
/// in both stages. Starting values outside the bounds are projected onto them.
pub fn fit_coarse_to_fine_with(
    theta0: &ParameterSet,
    problem: &Problem,
    cfg: &PenaltyConfig,
    opts: &OptimizerOptions,
    known: Option<&Known>,
) -> Result<FitOutcome> {
    let (start, bounds) = start_within(theta0, cfg, known)?;
    let (coarse, coarse_result) = optimize(&start, problem, cfg, &bounds, opts)?;
    let (theta, fine_result) = refine_with(&coarse, problem, cfg, opts, known)?;
    let parts = objective(&theta, problem, cfg)?;
    Ok(FitOutcome { coarse, coarse_result, theta, fine_result, parts })
}

/// Default starting point: references with zero transmission reduction.
pub fn initial_guess(grid: &TimeGrid, cfg: &PenaltyConfig, population: [f64; GROUPS]) -> ParameterSet {
    let ratios = [[0.0; 2], cfg.tau, cfg.zeta, cfg.xi];
    ParameterSet::constant(grid, ratios, &cfg.reference_scalars(), population)
}

/// `day,H,Pc,pc,D,d,D1,d1,D2,d2`; daily columns are empty on the first day.
pub fn write_trajectory_csv<W: Write>(series: &ObservableSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["day".to_string()];
    header.extend(Observable::ALL.iter().map(|o| o.name().to_string()));
    w.write_record(&header)?;
    for k in 0..series.days() {
        let day = series.t_start + k as i64;
        let mut row = vec![day.to_string()];
        for o in Observable::ALL {
            let v = series.column(o)[k];
            row.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ObservationBlock, Thresholds};
    use crate::gradient::{fd_check, sample_coordinates};
    use crate::model::{integrate, observables};

    fn grid(days: i64, dt: u32) -> TimeGrid {
        TimeGrid::new(0, days, dt, 10).unwrap()
    }

    fn reference_theta(days: i64, dt: u32) -> ParameterSet {
        initial_guess(&grid(days, dt), &PenaltyConfig::default(), [60_000.0, 8_800_000.0])
    }

    /// Observation set reproducing the model output of `theta` exactly on the given spans.
    fn exact_obs(theta: &ParameterSet, days: i64, spans: &[(Observable, i64, i64)]) -> (ObservationSet, CompartmentState) {
        let init = CompartmentState::initial(theta.population, reference::EXPOSED);
        let series = observables(&integrate(theta, &init, &grid(days, theta.delta_t)).unwrap());
        let blocks = spans
            .iter()
            .map(|&(o, s, e)| {
                let w = if o.is_daily() { 0.1 } else { 1.0 };
                let values = (s..=e).map(|d| w * series.value(o, d).unwrap().ln()).collect();
                ObservationBlock { observable: o, start: s, end: e, weight: w, values }
            })
            .collect();
        let t = Thresholds { t1_p: 0, t1_h: 0, t1_d: 0, t2_d: 0 };
        (ObservationSet { thresholds: t, blocks }, init)
    }

    fn all_spans(days: i64) -> Vec<(Observable, i64, i64)> {
        let mid = days / 2;
        vec![
            (Observable::Hospitalized, 5, days),
            (Observable::Confirmed, 2, days),
            (Observable::ConfirmedDaily, 3, days),
            (Observable::Deaths, 8, mid),
            (Observable::DeathsDaily, 9, mid),
            (Observable::GroupDeaths(0), mid + 1, days),
            (Observable::GroupDeaths(1), mid + 1, days),
            (Observable::GroupDeathsDaily(0), mid + 2, days),
            (Observable::GroupDeathsDaily(1), mid + 2, days),
        ]
    }

    fn varied_theta(days: i64, dt: u32) -> ParameterSet {
        let mut p = reference_theta(days, dt);
        let n = p.knot_count();
        for j in 0..n {
            let s = j as f64 / (n - 1).max(1) as f64;
            p.alpha[0][j] = 0.05 + 0.4 * s;
            p.alpha[1][j] = 0.02 + 0.5 * s;
            p.tau[0][j] = 0.4 + 0.1 * s;
            p.zeta[1][j] = 0.05 - 0.01 * s;
            p.xi[0][j] = 0.4 - 0.05 * s;
        }
        p
    }

    #[test]
    fn perfect_fit_has_zero_misfit() {
        let theta = varied_theta(30, 7);
        let (obs, init) = exact_obs(&theta, 30, &all_spans(30));
        let problem = Problem::new(obs, init, 0, 10).unwrap();
        assert!(misfit(&theta, &problem).unwrap() < 1e-24);
    }

    #[test]
    fn one_unit_log_deviation() {
        let theta = varied_theta(30, 7);
        let (mut obs, init) = exact_obs(&theta, 30, &all_spans(30));
        obs.blocks[1].values[4] += 1.0;
        let problem = Problem::new(obs, init, 0, 10).unwrap();
        assert!((misfit(&theta, &problem).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn misfit_matches_term_by_term_sum() {
        let theta = varied_theta(10, 7);
        let spans = [(Observable::Confirmed, 1, 10), (Observable::DeathsDaily, 2, 10)];
        let (mut obs, init) = exact_obs(&theta, 10, &spans);
        let perturb = [0.3, -0.2, 0.05, 0.0, 0.11, -0.4, 0.2, 0.01, -0.03, 0.07];
        for (k, v) in obs.blocks[1].values.iter_mut().enumerate() {
            *v += 0.1 * perturb[k % perturb.len()];
        }
        for (k, v) in obs.blocks[0].values.iter_mut().enumerate() {
            *v -= perturb[(k + 3) % perturb.len()];
        }
        let problem = Problem::new(obs.clone(), init, 0, 10).unwrap();

        let traj = integrate(&theta, &init, &grid(10, 7)).unwrap();
        let mut oracle = 0.0;
        for b in &obs.blocks {
            for (day, y) in b.days().zip(&b.values) {
                let model = match b.observable {
                    Observable::Confirmed => {
                        let s = traj.at(day).unwrap();
                        s.0[12] + s.0[13]
                    }
                    _ => {
                        let (a, p) = (traj.at(day).unwrap(), traj.at(day - 1).unwrap());
                        a.0[10] + a.0[11] - p.0[10] - p.0[11]
                    }
                };
                oracle += b.weight * (model.ln() - y / b.weight).powi(2);
            }
        }
        let got = misfit(&theta, &problem).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn penalty_examples() {
        let cfg = PenaltyConfig::default();
        let mut theta = reference_theta(14, 7);
        assert_eq!(penalty(&theta, &cfg), 0.0);

        // alpha_1 drops by 0.07 over one knot: smoothness and one-sided terms each (0.01)^2 * 7
        theta.alpha[0] = vec![0.07, 0.0, 0.0];
        let (g, grad) = penalty_with_gradient(&theta, &cfg);
        assert!((g - 1.4e-3).abs() < 1e-15, "{g}");
        // d/d a0 of 2 (a0 - a1)^2 / 7 = 4 (a0 - a1) / 7 = 0.04
        assert!((grad[0] - 0.04).abs() < 1e-15);
        assert!((grad[1] + 0.04).abs() < 1e-15);
        assert!(grad[2..].iter().all(|v| *v == 0.0));

        // alpha_1 increases: no one-sided contribution
        theta.alpha[0] = vec![0.0, 0.07, 0.07];
        assert!((penalty(&theta, &cfg) - 7e-4).abs() < 1e-15);

        let mut theta = reference_theta(14, 7);
        theta.beta[0] = 2.0 * cfg.beta[0];
        assert!((penalty(&theta, &cfg) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn objective_combines_parts() {
        let theta = varied_theta(30, 7);
        let (obs, init) = exact_obs(&theta, 30, &all_spans(30));
        let problem = Problem::new(obs, init, 0, 10).unwrap();
        let cfg = PenaltyConfig::default();
        let parts = objective(&theta, &problem, &cfg).unwrap();
        let f = misfit(&theta, &problem).unwrap();
        let g = penalty(&theta, &cfg);
        assert_eq!(parts.j, f + 100.0 * g);
        assert_eq!((parts.f, parts.g), (f, g));
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let truth = varied_theta(30, 7);
        let (obs, init) = exact_obs(&truth, 30, &all_spans(30));
        let problem = Problem::new(obs, init, 0, 10).unwrap();
        let cfg = PenaltyConfig::default();
        let mut theta = truth.clone();
        theta.alpha[1].iter_mut().for_each(|a| *a += 0.03);
        theta.beta[0] *= 1.05;
        theta.contact[1][0] *= 0.9;
        let x = theta.to_vec();
        let (_, grad) = objective_gradient(&theta, &problem, &cfg).unwrap();
        let coords = sample_coordinates(x.len(), 20, 3);
        let report = fd_check(
            |v| Ok(objective(&theta.with_vec(v)?, &problem, &cfg)?.j),
            &x,
            &grad,
            &coords,
            1e-6,
            None,
            1e-6,
        )
        .unwrap();
        assert!(report.max_error() <= 1e-6, "{}", report.render());
    }

    #[test]
    fn bounds_follow_references() {
        let cfg = PenaltyConfig::default();
        let theta = reference_theta(14, 7);
        let b = Bounds::around_references(&theta, &cfg);
        assert_eq!((b.lower[0], b.upper[0]), (0.0, 0.1));
        assert_eq!((b.lower[1], b.upper[1]), (0.0, 0.9));
        let tau1 = theta.sequence_offset(RatioKind::Tau, 0);
        assert_eq!((b.lower[tau1], b.upper[tau1]), (0.1, 0.8));
        let off = theta.scalar_offset();
        assert_eq!((b.lower[off + 12], b.upper[off + 12]), (2.0, 8.0));
        assert!(b.contains(&theta.to_vec()));
    }

    #[test]
    fn daily_interpolation_table() {
        let g = TimeGrid::new(0, 7, 7, 10).unwrap();
        let mut coarse = reference_theta(7, 7);
        coarse.alpha[0] = vec![0.2, 0.4];
        let fine = interpolate_to_daily(&coarse, &g).unwrap();
        assert_eq!(fine.knot_count(), 8);
        for j in 0..8 {
            let expect = 0.2 + 0.2 * j as f64 / 7.0;
            assert!((fine.alpha[0][j] - expect).abs() < 1e-15);
        }
        assert!((fine.alpha[0][1] - 0.228_571_428_6).abs() < 1e-10);
        assert!(fine.tau[0].iter().all(|v| *v == 0.4));
    }

    #[test]
    fn alpha_only_twin_reaches_small_misfit() {
        let days = 42;
        let truth = varied_theta(days, 7);
        let (obs, init) = exact_obs(&truth, days, &all_spans(days));
        let problem = Problem::new(obs, init, 0, 10).unwrap();
        let cfg = PenaltyConfig { lambda: 0.0, ..PenaltyConfig::default() };
        let mut start = truth.clone();
        start.alpha = [vec![0.0; truth.knot_count()], vec![0.0; truth.knot_count()]];
        let mut bounds = Bounds::around_references(&truth, &cfg);
        bounds.freeze_scalars(&truth);
        for kind in [RatioKind::Tau, RatioKind::Zeta, RatioKind::Xi] {
            bounds.freeze_ratio(&truth, kind);
        }
        let opts = OptimizerOptions { max_iter: 300, rel_decrease_tol: 0.0, ..OptimizerOptions::default() };
        let (fit, result) = optimize(&start, &problem, &cfg, &bounds, &opts).unwrap();
        assert!(result.log.windows(2).all(|w| w[1] <= w[0]));
        assert!(bounds.contains(&fit.to_vec()));
        let f = misfit(&fit, &problem).unwrap();
        assert!(f < 1e-6, "misfit {f} after {} iterations ({:?})", result.iterations, result.status);
    }

    #[test]
    fn trajectory_csv_layout() {
        let theta = reference_theta(3, 7);
        let init = CompartmentState::initial(theta.population, reference::EXPOSED);
        let series = observables(&integrate(&theta, &init, &grid(3, 7)).unwrap());
        let mut buf = Vec::new();
        write_trajectory_csv(&series, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("day,H,Pc,pc,D,d,D1,d1,D2,d2"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "0");
        assert_eq!(first[3], "");
        assert_eq!(text.lines().count(), 5);
    }
}
