//! Discrete adjoint of the fixed-step RK4 integrator.
//!
//! Objectives are sums of terms `g(y(t_d))` evaluated at whole days `t_d`.
//! The caller supplies `dg/dy` at every sampled day (the "seeds"); the
//! backward sweep differentiates the exact discrete forward map, so the
//! resulting gradient agrees with finite differences of the discrete
//! objective up to roundoff.
//!
//! Costate convention: `lambda[n]` is the cotangent of node `n` propagated
//! back from later nodes only, so `lambda[N] = 0`. The full cotangent of a
//! sampled node is `lambda[n] + seed`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    Compartment, Epidemic, ParameterSet, RatioKind, GROUPS, STATE_DIM,
};
use crate::ode::{node_time, rk4_step, OdeSystem, Rk4Workspace};

/// An ODE system that can pull cotangents back through its right-hand side.
pub trait AdjointSystem: OdeSystem {
    fn param_dim(&self) -> usize;

    /// Accumulate `y_bar += (df/dy)^T v` and `grad += (df/dtheta)^T v` at `(t, y)`.
    fn vjp(&self, t: f64, y: &[f64], v: &[f64], y_bar: &mut [f64], grad: &mut [f64]);
}

/// Forward trajectory retained at every integrator node together with the
/// RK4 stage inputs needed to linearize each step.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub t0: f64,
    pub substeps: u32,
    pub days: usize,
    dim: usize,
    nodes: Vec<f64>,
    stages: Vec<f64>,
}

impl ForwardSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.days * self.substeps as usize + 1
    }

    pub fn node(&self, n: usize) -> &[f64] {
        &self.nodes[n * self.dim..(n + 1) * self.dim]
    }

    /// State at whole day `day` counted from `t0`.
    pub fn day(&self, day: usize) -> &[f64] {
        self.node(day * self.substeps as usize)
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.node_count() - 1)
    }

    fn stage_inputs(&self, step: usize) -> &[f64] {
        &self.stages[step * 3 * self.dim..(step + 1) * 3 * self.dim]
    }
}

/// Integrate `days` days from `(t0, y0)`, keeping all nodes and stage inputs.
pub fn forward_solve<S: OdeSystem + ?Sized>(
    sys: &S,
    y0: &[f64],
    t0: f64,
    days: usize,
    substeps: u32,
) -> Result<ForwardSolution> {
    let dim = sys.dim();
    if y0.len() != dim {
        return Err(Error::Dimension(format!("initial state has {} entries, system has {dim}", y0.len())));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps per day must be at least 1".into()));
    }
    let steps = days * substeps as usize;
    let h = 1.0 / substeps as f64;
    let mut nodes = vec![0.0; (steps + 1) * dim];
    let mut stages = vec![0.0; steps * 3 * dim];
    nodes[..dim].copy_from_slice(y0);
    let mut ws = Rk4Workspace::new(dim);
    for n in 0..steps {
        let (done, rest) = nodes.split_at_mut((n + 1) * dim);
        let y = &done[n * dim..];
        let out = &mut rest[..dim];
        let st = &mut stages[n * 3 * dim..(n + 1) * 3 * dim];
        rk4_step(sys, node_time(t0, n, substeps), h, y, out, &mut ws, Some(st));
        sys.check_state(node_time(t0, n + 1, substeps), out)?;
    }
    Ok(ForwardSolution { t0, substeps, days, dim, nodes, stages })
}

/// Result of the backward sweep.
#[derive(Clone, Debug)]
pub struct AdjointState {
    /// Propagated costate per node, flattened; zero at the final node.
    pub lambda: Vec<f64>,
    /// Gradient with respect to the system parameters.
    pub gradient: Vec<f64>,
    dim: usize,
}

impl AdjointState {
    pub fn at(&self, n: usize) -> &[f64] {
        &self.lambda[n * self.dim..(n + 1) * self.dim]
    }
}

/// Backward sweep given per-day seeds `dg/dy(t_d)` for `d = 0..=days`.
///
/// The parameter gradient is accumulated step by step during the sweep.
pub fn adjoint_solve<S: AdjointSystem + ?Sized>(
    sys: &S,
    sol: &ForwardSolution,
    seeds: &[Vec<f64>],
) -> Result<AdjointState> {
    let dim = sol.dim;
    if seeds.len() != sol.days + 1 {
        return Err(Error::Internal(format!(
            "{} daily seeds supplied for a {}-day forward solution",
            seeds.len(),
            sol.days
        )));
    }
    if sys.dim() != dim || seeds.iter().any(|s| s.len() != dim) {
        return Err(Error::Internal("seed or system dimension does not match the forward solution".into()));
    }
    let substeps = sol.substeps as usize;
    let steps = sol.days * substeps;
    let h = 1.0 / sol.substeps as f64;
    let mut lambda = vec![0.0; (steps + 1) * dim];
    let mut gradient = vec![0.0; sys.param_dim()];

    let mut a = vec![0.0; dim];
    let mut kbar = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut stage_bar = vec![0.0; dim];
    for n in (0..steps).rev() {
        // total cotangent of node n + 1
        a.copy_from_slice(&lambda[(n + 1) * dim..(n + 2) * dim]);
        if (n + 1) % substeps == 0 {
            for (ai, si) in a.iter_mut().zip(&seeds[(n + 1) / substeps]) {
                *ai += si;
            }
        }
        if a.iter().all(|v| *v == 0.0) {
            continue;
        }
        let t = node_time(sol.t0, n, sol.substeps);
        let y = sol.node(n);
        let st = sol.stage_inputs(n);
        let (y2, y3, y4) = (&st[..dim], &st[dim..2 * dim], &st[2 * dim..]);
        for i in 0..dim {
            kbar[0][i] = h / 6.0 * a[i];
            kbar[1][i] = h / 3.0 * a[i];
            kbar[2][i] = h / 3.0 * a[i];
            kbar[3][i] = h / 6.0 * a[i];
        }
        let lam = &mut lambda[n * dim..(n + 1) * dim];
        lam.copy_from_slice(&a);

        stage_bar.iter_mut().for_each(|v| *v = 0.0);
        sys.vjp(t + h, y4, &kbar[3], &mut stage_bar, &mut gradient);
        for i in 0..dim {
            lam[i] += stage_bar[i];
            kbar[2][i] += h * stage_bar[i];
        }
        stage_bar.iter_mut().for_each(|v| *v = 0.0);
        sys.vjp(t + 0.5 * h, y3, &kbar[2], &mut stage_bar, &mut gradient);
        for i in 0..dim {
            lam[i] += stage_bar[i];
            kbar[1][i] += 0.5 * h * stage_bar[i];
        }
        stage_bar.iter_mut().for_each(|v| *v = 0.0);
        sys.vjp(t + 0.5 * h, y2, &kbar[1], &mut stage_bar, &mut gradient);
        for i in 0..dim {
            lam[i] += stage_bar[i];
            kbar[0][i] += 0.5 * h * stage_bar[i];
        }
        sys.vjp(t, y, &kbar[0], lam, &mut gradient);
    }
    Ok(AdjointState { lambda, gradient, dim })
}

/// Gradient of `sum_d g_d(y(t_d))` with respect to the system parameters.
///
/// `seeds` is called once with the stored forward solution and must return
/// the per-day partials `dg_d/dy`.
pub fn assemble_gradient<S, F>(sys: &S, sol: &ForwardSolution, seeds: F) -> Result<Vec<f64>>
where
    S: AdjointSystem + ?Sized,
    F: FnOnce(&ForwardSolution) -> Result<Vec<Vec<f64>>>,
{
    let seeds = seeds(sol)?;
    Ok(adjoint_solve(sys, sol, &seeds)?.gradient)
}

#[inline]
fn fraction_partials(ratio: f64, gamma: f64, rate: f64) -> (f64, f64, f64, f64) {
    let den = rate + (gamma - rate) * ratio;
    let den2 = den * den;
    let value = gamma * ratio / den;
    let d_ratio = gamma * rate / den2;
    let d_gamma = ratio * rate * (1.0 - ratio) / den2;
    let d_rate = -gamma * ratio * (1.0 - ratio) / den2;
    (value, d_ratio, d_gamma, d_rate)
}

/// Cotangents of the 24 local quantities the right-hand side depends on:
/// the 8 interpolated ratios (by sequence index) then the 16 scalars.
pub(crate) fn local_vjp(
    params: &ParameterSet,
    ratios: &[f64; 8],
    y: &[f64],
    v: &[f64],
    y_bar: &mut [f64],
    local_bar: &mut [f64; 24],
) {
    use Compartment::*;
    let r = 8;
    let mut mixing = [0.0; GROUPS];
    for i in 0..GROUPS {
        mixing[i] = (0..GROUPS)
            .map(|j| params.contact[i][j] * y[I.index(j)] / params.population[j])
            .sum();
    }
    for i in 0..GROUPS {
        let vs = v[S.index(i)];
        let ve = v[E.index(i)];
        let vi = v[I.index(i)];
        let vh = v[H.index(i)];
        let vr = v[R.index(i)];
        let vd = v[D.index(i)];
        let vpc = v[Pc.index(i)];
        let vpu = v[Pu.index(i)];
        let s = y[S.index(i)];
        let e = y[E.index(i)];
        let inf = y[I.index(i)];
        let hosp = y[H.index(i)];

        let alpha = ratios[RatioKind::Alpha.sequence(i)];
        let tau = ratios[RatioKind::Tau.sequence(i)];
        let zeta = ratios[RatioKind::Zeta.sequence(i)];
        let xi = ratios[RatioKind::Xi.sequence(i)];
        let beta = params.beta[i];
        let sigma = params.sigma[i];
        let (eta, mu) = (params.eta[i], params.mu[i]);
        let (gi, gh) = (params.gamma_i[i], params.gamma_h[i]);

        // new infections F = beta (1 - alpha) S M
        let cf = ve - vs;
        let open = 1.0 - alpha;
        y_bar[S.index(i)] += cf * beta * open * mixing[i];
        for j in 0..GROUPS {
            let d_ij = beta * open * s / params.population[j];
            y_bar[I.index(j)] += cf * d_ij * params.contact[i][j];
            local_bar[r + 12 + 2 * i + j] += cf * beta * open * s * y[I.index(j)] / params.population[j];
        }
        local_bar[RatioKind::Alpha.sequence(i)] -= cf * beta * s * mixing[i];
        local_bar[r + i] += cf * open * s * mixing[i];

        // onset sigma E, split into confirmed and unconfirmed
        let co = vi - ve + tau * vpc + (1.0 - tau) * vpu;
        y_bar[E.index(i)] += sigma * co;
        local_bar[r + 2 + i] += e * co;
        local_bar[RatioKind::Tau.sequence(i)] += sigma * e * (vpc - vpu);

        // infectious outflow
        let (pi, dpi_zeta, dpi_gamma, dpi_eta) = fraction_partials(zeta, gi, eta);
        let to_h = vh - vi;
        let to_r = vr - vi;
        y_bar[I.index(i)] += pi * eta * to_h + (1.0 - pi) * gi * to_r;
        let c_pi = inf * (eta * to_h - gi * to_r);
        local_bar[RatioKind::Zeta.sequence(i)] += c_pi * dpi_zeta;
        local_bar[r + 4 + i] += pi * inf * to_h + c_pi * dpi_eta;
        local_bar[r + 8 + i] += (1.0 - pi) * inf * to_r + c_pi * dpi_gamma;

        // hospital outflow
        let (nu, dnu_xi, dnu_gamma, dnu_mu) = fraction_partials(xi, gh, mu);
        let to_d = vd - vh;
        let to_rh = vr - vh;
        y_bar[H.index(i)] += nu * mu * to_d + (1.0 - nu) * gh * to_rh;
        let c_nu = hosp * (mu * to_d - gh * to_rh);
        local_bar[RatioKind::Xi.sequence(i)] += c_nu * dnu_xi;
        local_bar[r + 6 + i] += nu * hosp * to_d + c_nu * dnu_mu;
        local_bar[r + 10 + i] += (1.0 - nu) * hosp * to_rh + c_nu * dnu_gamma;
    }
}

impl AdjointSystem for Epidemic<'_> {
    fn param_dim(&self) -> usize {
        self.params.dim()
    }

    fn vjp(&self, t: f64, y: &[f64], v: &[f64], y_bar: &mut [f64], grad: &mut [f64]) {
        let p = self.params;
        let local = p.local_ratios(t);
        let mut local_bar = [0.0; 24];
        local_vjp(p, &local.values, y, v, y_bar, &mut local_bar);
        let n = p.knot_count();
        let (j, w) = (local.knot, local.weight);
        for seq in 0..8 {
            let b = local_bar[seq];
            if b == 0.0 {
                continue;
            }
            grad[seq * n + j] += (1.0 - w) * b;
            if w > 0.0 {
                grad[seq * n + j + 1] += w * b;
            }
        }
        let off = 8 * n;
        for (g, b) in grad[off..off + 16].iter_mut().zip(&local_bar[8..]) {
            *g += b;
        }
    }
}

/// Per-coordinate comparison of an analytic gradient against central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub step: f64,
    /// `(coordinate, analytic, finite difference, relative error)`.
    pub entries: Vec<(usize, f64, f64, f64)>,
    /// Coordinates within `step` of a bound, left out of the comparison.
    pub skipped: Vec<usize>,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.3).fold(0.0, f64::max)
    }

    pub fn median_error(&self) -> f64 {
        let mut errs: Vec<f64> = self.entries.iter().map(|e| e.3).collect();
        if errs.is_empty() {
            return 0.0;
        }
        errs.sort_by(f64::total_cmp);
        let m = errs.len() / 2;
        if errs.len() % 2 == 1 {
            errs[m]
        } else {
            0.5 * (errs[m - 1] + errs[m])
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("# step {:e}\ncoord,analytic,finite_difference,relative_error\n", self.step);
        for (c, a, f, e) in &self.entries {
            s.push_str(&format!("{c},{a:e},{f:e},{e:e}\n"));
        }
        for c in &self.skipped {
            s.push_str(&format!("# coordinate {c} skipped: within one step of a bound\n"));
        }
        s.push_str(&format!("# max {:e} median {:e}\n", self.max_error(), self.median_error()));
        s
    }
}

/// `n` distinct coordinates out of `dim`, reproducible from `seed`, ascending.
pub fn sample_coordinates(dim: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, dim, n.min(dim)).into_vec();
    idx.sort_unstable();
    idx
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, fd: f64, floor: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(floor)
}

/// Central-difference check of `gradient` at `theta` on the given coordinates.
///
/// Coordinates closer than `step` to a bound are skipped. Relative errors
/// use `floor` as the smallest admissible denominator.
#[allow(clippy::too_many_arguments)]
pub fn fd_check<F>(
    objective: F,
    theta: &[f64],
    gradient: &[f64],
    coords: &[usize],
    step: f64,
    bounds: Option<(&[f64], &[f64])>,
    floor: f64,
) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut entries = Vec::with_capacity(coords.len());
    let mut skipped = Vec::new();
    let mut x = theta.to_vec();
    for &c in coords {
        if let Some((lo, hi)) = bounds {
            if theta[c] - step < lo[c] || theta[c] + step > hi[c] {
                log::info!("coordinate {c} skipped: within {step:e} of a bound");
                skipped.push(c);
                continue;
            }
        }
        x[c] = theta[c] + step;
        let fp = objective(&x)?;
        x[c] = theta[c] - step;
        let fm = objective(&x)?;
        x[c] = theta[c];
        let fd = (fp - fm) / (2.0 * step);
        entries.push((c, gradient[c], fd, relative_error(gradient[c], fd, floor)));
    }
    Ok(FdReport { step, entries, skipped })
}

/// Convenience for the epidemic: forward solve from `init` over `days` days at `params.t0`.
pub fn epidemic_forward(params: &ParameterSet, init: &[f64], days: usize, substeps: u32) -> Result<ForwardSolution> {
    if init.len() != STATE_DIM {
        return Err(Error::Dimension(format!("state needs {STATE_DIM} entries")));
    }
    forward_solve(&Epidemic::new(params), init, params.t0 as f64, days, substeps)
}
