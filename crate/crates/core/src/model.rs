//! Two-group (inside / outside long-term care) SEIR-H-D compartmental model.
//!
//! Each group `i` carries susceptible, exposed, infectious, hospitalized,
//! recovered and deceased compartments plus the cumulative confirmed and
//! unconfirmed infection counters. Groups couple only through the contact
//! matrix in the force of infection
//!
//! ```text
//! C_i(t) = (1 - alpha_i(t)) * sum_j contact[i][j] * I_j / N_j
//! ```
//!
//! Time is measured in days and all rates are per day.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, OdeSystem};

pub const GROUPS: usize = 2;
pub const COMPARTMENTS: usize = 8;
pub const STATE_DIM: usize = COMPARTMENTS * GROUPS;
/// Number of time-independent entries of a parameter set (rates and contact matrix).
pub const SCALAR_DIM: usize = 16;
/// Number of time-dependent ratio sequences (four ratios per group).
pub const SEQUENCE_COUNT: usize = 8;

/// Trajectories whose components exceed this multiple of the total population are divergent.
pub const BLOWUP_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Compartment {
    S = 0,
    E,
    I,
    H,
    R,
    D,
    Pc,
    Pu,
}

impl Compartment {
    pub const ALL: [Compartment; COMPARTMENTS] = [
        Compartment::S,
        Compartment::E,
        Compartment::I,
        Compartment::H,
        Compartment::R,
        Compartment::D,
        Compartment::Pc,
        Compartment::Pu,
    ];

    /// Position of `(self, group)` in the flat state vector.
    #[inline]
    pub const fn index(self, group: usize) -> usize {
        self as usize * GROUPS + group
    }
}

/// Person counts of all sixteen compartments at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CompartmentState(pub [f64; STATE_DIM]);

impl CompartmentState {
    /// Susceptibles at the full populations, the given exposed counts, everything else empty.
    pub fn initial(population: [f64; GROUPS], exposed: [f64; GROUPS]) -> Self {
        let mut state = Self::default();
        for g in 0..GROUPS {
            state.set(Compartment::S, g, population[g]);
            state.set(Compartment::E, g, exposed[g]);
        }
        state
    }

    #[inline]
    pub fn get(&self, c: Compartment, group: usize) -> f64 {
        self.0[c.index(group)]
    }

    #[inline]
    pub fn set(&mut self, c: Compartment, group: usize, value: f64) {
        self.0[c.index(group)] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; STATE_DIM] = values.try_into().map_err(|_| {
            Error::Dimension(format!("state needs {STATE_DIM} entries, got {}", values.len()))
        })?;
        Ok(Self(arr))
    }

    /// S + E + I + H + R + D of one group.
    pub fn living_and_dead(&self, group: usize) -> f64 {
        use Compartment::*;
        [S, E, I, H, R, D].iter().map(|&c| self.get(c, group)).sum()
    }

    /// (Pc + Pu) - (I + H + R + D) of one group; zero along exact trajectories.
    pub fn infection_ledger_gap(&self, group: usize) -> f64 {
        use Compartment::*;
        let ledger = self.get(Pc, group) + self.get(Pu, group);
        let infected = self.get(I, group) + self.get(H, group) + self.get(R, group) + self.get(D, group);
        ledger - infected
    }
}

/// Simulation window and discretization of the time-dependent parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: i64,
    pub t_end: i64,
    /// Knot spacing of the ratio sequences, in days.
    pub delta_t: u32,
    pub substeps_per_day: u32,
}

impl TimeGrid {
    pub fn new(t_start: i64, t_end: i64, delta_t: u32, substeps_per_day: u32) -> Result<Self> {
        if t_end < t_start {
            return Err(Error::Config(format!("t_end {t_end} precedes t_start {t_start}")));
        }
        if delta_t == 0 {
            return Err(Error::Config("knot spacing must be at least one day".into()));
        }
        if substeps_per_day == 0 {
            return Err(Error::Config("substeps per day must be at least 1".into()));
        }
        Ok(Self { t_start, t_end, delta_t, substeps_per_day })
    }

    pub fn days(&self) -> usize {
        (self.t_end - self.t_start) as usize
    }

    /// Number of knots `k + 1`; the last knot is the first one at or beyond `t_end`.
    pub fn knot_count(&self) -> usize {
        let span = (self.t_end - self.t_start) as u64;
        let dt = self.delta_t as u64;
        (span.div_ceil(dt)) as usize + 1
    }

    pub fn knot_times(&self) -> Vec<f64> {
        (0..self.knot_count())
            .map(|j| (self.t_start + j as i64 * self.delta_t as i64) as f64)
            .collect()
    }

    pub fn with_delta_t(&self, delta_t: u32) -> Result<Self> {
        Self::new(self.t_start, self.t_end, delta_t, self.substeps_per_day)
    }

    pub fn with_end(&self, t_end: i64) -> Result<Self> {
        Self::new(self.t_start, t_end, self.delta_t, self.substeps_per_day)
    }
}

/// The four time-dependent ratios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RatioKind {
    /// Transmission reduction.
    Alpha = 0,
    /// Infection confirmation ratio.
    Tau,
    /// Infection hospitalization ratio.
    Zeta,
    /// Hospitalization fatality ratio.
    Xi,
}

impl RatioKind {
    pub const ALL: [RatioKind; 4] = [RatioKind::Alpha, RatioKind::Tau, RatioKind::Zeta, RatioKind::Xi];

    /// Index of `(self, group)` among the eight sequences.
    #[inline]
    pub const fn sequence(self, group: usize) -> usize {
        self as usize * GROUPS + group
    }

    pub fn name(self) -> &'static str {
        match self {
            RatioKind::Alpha => "alpha",
            RatioKind::Tau => "tau",
            RatioKind::Zeta => "zeta",
            RatioKind::Xi => "xi",
        }
    }
}

/// Names of the sixteen scalars in flat-vector order.
pub const SCALAR_NAMES: [&str; SCALAR_DIM] = [
    "beta_1", "beta_2", "sigma_1", "sigma_2", "eta_1", "eta_2", "mu_1", "mu_2", "gamma_i_1",
    "gamma_i_2", "gamma_h_1", "gamma_h_2", "contact_11", "contact_12", "contact_21", "contact_22",
];

/// Full model parameterization: ratio sequences on an equispaced knot grid,
/// per-group rates, contact matrix and group populations.
///
/// The flat vector view orders the sequences `alpha_1, alpha_2, tau_1, tau_2,
/// zeta_1, zeta_2, xi_1, xi_2` followed by the scalars in [`SCALAR_NAMES`]
/// order. Populations are fixed inputs and never part of the vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    /// Day of the first knot.
    pub t0: i64,
    pub delta_t: u32,
    pub alpha: [Vec<f64>; GROUPS],
    pub tau: [Vec<f64>; GROUPS],
    pub zeta: [Vec<f64>; GROUPS],
    pub xi: [Vec<f64>; GROUPS],
    pub beta: [f64; GROUPS],
    pub sigma: [f64; GROUPS],
    pub eta: [f64; GROUPS],
    pub mu: [f64; GROUPS],
    pub gamma_i: [f64; GROUPS],
    pub gamma_h: [f64; GROUPS],
    pub contact: [[f64; GROUPS]; GROUPS],
    pub population: [f64; GROUPS],
}

/// Scalars of a parameter set as a plain array in flat-vector order.
pub type Scalars = [f64; SCALAR_DIM];

impl ParameterSet {
    /// Constant sequences on `grid`'s knots with the given ratios per kind and group.
    pub fn constant(
        grid: &TimeGrid,
        ratios: [[f64; GROUPS]; 4],
        scalars: &Scalars,
        population: [f64; GROUPS],
    ) -> Self {
        let n = grid.knot_count();
        let seq = |kind: RatioKind| [vec![ratios[kind as usize][0]; n], vec![ratios[kind as usize][1]; n]];
        let mut p = Self {
            t0: grid.t_start,
            delta_t: grid.delta_t,
            alpha: seq(RatioKind::Alpha),
            tau: seq(RatioKind::Tau),
            zeta: seq(RatioKind::Zeta),
            xi: seq(RatioKind::Xi),
            beta: [0.0; 2],
            sigma: [0.0; 2],
            eta: [0.0; 2],
            mu: [0.0; 2],
            gamma_i: [0.0; 2],
            gamma_h: [0.0; 2],
            contact: [[0.0; 2]; 2],
            population,
        };
        p.set_scalars(scalars);
        p
    }

    pub fn knot_count(&self) -> usize {
        self.alpha[0].len()
    }

    /// Length of the flat vector, `8 (k + 1) + 16`.
    pub fn dim(&self) -> usize {
        SEQUENCE_COUNT * self.knot_count() + SCALAR_DIM
    }

    pub fn knot_time(&self, j: usize) -> f64 {
        (self.t0 + j as i64 * self.delta_t as i64) as f64
    }

    pub fn last_knot_time(&self) -> f64 {
        self.knot_time(self.knot_count() - 1)
    }

    pub fn ratio(&self, kind: RatioKind, group: usize) -> &[f64] {
        match kind {
            RatioKind::Alpha => &self.alpha[group],
            RatioKind::Tau => &self.tau[group],
            RatioKind::Zeta => &self.zeta[group],
            RatioKind::Xi => &self.xi[group],
        }
    }

    pub fn ratio_mut(&mut self, kind: RatioKind, group: usize) -> &mut Vec<f64> {
        match kind {
            RatioKind::Alpha => &mut self.alpha[group],
            RatioKind::Tau => &mut self.tau[group],
            RatioKind::Zeta => &mut self.zeta[group],
            RatioKind::Xi => &mut self.xi[group],
        }
    }

    /// Offset of sequence `(kind, group)` in the flat vector.
    pub fn sequence_offset(&self, kind: RatioKind, group: usize) -> usize {
        kind.sequence(group) * self.knot_count()
    }

    pub fn scalar_offset(&self) -> usize {
        SEQUENCE_COUNT * self.knot_count()
    }

    pub fn scalars(&self) -> Scalars {
        let mut s = [0.0; SCALAR_DIM];
        for g in 0..GROUPS {
            s[g] = self.beta[g];
            s[2 + g] = self.sigma[g];
            s[4 + g] = self.eta[g];
            s[6 + g] = self.mu[g];
            s[8 + g] = self.gamma_i[g];
            s[10 + g] = self.gamma_h[g];
        }
        s[12] = self.contact[0][0];
        s[13] = self.contact[0][1];
        s[14] = self.contact[1][0];
        s[15] = self.contact[1][1];
        s
    }

    pub fn set_scalars(&mut self, s: &Scalars) {
        for g in 0..GROUPS {
            self.beta[g] = s[g];
            self.sigma[g] = s[2 + g];
            self.eta[g] = s[4 + g];
            self.mu[g] = s[6 + g];
            self.gamma_i[g] = s[8 + g];
            self.gamma_h[g] = s[10 + g];
        }
        self.contact = [[s[12], s[13]], [s[14], s[15]]];
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        for kind in RatioKind::ALL {
            for g in 0..GROUPS {
                v.extend_from_slice(self.ratio(kind, g));
            }
        }
        v.extend_from_slice(&self.scalars());
        v
    }

    /// Overwrite every entry from a flat vector laid out as [`ParameterSet::to_vec`].
    pub fn set_from_slice(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, expected {}",
                v.len(),
                self.dim()
            )));
        }
        let n = self.knot_count();
        for kind in RatioKind::ALL {
            for g in 0..GROUPS {
                let off = kind.sequence(g) * n;
                self.ratio_mut(kind, g).copy_from_slice(&v[off..off + n]);
            }
        }
        let mut s = [0.0; SCALAR_DIM];
        s.copy_from_slice(&v[SEQUENCE_COUNT * n..]);
        self.set_scalars(&s);
        Ok(())
    }

    pub fn with_vec(&self, v: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_from_slice(v)?;
        Ok(p)
    }

    /// Ratios in [0, 1], rates and populations strictly positive, contacts nonnegative, all finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.knot_count();
        if n == 0 {
            return Err(Error::Config("parameter set has no knots".into()));
        }
        if self.delta_t == 0 {
            return Err(Error::Config("parameter set has zero knot spacing".into()));
        }
        for kind in RatioKind::ALL {
            for g in 0..GROUPS {
                let seq = self.ratio(kind, g);
                if seq.len() != n {
                    return Err(Error::Dimension(format!(
                        "{}_{} has {} knots, alpha_1 has {n}",
                        kind.name(),
                        g + 1,
                        seq.len()
                    )));
                }
                if let Some(v) = seq.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Domain(format!("{}_{} value {v} outside [0, 1]", kind.name(), g + 1)));
                }
            }
        }
        let s = self.scalars();
        for (i, v) in s.iter().enumerate() {
            let ok = if i >= 12 { *v >= 0.0 } else { *v > 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::Domain(format!("{} = {v} is not admissible", SCALAR_NAMES[i])));
            }
        }
        if self.population.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Domain(format!("populations {:?} must be positive", self.population)));
        }
        Ok(())
    }
}

/// Position of `t` on a knot grid: the left knot and the weight of the right knot.
///
/// Times past the last knot map to `(last, 0.0)`, i.e. constant extension.
#[inline]
pub fn locate(t0: f64, delta_t: f64, knot_count: usize, t: f64) -> (usize, f64) {
    let s = (t - t0) / delta_t;
    let last = knot_count - 1;
    if s >= last as f64 {
        (last, 0.0)
    } else if s <= 0.0 {
        (0, 0.0)
    } else {
        let j = s.floor() as usize;
        (j, s - j as f64)
    }
}

/// Piecewise-linear interpolation of knot values, constant beyond the last knot.
pub fn interpolate_ratio(values: &[f64], t0: f64, delta_t: f64, t: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("cannot interpolate an empty sequence".into()));
    }
    if t < t0 || t.is_nan() {
        return Err(Error::Domain(format!("time {t} precedes the first knot {t0}")));
    }
    let (j, w) = locate(t0, delta_t, values.len(), t);
    Ok(if w == 0.0 { values[j] } else { values[j] + w * (values[j + 1] - values[j]) })
}

/// Fraction of infectious individuals leaving towards hospital, from the
/// infection hospitalization ratio `zeta`.
pub fn hospitalization_fraction(zeta: f64, gamma_i: f64, eta: f64) -> f64 {
    gamma_i * zeta / (eta + (gamma_i - eta) * zeta)
}

/// Fraction of hospitalized individuals leaving towards death, from the
/// hospitalization fatality ratio `xi`.
pub fn fatality_fraction(xi: f64, gamma_h: f64, mu: f64) -> f64 {
    hospitalization_fraction(xi, gamma_h, mu)
}

/// Inverse of [`hospitalization_fraction`] in its first argument.
pub fn hospitalization_ratio_from_fraction(pi: f64, gamma_i: f64, eta: f64) -> f64 {
    pi * eta / (pi * eta + (1.0 - pi) * gamma_i)
}

/// Inverse of [`fatality_fraction`] in its first argument.
pub fn fatality_ratio_from_fraction(nu: f64, gamma_h: f64, mu: f64) -> f64 {
    hospitalization_ratio_from_fraction(nu, gamma_h, mu)
}

/// Ratios interpolated at one instant, with the interpolation location.
#[derive(Clone, Copy, Debug)]
pub struct LocalRatios {
    pub knot: usize,
    pub weight: f64,
    /// Indexed by [`RatioKind::sequence`].
    pub values: [f64; SEQUENCE_COUNT],
}

impl ParameterSet {
    /// Interpolate all eight sequences at `t` (clamped to the first knot on the left).
    pub fn local_ratios(&self, t: f64) -> LocalRatios {
        let n = self.knot_count();
        let (j, w) = locate(self.t0 as f64, self.delta_t as f64, n, t);
        let mut values = [0.0; SEQUENCE_COUNT];
        for kind in RatioKind::ALL {
            for g in 0..GROUPS {
                let seq = self.ratio(kind, g);
                values[kind.sequence(g)] = if w == 0.0 { seq[j] } else { seq[j] + w * (seq[j + 1] - seq[j]) };
            }
        }
        LocalRatios { knot: j, weight: w, values }
    }
}

/// Force of infection per group, `C_i(t)`.
pub fn effective_transmission(params: &ParameterSet, state: &CompartmentState, t: f64) -> [f64; GROUPS] {
    let local = params.local_ratios(t);
    transmission_from(params, &local, &state.0)
}

#[inline]
fn transmission_from(params: &ParameterSet, local: &LocalRatios, y: &[f64]) -> [f64; GROUPS] {
    let mut c = [0.0; GROUPS];
    for i in 0..GROUPS {
        let mixing: f64 = (0..GROUPS)
            .map(|j| params.contact[i][j] * y[Compartment::I.index(j)] / params.population[j])
            .sum();
        c[i] = (1.0 - local.values[RatioKind::Alpha.sequence(i)]) * mixing;
    }
    c
}

/// Evaluate the right-hand side at already-interpolated ratios.
pub(crate) fn rhs_local(params: &ParameterSet, local: &LocalRatios, y: &[f64], dy: &mut [f64]) {
    use Compartment::*;
    let force = transmission_from(params, local, y);
    for i in 0..GROUPS {
        let s = y[S.index(i)];
        let e = y[E.index(i)];
        let inf = y[I.index(i)];
        let h = y[H.index(i)];
        let tau = local.values[RatioKind::Tau.sequence(i)];
        let zeta = local.values[RatioKind::Zeta.sequence(i)];
        let xi = local.values[RatioKind::Xi.sequence(i)];
        let (sigma, eta, mu, gi, gh) =
            (params.sigma[i], params.eta[i], params.mu[i], params.gamma_i[i], params.gamma_h[i]);
        let pi = hospitalization_fraction(zeta, gi, eta);
        let nu = fatality_fraction(xi, gh, mu);

        let new_exposed = params.beta[i] * force[i] * s;
        let onset = sigma * e;
        let to_hospital = pi * eta * inf;
        let recover_i = (1.0 - pi) * gi * inf;
        let to_death = nu * mu * h;
        let recover_h = (1.0 - nu) * gh * h;

        dy[S.index(i)] = -new_exposed;
        dy[E.index(i)] = new_exposed - onset;
        dy[I.index(i)] = onset - to_hospital - recover_i;
        dy[H.index(i)] = to_hospital - to_death - recover_h;
        dy[R.index(i)] = recover_i + recover_h;
        dy[D.index(i)] = to_death;
        dy[Pc.index(i)] = tau * onset;
        dy[Pu.index(i)] = (1.0 - tau) * onset;
    }
}

/// Time derivative of the full state.
pub fn rhs(t: f64, state: &CompartmentState, params: &ParameterSet) -> Result<CompartmentState> {
    if !t.is_finite() || state.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("rhs evaluated at t = {t} with a non-finite state")));
    }
    if params.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rhs evaluated with non-finite parameters".into()));
    }
    let local = params.local_ratios(t);
    let mut out = CompartmentState::default();
    rhs_local(params, &local, &state.0, &mut out.0);
    Ok(out)
}

/// The model as an [`OdeSystem`] for a fixed parameter set.
#[derive(Clone, Copy, Debug)]
pub struct Epidemic<'a> {
    pub params: &'a ParameterSet,
    blowup: f64,
}

impl<'a> Epidemic<'a> {
    pub fn new(params: &'a ParameterSet) -> Self {
        let total: f64 = params.population.iter().sum();
        Self { params, blowup: BLOWUP_FACTOR * total }
    }
}

impl OdeSystem for Epidemic<'_> {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    #[inline]
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let local = self.params.local_ratios(t);
        rhs_local(self.params, &local, y, dy);
    }

    fn check_state(&self, t: f64, y: &[f64]) -> Result<()> {
        if y.iter().all(|v| v.is_finite() && v.abs() <= self.blowup) {
            Ok(())
        } else {
            Err(Error::Divergence { day: t })
        }
    }
}

/// Daily samples of the state, starting at day `t_start`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_start: i64,
    pub states: Vec<CompartmentState>,
}

impl Trajectory {
    pub fn t_end(&self) -> i64 {
        self.t_start + self.states.len() as i64 - 1
    }

    pub fn at(&self, day: i64) -> Option<&CompartmentState> {
        if day < self.t_start {
            return None;
        }
        self.states.get((day - self.t_start) as usize)
    }

    pub fn last(&self) -> &CompartmentState {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Integrate over the grid's window, sampling every integer day.
pub fn integrate(params: &ParameterSet, init: &CompartmentState, grid: &TimeGrid) -> Result<Trajectory> {
    integrate_days(params, init, grid.t_start, grid.days(), grid.substeps_per_day)
}

/// Integrate `days` days from `(t_from, init)`.
pub fn integrate_days(
    params: &ParameterSet,
    init: &CompartmentState,
    t_from: i64,
    days: usize,
    substeps_per_day: u32,
) -> Result<Trajectory> {
    params.validate()?;
    if (t_from as f64) < params.t0 as f64 {
        return Err(Error::Domain(format!(
            "integration starts on day {t_from}, before the first knot {}",
            params.t0
        )));
    }
    if init.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain("initial state must be finite and nonnegative".into()));
    }
    let sys = Epidemic::new(params);
    let samples = ode::integrate_sampled(&sys, &init.0, t_from as f64, days, substeps_per_day)?;
    let states = samples
        .into_iter()
        .map(|s| CompartmentState::from_slice(&s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { t_start: t_from, states })
}

/// Quantities compared against reported data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    /// Currently hospitalized, both groups.
    Hospitalized,
    /// Cumulative confirmed infections, both groups.
    Confirmed,
    ConfirmedDaily,
    /// Cumulative deaths, both groups.
    Deaths,
    DeathsDaily,
    /// Cumulative deaths of one group (0 inside LTC, 1 outside).
    GroupDeaths(usize),
    GroupDeathsDaily(usize),
}

impl Observable {
    /// Column order of trajectory and forecast exports.
    pub const ALL: [Observable; 9] = [
        Observable::Hospitalized,
        Observable::Confirmed,
        Observable::ConfirmedDaily,
        Observable::Deaths,
        Observable::DeathsDaily,
        Observable::GroupDeaths(0),
        Observable::GroupDeathsDaily(0),
        Observable::GroupDeaths(1),
        Observable::GroupDeathsDaily(1),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Observable::Hospitalized => "H",
            Observable::Confirmed => "Pc",
            Observable::ConfirmedDaily => "pc",
            Observable::Deaths => "D",
            Observable::DeathsDaily => "d",
            Observable::GroupDeaths(0) => "D1",
            Observable::GroupDeaths(_) => "D2",
            Observable::GroupDeathsDaily(0) => "d1",
            Observable::GroupDeathsDaily(_) => "d2",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    /// Difference of consecutive days rather than a level.
    pub fn is_daily(self) -> bool {
        matches!(
            self,
            Observable::ConfirmedDaily | Observable::DeathsDaily | Observable::GroupDeathsDaily(_)
        )
    }

    /// State indices whose sum forms the underlying level.
    pub fn components(self) -> Vec<usize> {
        use Compartment::*;
        match self {
            Observable::Hospitalized => vec![H.index(0), H.index(1)],
            Observable::Confirmed | Observable::ConfirmedDaily => vec![Pc.index(0), Pc.index(1)],
            Observable::Deaths | Observable::DeathsDaily => vec![D.index(0), D.index(1)],
            Observable::GroupDeaths(g) | Observable::GroupDeathsDaily(g) => vec![D.index(g)],
        }
    }

    /// Value on `day`; daily quantities need the previous day as well.
    pub fn value(self, traj: &Trajectory, day: i64) -> Option<f64> {
        let level = |d: i64| traj.at(d).map(|s| self.components().iter().map(|&k| s.0[k]).sum::<f64>());
        if self.is_daily() {
            Some(level(day)? - level(day - 1)?)
        } else {
            level(day)
        }
    }
}

/// All observables on every day of a trajectory; daily columns hold NaN on the first day.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableSeries {
    pub t_start: i64,
    pub columns: Vec<(Observable, Vec<f64>)>,
}

impl ObservableSeries {
    pub fn days(&self) -> usize {
        self.columns.first().map_or(0, |c| c.1.len())
    }

    pub fn column(&self, obs: Observable) -> &[f64] {
        &self
            .columns
            .iter()
            .find(|(o, _)| *o == obs)
            .expect("every observable is present")
            .1
    }

    pub fn value(&self, obs: Observable, day: i64) -> Option<f64> {
        if day < self.t_start {
            return None;
        }
        self.column(obs).get((day - self.t_start) as usize).copied().filter(|v| !v.is_nan())
    }
}

pub fn observables(traj: &Trajectory) -> ObservableSeries {
    let columns = Observable::ALL
        .iter()
        .map(|&obs| {
            let col = (0..traj.states.len())
                .map(|k| obs.value(traj, traj.t_start + k as i64).unwrap_or(f64::NAN))
                .collect();
            (obs, col)
        })
        .collect();
    ObservableSeries { t_start: traj.t_start, columns }
}
