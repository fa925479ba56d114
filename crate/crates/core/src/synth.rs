//! Synthetic raw streams from a known parameter set, for twin experiments.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{RawData, RawSeries};
use crate::error::{Error, Result};
use crate::model::{integrate_days, CompartmentState, Observable, ParameterSet, TimeGrid, Trajectory};
use crate::reference;

/// How the raw streams are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub first_date: NaiveDate,
    /// Number of simulated days after day 0.
    pub days: usize,
    /// First day of the LTC death stream.
    pub ltc_start_day: i64,
    /// Standard deviation of the multiplicative log-normal noise on every raw value.
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            first_date: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            days: 120,
            ltc_start_day: 20,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

/// Noiseless streams and the perturbed copy written to disk.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub raw: RawData,
    pub trajectory: Trajectory,
    /// Cumulative LTC deaths before the LTC stream starts.
    pub ltc_deaths_before_report: f64,
}

fn logistic(t: f64, center: f64, width: f64) -> f64 {
    1.0 / (1.0 + (-(t - center) / width).exp())
}

/// Generating parameters for twin experiments: reference scalars, a logistic
/// rise of transmission reduction around day 25 (with a partial relaxation of
/// the general population after day 80) and ratios oscillating gently around
/// their references over the first `period` days.
pub fn example_truth(grid: &TimeGrid, population: [f64; 2], period: f64) -> ParameterSet {
    let mut theta = reference::reference_parameters(grid, population);
    for j in 0..theta.knot_count() {
        let t = theta.knot_time(j) - grid.t_start as f64;
        let s = logistic(t, 25.0, 6.0);
        theta.alpha[0][j] = 0.05 + 0.75 * s;
        theta.alpha[1][j] = 0.02 + 0.68 * s - 0.1 * logistic(t, 80.0, 8.0);
        let w = (t.min(period) / period * std::f64::consts::PI).sin();
        for g in 0..2 {
            theta.tau[g][j] = reference::TAU[g] * (1.0 + 0.2 * w);
            theta.zeta[g][j] = reference::ZETA[g] * (1.0 - 0.15 * w);
            theta.xi[g][j] = reference::XI[g] * (1.0 + 0.1 * w);
        }
    }
    theta
}

fn daily(traj: &Trajectory, level: Observable, from: i64) -> Vec<f64> {
    (from..=traj.t_end())
        .map(|d| {
            let now = level.value(traj, d).expect("day in trajectory");
            let before = if d > traj.t_start { level.value(traj, d - 1).expect("day in trajectory") } else { 0.0 };
            now - before
        })
        .collect()
}

/// Simulate from day 0 and report daily confirmed cases, current
/// hospitalizations, daily deaths and daily LTC deaths.
///
/// Day 0 daily counts equal the day-0 levels, so accumulating the streams
/// reproduces the model's cumulative curves.
pub fn synthesize(theta: &ParameterSet, init: &CompartmentState, substeps_per_day: u32, cfg: &SynthConfig) -> Result<Synthetic> {
    if !(cfg.noise_sd >= 0.0 && cfg.noise_sd.is_finite()) {
        return Err(Error::Config("noise_sd must be finite and nonnegative".into()));
    }
    if cfg.ltc_start_day < 1 || cfg.ltc_start_day as usize > cfg.days {
        return Err(Error::Config(format!("ltc_start_day {} must lie in 1..={}", cfg.ltc_start_day, cfg.days)));
    }
    let traj = integrate_days(theta, init, 0, cfg.days, substeps_per_day)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut perturb = |values: Vec<f64>| -> Vec<f64> {
        values
            .into_iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                if cfg.noise_sd > 0.0 {
                    v * (cfg.noise_sd * z).exp()
                } else {
                    v
                }
            })
            .collect()
    };
    let confirmed = perturb(daily(&traj, Observable::Confirmed, 0));
    let hospitalized = perturb((0..=traj.t_end()).map(|d| Observable::Hospitalized.value(&traj, d).unwrap()).collect());
    let deaths = perturb(daily(&traj, Observable::Deaths, 0));
    let ltc = perturb(daily(&traj, Observable::GroupDeaths(0), cfg.ltc_start_day));
    let before = Observable::GroupDeaths(0).value(&traj, cfg.ltc_start_day - 1).expect("day in trajectory");
    let raw = RawData {
        first_date: cfg.first_date,
        confirmed: RawSeries::new("confirmed_daily", 0, confirmed),
        hospitalized: RawSeries::new("hospitalized_current", 0, hospitalized),
        deaths: RawSeries::new("deceased_daily", 0, deaths),
        ltc_deaths: RawSeries::new("ltc_deceased_daily", cfg.ltc_start_day, ltc),
    };
    Ok(Synthetic { raw, trajectory: traj, ltc_deaths_before_report: before })
}
