//! Posterior-predictive forecasts past the inference window.
//!
//! Beyond the last knot every time-dependent ratio keeps its final value, so a
//! forecast is the same integration carried on for `horizon` more days.

use std::io::Write;

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::model::{integrate_days, observables, CompartmentState, Observable, ObservableSeries, ParameterSet};
use crate::psvgd::par_map;

/// Observables from `t_start` through `window_end + horizon`.
///
/// Days up to `window_end` are bit-identical to an integration of the window alone.
pub fn forecast_trajectory(
    theta: &ParameterSet,
    init: &CompartmentState,
    t_start: i64,
    window_end: i64,
    horizon: usize,
    substeps_per_day: u32,
) -> Result<ObservableSeries> {
    if window_end < t_start {
        return Err(Error::Domain(format!("window ends on day {window_end}, before it starts on day {t_start}")));
    }
    let days = (window_end - t_start) as usize + horizon;
    let traj = integrate_days(theta, init, t_start, days, substeps_per_day)?;
    Ok(observables(&traj))
}

/// Forecast every member; divergent members come back as `None`.
pub fn forecast_ensemble(
    thetas: &[ParameterSet],
    init: &CompartmentState,
    t_start: i64,
    window_end: i64,
    horizon: usize,
    substeps_per_day: u32,
    workers: usize,
) -> Result<Vec<Option<ObservableSeries>>> {
    par_map(thetas.len(), workers, |n| {
        match forecast_trajectory(&thetas[n], init, t_start, window_end, horizon, substeps_per_day) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.is_numerical() => {
                log::debug!("member {n} excluded from the forecast: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-day summary of one observable.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableBand {
    pub observable: Observable,
    /// One vector per requested level, in the order of [`ForecastBand::levels`].
    pub quantiles: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub optimal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastBand {
    pub t_start: i64,
    pub levels: Vec<f64>,
    pub bands: Vec<ObservableBand>,
    pub members: usize,
    pub excluded: usize,
}

impl ForecastBand {
    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / self.members.max(1) as f64
    }

    pub fn days(&self) -> usize {
        self.bands.first().map_or(0, |b| b.mean.len())
    }

    pub fn band(&self, obs: Observable) -> Option<&ObservableBand> {
        self.bands.iter().find(|b| b.observable == obs)
    }

    /// Position of `level` among the computed levels.
    pub fn level_index(&self, level: f64) -> Option<usize> {
        self.levels.iter().position(|l| (l - level).abs() < 1e-12)
    }

    /// Column names: `q05`, `q50`, `q95` for the default levels.
    pub fn level_names(&self) -> Vec<String> {
        self.levels
            .iter()
            .map(|l| {
                let pct = l * 100.0;
                if (pct - pct.round()).abs() < 1e-9 {
                    format!("q{:02}", pct.round() as i64)
                } else {
                    format!("q{pct}")
                }
            })
            .collect()
    }

    /// `day,observable,<levels>,mean,optimal`; first-day rows of daily observables are omitted.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["day".to_string(), "observable".to_string()];
        header.extend(self.level_names());
        header.push("mean".into());
        header.push("optimal".into());
        w.write_record(&header)?;
        for k in 0..self.days() {
            for b in &self.bands {
                if b.mean[k].is_nan() {
                    continue;
                }
                let mut row = vec![(self.t_start + k as i64).to_string(), b.observable.name().to_string()];
                row.extend(b.quantiles.iter().map(|q| q[k].to_string()));
                row.push(b.mean[k].to_string());
                row.push(b.optimal.as_ref().map_or(String::new(), |o| o[k].to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Pointwise quantiles and means over the non-degenerate trajectories.
pub fn quantile_bands(
    trajectories: &[Option<ObservableSeries>],
    levels: &[f64],
    optimal: Option<&ObservableSeries>,
) -> Result<ForecastBand> {
    if levels.iter().any(|q| !(0.0..=1.0).contains(q)) {
        return Err(Error::Config(format!("quantile levels must lie in [0, 1], got {levels:?}")));
    }
    let valid: Vec<&ObservableSeries> = trajectories.iter().flatten().collect();
    if valid.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{} of {} forecast members are usable; at least 2 are needed",
            valid.len(),
            trajectories.len()
        )));
    }
    let t_start = valid[0].t_start;
    let days = valid[0].days();
    if valid.iter().any(|s| s.t_start != t_start || s.days() != days) {
        return Err(Error::Dimension("forecast members cover different days".into()));
    }
    let mut column = vec![0.0; valid.len()];
    let bands = Observable::ALL
        .iter()
        .map(|&obs| {
            let mut quantiles = vec![Vec::with_capacity(days); levels.len()];
            let mut mean = Vec::with_capacity(days);
            for k in 0..days {
                for (c, s) in column.iter_mut().zip(&valid) {
                    *c = s.column(obs)[k];
                }
                column.sort_by(|a, b| a.total_cmp(b));
                for (q, out) in levels.iter().zip(&mut quantiles) {
                    out.push(quantile_sorted(&column, *q));
                }
                mean.push(column.iter().sum::<f64>() / column.len() as f64);
            }
            ObservableBand { observable: obs, quantiles, mean, optimal: optimal.map(|o| o.column(obs).to_vec()) }
        })
        .collect();
    Ok(ForecastBand {
        t_start,
        levels: levels.to_vec(),
        bands,
        members: trajectories.len(),
        excluded: trajectories.len() - valid.len(),
    })
}

/// Split at `holdout_days` before the last observed day.
pub fn holdout_protocol(obs: &ObservationSet, holdout_days: usize) -> Result<(ObservationSet, ObservationSet)> {
    let first = obs.first_day().ok_or_else(|| Error::Data("observation set is empty".into()))?;
    let last = obs.last_day().expect("nonempty");
    let train_end = last - holdout_days as i64;
    if train_end < first {
        return Err(Error::Config(format!(
            "holdout of {holdout_days} days leaves no training data in days {first}..={last}"
        )));
    }
    Ok((obs.window(first, train_end), obs.window(train_end + 1, last)))
}

/// Fraction of observation points whose value lies inside the band between
/// the levels `low` and `high`, compared in log space.
pub fn coverage(band: &ForecastBand, obs: &ObservationSet, low: f64, high: f64) -> Result<f64> {
    let lo = band.level_index(low).ok_or_else(|| Error::Config(format!("level {low} was not computed")))?;
    let hi = band.level_index(high).ok_or_else(|| Error::Config(format!("level {high} was not computed")))?;
    let mut inside = 0usize;
    let mut total = 0usize;
    for b in &obs.blocks {
        let bb = band.band(b.observable).expect("every observable is banded");
        for day in b.days() {
            let k = day - band.t_start;
            if k < 0 || k as usize >= band.days() {
                return Err(Error::Data(format!("day {day} lies outside the forecast")));
            }
            let y = b.log_data(day).expect("day in block");
            let (l, u) = (bb.quantiles[lo][k as usize].ln(), bb.quantiles[hi][k as usize].ln());
            total += 1;
            if l <= y && y <= u {
                inside += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Data("no observation points to score".into()));
    }
    Ok(inside as f64 / total as f64)
}
