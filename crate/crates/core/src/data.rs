//! Ingestion of reported series, seven-day smoothing, LTC/non-LTC death
//! reconciliation and assembly of the weighted log-space observation vector.
//!
//! Day indices count from the first date of the state stream (day 0).

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Observable;

/// Weight of cumulative and hospitalized blocks.
pub const LEVEL_WEIGHT: f64 = 1.0;
/// Weight of daily blocks.
pub const DAILY_WEIGHT: f64 = 0.1;
/// Model values are floored here before taking logs.
pub const MODEL_FLOOR: f64 = 1e-10;

/// A series on consecutive days.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub start_day: i64,
    pub values: Vec<f64>,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, start_day: i64, values: Vec<f64>) -> Self {
        Self { name: name.into(), start_day, values }
    }

    pub fn end_day(&self) -> i64 {
        self.start_day + self.values.len() as i64 - 1
    }

    pub fn get(&self, day: i64) -> Option<f64> {
        if day < self.start_day {
            return None;
        }
        self.values.get((day - self.start_day) as usize).copied()
    }

    pub fn days(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len()).map(move |k| self.start_day + k as i64)
    }
}

/// Centered seven-day mean; indices outside the series take the nearest endpoint value.
pub fn moving_average_7(series: &RawSeries) -> RawSeries {
    let v = &series.values;
    let n = v.len() as i64;
    let values = (0..n)
        .map(|t| {
            let sum: f64 = (t - 3..=t + 3).map(|k| v[k.clamp(0, n - 1) as usize]).sum();
            sum / 7.0
        })
        .collect();
    RawSeries::new(format!("{}_ma7", series.name), series.start_day, values)
}

/// Prefix sums starting at the first entry.
pub fn accumulate(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Split total daily deaths into the LTC part and the remainder over the overlap of both series.
///
/// Returns `(d_1, d_2)` on the overlapping days. Negative remainders are kept
/// (they are floored only when taking logs) and reported with a warning.
pub fn split_ltc_deaths(total: &RawSeries, ltc: &RawSeries) -> Result<(RawSeries, RawSeries)> {
    let first = total.start_day.max(ltc.start_day);
    let last = total.end_day().min(ltc.end_day());
    if total.values.is_empty() || ltc.values.is_empty() || last < first {
        return Err(Error::Data(format!(
            "{} (days {}..{}) and {} (days {}..{}) do not overlap",
            total.name,
            total.start_day,
            total.end_day(),
            ltc.name,
            ltc.start_day,
            ltc.end_day()
        )));
    }
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let mut negative = 0usize;
    for day in first..=last {
        let a = ltc.get(day).expect("day inside overlap");
        let b = total.get(day).expect("day inside overlap") - a;
        if b < 0.0 {
            negative += 1;
        }
        d1.push(a);
        d2.push(b);
    }
    if negative > 0 {
        log::warn!("{negative} day(s) with more LTC deaths than total deaths; floored at the log floor");
    }
    Ok((RawSeries::new("d1", first, d1), RawSeries::new("d2", first, d2)))
}

/// Start days of the observation blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// First day cumulative confirmed exceeds its threshold.
    pub t1_p: i64,
    /// First day hospitalized exceeds its threshold.
    pub t1_h: i64,
    /// First day cumulative deaths exceed its threshold.
    pub t1_d: i64,
    /// Day before LTC deaths are first reported.
    pub t2_d: i64,
}

/// Crossing levels used by [`detect_thresholds`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdLevels {
    pub confirmed: f64,
    pub hospitalized: f64,
    pub deaths: f64,
}

impl Default for ThresholdLevels {
    fn default() -> Self {
        Self { confirmed: 100.0, hospitalized: 10.0, deaths: 10.0 }
    }
}

fn first_crossing(series: &RawSeries, level: f64) -> Result<i64> {
    series
        .days()
        .zip(&series.values)
        .find(|(_, v)| **v > level)
        .map(|(d, _)| d)
        .ok_or_else(|| Error::Config(format!("{} never exceeds {level}", series.name)))
}

/// First strict crossings of the cumulative confirmed, hospitalized and
/// cumulative death series; `t2_d = ltc_first_day - 1`.
pub fn detect_thresholds(
    confirmed: &RawSeries,
    hospitalized: &RawSeries,
    deaths: &RawSeries,
    ltc_first_day: i64,
    levels: &ThresholdLevels,
) -> Result<Thresholds> {
    Ok(Thresholds {
        t1_p: first_crossing(confirmed, levels.confirmed)?,
        t1_h: first_crossing(hospitalized, levels.hospitalized)?,
        t1_d: first_crossing(deaths, levels.deaths)?,
        t2_d: ltc_first_day - 1,
    })
}

/// One misfit block: a model observable compared on the inclusive day span `start..=end`.
///
/// `values[k]` holds `weight * log(data)` for day `start + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBlock {
    pub observable: Observable,
    pub start: i64,
    pub end: i64,
    pub weight: f64,
    pub values: Vec<f64>,
}

impl ObservationBlock {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn days(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.values.len()).map(move |k| self.start + k as i64)
    }

    /// Unweighted log of the data on `day`.
    pub fn log_data(&self, day: i64) -> Option<f64> {
        if day < self.start || day > self.end {
            return None;
        }
        Some(self.values[(day - self.start) as usize] / self.weight)
    }
}

/// Weighted log-space data with the thresholds that fix block spans.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub thresholds: Thresholds,
    pub blocks: Vec<ObservationBlock>,
}

/// Log with the floor applied to nonpositive values.
#[inline]
pub fn floored_log(value: f64, log_floor: f64) -> f64 {
    if value > 0.0 {
        value.ln()
    } else {
        log_floor.ln()
    }
}

impl ObservationSet {
    pub fn entry_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn first_day(&self) -> Option<i64> {
        self.blocks.iter().filter(|b| !b.is_empty()).map(|b| b.start).min()
    }

    pub fn last_day(&self) -> Option<i64> {
        self.blocks.iter().filter(|b| !b.is_empty()).map(|b| b.end).max()
    }

    pub fn block(&self, obs: Observable) -> Option<&ObservationBlock> {
        self.blocks.iter().find(|b| b.observable == obs)
    }

    /// Keep only days in `first..=last` of every block.
    pub fn window(&self, first: i64, last: i64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let start = b.start.max(first);
                let end = b.end.min(last);
                let values = if end >= start {
                    b.values[(start - b.start) as usize..=(end - b.start) as usize].to_vec()
                } else {
                    Vec::new()
                };
                ObservationBlock { observable: b.observable, start, end: end.max(start - 1), weight: b.weight, values }
            })
            .collect();
        Self { thresholds: self.thresholds, blocks }
    }

    /// `block,day,weight,value` rows, values in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block", "day", "weight", "value"])?;
        for b in &self.blocks {
            for (day, v) in b.days().zip(&b.values) {
                w.write_record([b.observable.name().to_string(), day.to_string(), b.weight.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_thresholds<W: Write>(&self, mut out: W) -> Result<()> {
        let t = &self.thresholds;
        writeln!(out, "threshold,day")?;
        writeln!(out, "t1_p,{}\nt1_h,{}\nt1_d,{}\nt2_d,{}", t.t1_p, t.t1_h, t.t1_d, t.t2_d)?;
        Ok(())
    }
}

/// The seven misfit blocks (nine with both groups) on their spans.
///
/// `t_end` is the last day of the total streams; the group death blocks end at
/// the last day of the LTC stream if that comes earlier.
pub fn assemble_observations(streams: &SmoothedStreams, thresholds: Thresholds, log_floor: f64) -> ObservationSet {
    let t = thresholds;
    let t_end = streams.t_end();
    let group_end = t_end.min(streams.d1.end_day());
    let block = |obs: Observable, series: &RawSeries, start: i64, end: i64| {
        let weight = if obs.is_daily() { DAILY_WEIGHT } else { LEVEL_WEIGHT };
        let start = start.max(series.start_day);
        let end = end.min(series.end_day());
        let values: Vec<f64> = if end >= start {
            (start..=end).map(|d| weight * floored_log(series.get(d).expect("in span"), log_floor)).collect()
        } else {
            Vec::new()
        };
        ObservationBlock { observable: obs, start, end: end.max(start - 1), weight, values }
    };
    let blocks = vec![
        block(Observable::Hospitalized, &streams.h, t.t1_h, t_end),
        block(Observable::Confirmed, &streams.p_cum, t.t1_p, t_end),
        block(Observable::ConfirmedDaily, &streams.p, t.t1_p + 1, t_end),
        block(Observable::Deaths, &streams.d_cum, t.t1_d, t.t2_d),
        block(Observable::DeathsDaily, &streams.d, t.t1_d + 1, t.t2_d),
        block(Observable::GroupDeaths(0), &streams.d1_cum, t.t2_d + 1, group_end),
        block(Observable::GroupDeaths(1), &streams.d2_cum, t.t2_d + 1, group_end),
        block(Observable::GroupDeathsDaily(0), &streams.d1, t.t2_d + 2, group_end),
        block(Observable::GroupDeathsDaily(1), &streams.d2, t.t2_d + 2, group_end),
    ];
    ObservationSet { thresholds, blocks }
}

/// Settings of the ingestion pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Replacement for nonpositive values before taking logs.
    pub log_floor: f64,
    /// Apply the seven-day moving average (disable for noiseless synthetic data).
    pub smooth: bool,
    /// Cumulative LTC deaths that occurred before the LTC stream starts.
    pub ltc_deaths_before_report: f64,
    pub thresholds: ThresholdLevels,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { log_floor: 0.5, smooth: true, ltc_deaths_before_report: 0.0, thresholds: ThresholdLevels::default() }
    }
}

/// Reported streams as read from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawData {
    pub first_date: NaiveDate,
    pub confirmed: RawSeries,
    pub hospitalized: RawSeries,
    pub deaths: RawSeries,
    pub ltc_deaths: RawSeries,
}

/// Smoothed daily series and their accumulations.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedStreams {
    pub p: RawSeries,
    pub p_cum: RawSeries,
    pub h: RawSeries,
    pub d: RawSeries,
    pub d_cum: RawSeries,
    pub d1: RawSeries,
    pub d1_cum: RawSeries,
    pub d2: RawSeries,
    pub d2_cum: RawSeries,
}

impl SmoothedStreams {
    pub fn t_end(&self) -> i64 {
        self.p.end_day()
    }
}

/// Smooth, accumulate and reconcile the raw streams.
pub fn smooth_streams(raw: &RawData, cfg: &DataConfig) -> Result<SmoothedStreams> {
    let smooth = |s: &RawSeries| {
        let mut out = if cfg.smooth { moving_average_7(s) } else { s.clone() };
        out.name = s.name.clone();
        out
    };
    let p = smooth(&raw.confirmed);
    let h = smooth(&raw.hospitalized);
    let d = smooth(&raw.deaths);
    let ltc = smooth(&raw.ltc_deaths);
    let (d1, d2) = split_ltc_deaths(&d, &ltc)?;
    let cumulative = |s: &RawSeries, name: &str| RawSeries::new(name, s.start_day, accumulate(&s.values));
    let p_cum = cumulative(&p, "P");
    let d_cum = cumulative(&d, "D");
    let mut d1_cum = cumulative(&d1, "D1");
    d1_cum.values.iter_mut().for_each(|v| *v += cfg.ltc_deaths_before_report);
    let d2_cum = RawSeries::new(
        "D2",
        d1.start_day,
        d1_cum.days().zip(&d1_cum.values).map(|(day, v1)| d_cum.get(day).expect("overlap") - v1).collect(),
    );
    Ok(SmoothedStreams { p, p_cum, h, d, d_cum, d1, d1_cum, d2, d2_cum })
}

/// Everything the downstream modules need from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub streams: SmoothedStreams,
    pub observations: ObservationSet,
}

pub fn prepare(raw: &RawData, cfg: &DataConfig) -> Result<PreparedData> {
    if !(cfg.log_floor > 0.0) {
        return Err(Error::Config(format!("log floor must be positive, got {}", cfg.log_floor)));
    }
    let streams = smooth_streams(raw, cfg)?;
    let thresholds = detect_thresholds(
        &streams.p_cum,
        &streams.h,
        &streams.d_cum,
        raw.ltc_deaths.start_day,
        &cfg.thresholds,
    )?;
    let observations = assemble_observations(&streams, thresholds, cfg.log_floor);
    Ok(PreparedData { streams, observations })
}

fn parse_date(s: &str, line: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Data(format!("line {line}: bad date {s:?}: {e}")))
}

fn parse_value(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Data(format!("line {line}: bad number {s:?}: {e}")))
}

fn read_table<R: Read>(input: R, header: &[&str]) -> Result<(NaiveDate, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Data(format!("expected header {}, found {}", header.join(","), got.join(","))));
    }
    let mut first = None;
    let mut prev: Option<NaiveDate> = None;
    let mut columns = vec![Vec::new(); header.len() - 1];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date = parse_date(&rec[0], line)?;
        if let Some(p) = prev {
            if date.signed_duration_since(p).num_days() != 1 {
                return Err(Error::Data(format!("line {line}: {date} does not follow {p} by one day")));
            }
        }
        first.get_or_insert(date);
        prev = Some(date);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse_value(&rec[c + 1], line)?);
        }
    }
    let first = first.ok_or_else(|| Error::Data("no data rows".into()))?;
    Ok((first, columns))
}

pub const STATE_HEADER: [&str; 4] = ["date", "confirmed_daily", "hospitalized_current", "deceased_daily"];
pub const LTC_HEADER: [&str; 2] = ["date", "ltc_deceased_daily"];

/// Parse the state and LTC streams; day 0 is the first state date.
pub fn read_raw<R1: Read, R2: Read>(state: R1, ltc: R2) -> Result<RawData> {
    let (first_date, cols) = read_table(state, &STATE_HEADER)?;
    let (ltc_first, ltc_cols) = read_table(ltc, &LTC_HEADER)?;
    let offset = ltc_first.signed_duration_since(first_date).num_days();
    let mut cols = cols.into_iter();
    Ok(RawData {
        first_date,
        confirmed: RawSeries::new(STATE_HEADER[1], 0, cols.next().expect("column")),
        hospitalized: RawSeries::new(STATE_HEADER[2], 0, cols.next().expect("column")),
        deaths: RawSeries::new(STATE_HEADER[3], 0, cols.next().expect("column")),
        ltc_deaths: RawSeries::new(LTC_HEADER[1], offset, ltc_cols.into_iter().next().expect("column")),
    })
}

pub fn read_raw_files(state: &Path, ltc: &Path) -> Result<RawData> {
    let open = |p: &Path| {
        std::fs::File::open(p).map_err(|e| Error::Data(format!("cannot open {}: {e}", p.display())))
    };
    read_raw(open(state)?, open(ltc)?)
}

/// Write the state and LTC streams in the input schema.
pub fn write_raw<W1: Write, W2: Write>(raw: &RawData, state: W1, ltc: W2) -> Result<()> {
    let date = |day: i64| raw.first_date + chrono::Duration::days(day);
    let mut w = csv::Writer::from_writer(state);
    w.write_record(STATE_HEADER)?;
    for (k, day) in raw.confirmed.days().enumerate() {
        w.write_record([
            date(day).to_string(),
            raw.confirmed.values[k].to_string(),
            raw.hospitalized.values[k].to_string(),
            raw.deaths.values[k].to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(ltc);
    w.write_record(LTC_HEADER)?;
    for (day, v) in raw.ltc_deaths.days().zip(&raw.ltc_deaths.values) {
        w.write_record([date(day).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `day,<stream>,<stream>_ma7` for one raw stream.
pub fn write_smoothed<W: Write>(raw: &RawSeries, smoothed: &RawSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day".to_string(), raw.name.clone(), format!("{}_ma7", raw.name)])?;
    for (k, day) in raw.days().enumerate() {
        w.write_record([day.to_string(), raw.values[k].to_string(), smoothed.values[k].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> RawSeries {
        RawSeries::new("x", 0, values.to_vec())
    }

    fn window_oracle(v: &[f64], t: usize) -> f64 {
        let mut sum = 0.0;
        for offset in 0..7 {
            let k = t as i64 - 3 + offset;
            let x = if k < 0 {
                v[0]
            } else if k as usize >= v.len() {
                v[v.len() - 1]
            } else {
                v[k as usize]
            };
            sum += x;
        }
        sum / 7.0
    }

    #[test]
    fn moving_average_examples() {
        let c = moving_average_7(&series(&[3.5; 12]));
        assert!(c.values.iter().all(|v| *v == 3.5));

        let weekly: Vec<f64> = (0..35).map(|k| if k % 7 == 0 { 7.0 } else { 0.0 }).collect();
        let m = moving_average_7(&series(&weekly));
        for t in 3..32 {
            assert!((m.values[t] - 1.0).abs() < 1e-15, "{t}");
        }

        let v: Vec<f64> = (0..20).map(|k| if k % 4 == 3 { 7.0 } else { 0.0 }).collect();
        let m = moving_average_7(&series(&v));
        for t in 0..v.len() {
            assert_eq!(m.values[t], window_oracle(&v, t), "{t}");
        }
        // padding by hand: window at t = 0 is (0,0,0,0,0,0,7)
        assert_eq!(m.values[0], 1.0);
        // t = 19: v[16..=19] = (0,0,0,7) then three copies of v[19] = 7
        assert_eq!(m.values[19], 4.0);
    }

    proptest! {
        #[test]
        fn moving_average_matches_window_oracle(v in prop::collection::vec(-50.0f64..500.0, 1..60)) {
            let m = moving_average_7(&series(&v));
            for t in 0..v.len() {
                prop_assert!((m.values[t] - window_oracle(&v, t)).abs() <= 1e-12 * (1.0 + m.values[t].abs()));
            }
        }

        #[test]
        fn accumulate_round_trips_counts(v in prop::collection::vec(0u32..100_000, 200)) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            let c = accumulate(&v);
            prop_assert_eq!(c[0], v[0]);
            for t in 1..v.len() {
                prop_assert_eq!(c[t] - c[t - 1], v[t]);
            }
        }

        #[test]
        fn split_is_consistent(pairs in prop::collection::vec((0.0f64..300.0, 0.0f64..1.0), 5..40), shift in 0i64..4) {
            let total: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ltc: Vec<f64> = pairs.iter().skip(shift as usize).map(|p| p.0 * p.1).collect();
            let t = RawSeries::new("d", 0, total.clone());
            let l = RawSeries::new("d_ltc", shift, ltc.clone());
            let (d1, d2) = split_ltc_deaths(&t, &l).unwrap();
            prop_assert_eq!(d1.start_day, shift);
            for (k, day) in d1.days().enumerate() {
                prop_assert_eq!(d1.values[k], ltc[k]);
                prop_assert_eq!(d2.values[k], total[day as usize] - ltc[k]);
            }
        }
    }

    #[test]
    fn accumulate_examples() {
        assert_eq!(accumulate(&[1.0, 2.0, 3.0]), vec![1.0, 3.0, 6.0]);
        assert_eq!(accumulate(&[0.0; 4]), vec![0.0; 4]);
    }

    #[test]
    fn split_examples() {
        let t = series(&[10.0; 5]);
        let (d1, d2) = split_ltc_deaths(&t, &RawSeries::new("l", 1, vec![4.0; 3])).unwrap();
        assert_eq!(d1.values, vec![4.0; 3]);
        assert_eq!(d2.values, vec![6.0; 3]);
        assert_eq!((d2.start_day, d2.end_day()), (1, 3));
        let (_, d2) = split_ltc_deaths(&t, &t).unwrap();
        assert!(d2.values.iter().all(|v| *v == 0.0));
        assert!(matches!(split_ltc_deaths(&t, &RawSeries::new("l", 9, vec![1.0])), Err(Error::Data(_))));
    }

    #[test]
    fn threshold_examples() {
        let mut p = vec![0.0; 20];
        p[11] = 99.0;
        p[12] = 140.0;
        for v in &mut p[13..] {
            *v = 200.0;
        }
        let h = vec![12.0; 20];
        let d: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let t = detect_thresholds(&series(&p), &series(&h), &series(&d), 15, &ThresholdLevels::default()).unwrap();
        assert_eq!(t, Thresholds { t1_p: 12, t1_h: 0, t1_d: 11, t2_d: 14 });
        // exactly at the level is not a crossing
        let d = vec![10.0; 20];
        let err = detect_thresholds(&series(&p), &series(&h), &RawSeries::new("D", 0, d), 15, &ThresholdLevels::default());
        assert!(matches!(err, Err(Error::Config(m)) if m.contains('D')));
    }

    proptest! {
        #[test]
        fn thresholds_match_linear_scan(
            p in prop::collection::vec(0.0f64..200.0, 30), h in prop::collection::vec(0.0f64..20.0, 30),
            d in prop::collection::vec(0.0f64..20.0, 30), ltc_first in 1i64..30
        ) {
            let scan = |v: &[f64], lvl: f64| v.iter().position(|x| *x > lvl).map(|k| k as i64);
            let got = detect_thresholds(&series(&p), &series(&h), &series(&d), ltc_first, &ThresholdLevels::default());
            match (scan(&p, 100.0), scan(&h, 10.0), scan(&d, 10.0)) {
                (Some(a), Some(b), Some(c)) => {
                    prop_assert_eq!(got.unwrap(), Thresholds { t1_p: a, t1_h: b, t1_d: c, t2_d: ltc_first - 1 });
                }
                _ => prop_assert!(got.is_err()),
            }
        }
    }

    fn streams_from(p: Vec<f64>, h: Vec<f64>, d: Vec<f64>, d1: RawSeries) -> SmoothedStreams {
        let raw = RawData {
            first_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            confirmed: RawSeries::new("c", 0, p),
            hospitalized: RawSeries::new("h", 0, h),
            deaths: RawSeries::new("d", 0, d),
            ltc_deaths: d1,
        };
        smooth_streams(&raw, &DataConfig { smooth: false, ..DataConfig::default() }).unwrap()
    }

    #[test]
    fn assembly_examples() {
        let e = std::f64::consts::E;
        let n = 30;
        let s = streams_from(vec![e; n], vec![e; n], vec![e.powi(10); n], RawSeries::new("l", 20, vec![0.0; 10]));
        let t = Thresholds { t1_p: 2, t1_h: 0, t1_d: 1, t2_d: 19 };
        let obs = assemble_observations(&s, t, 0.5);
        let h = obs.block(Observable::Hospitalized).unwrap();
        assert!(h.values.iter().all(|v| (*v - 1.0).abs() < 1e-15));
        let d = obs.block(Observable::DeathsDaily).unwrap();
        assert!(d.values.iter().all(|v| (*v - 1.0).abs() < 1e-14));
        let d1 = obs.block(Observable::GroupDeathsDaily(0)).unwrap();
        assert!(d1.values.iter().all(|v| *v == 0.1 * 0.5f64.ln()));
    }

    /// Enumerates every block and compares its span with the misfit's summation limits.
    #[test]
    fn block_spans_match_misfit_limits() {
        let n = 60;
        let s = streams_from(vec![5.0; n], vec![5.0; n], vec![5.0; n], RawSeries::new("l", 30, vec![1.0; 30]));
        let t = Thresholds { t1_p: 7, t1_h: 4, t1_d: 12, t2_d: 29 };
        let obs = assemble_observations(&s, t, 0.5);
        let end = 59;
        let expect = [
            (Observable::Hospitalized, 4, end, 1.0),
            (Observable::Confirmed, 7, end, 1.0),
            (Observable::ConfirmedDaily, 8, end, 0.1),
            (Observable::Deaths, 12, 29, 1.0),
            (Observable::DeathsDaily, 13, 29, 0.1),
            (Observable::GroupDeaths(0), 30, end, 1.0),
            (Observable::GroupDeaths(1), 30, end, 1.0),
            (Observable::GroupDeathsDaily(0), 31, end, 0.1),
            (Observable::GroupDeathsDaily(1), 31, end, 0.1),
        ];
        assert_eq!(obs.blocks.len(), expect.len());
        for (b, (o, s, e, w)) in obs.blocks.iter().zip(expect) {
            assert_eq!((b.observable, b.start, b.end, b.weight), (o, s, e, w));
            assert_eq!(b.len() as i64, e - s + 1);
        }
    }

    #[test]
    fn window_keeps_requested_days() {
        let n = 40;
        let s = streams_from(vec![5.0; n], vec![5.0; n], vec![5.0; n], RawSeries::new("l", 20, vec![1.0; 20]));
        let obs = assemble_observations(&s, Thresholds { t1_p: 2, t1_h: 0, t1_d: 5, t2_d: 19 }, 0.5);
        let train = obs.window(0, 25);
        let valid = obs.window(26, 39);
        assert_eq!(train.entry_count() + valid.entry_count(), obs.entry_count());
        assert_eq!(train.last_day(), Some(25));
        assert_eq!(valid.first_day(), Some(26));
        let d = valid.block(Observable::Deaths).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn ltc_offset_and_group_accumulation() {
        let n = 20;
        let raw = RawData {
            first_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            confirmed: RawSeries::new("c", 0, vec![1.0; n]),
            hospitalized: RawSeries::new("h", 0, vec![1.0; n]),
            deaths: RawSeries::new("d", 0, vec![3.0; n]),
            ltc_deaths: RawSeries::new("l", 10, vec![1.0; 10]),
        };
        let cfg = DataConfig { smooth: false, ltc_deaths_before_report: 7.0, ..DataConfig::default() };
        let s = smooth_streams(&raw, &cfg).unwrap();
        assert_eq!(s.d1_cum.values[0], 8.0);
        assert_eq!(s.d1_cum.values[9], 17.0);
        for (k, day) in s.d2_cum.days().enumerate() {
            assert_eq!(s.d1_cum.values[k] + s.d2_cum.values[k], s.d_cum.get(day).unwrap());
        }
    }

    #[test]
    fn csv_round_trip_and_gap_detection() {
        let state = "date,confirmed_daily,hospitalized_current,deceased_daily\n2020-03-01,1,2,0\n2020-03-02,3,4,1\n2020-03-03,5,6,-1\n";
        let ltc = "date,ltc_deceased_daily\n2020-03-02,0.5\n2020-03-03,1\n";
        let raw = read_raw(state.as_bytes(), ltc.as_bytes()).unwrap();
        assert_eq!(raw.ltc_deaths.start_day, 1);
        assert_eq!(raw.deaths.values, vec![0.0, 1.0, -1.0]);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_raw(&raw, &mut a, &mut b).unwrap();
        assert_eq!(String::from_utf8(a).unwrap(), state);
        assert_eq!(String::from_utf8(b).unwrap(), ltc);

        let gap = "date,confirmed_daily,hospitalized_current,deceased_daily\n2020-03-01,1,2,0\n2020-03-03,3,4,1\n";
        assert!(matches!(read_raw(gap.as_bytes(), ltc.as_bytes()), Err(Error::Data(_))));
        let bad_header = "date,confirmed,hospitalized_current,deceased_daily\n2020-03-01,1,2,0\n";
        assert!(matches!(read_raw(bad_header.as_bytes(), ltc.as_bytes()), Err(Error::Data(_))));
    }
}
