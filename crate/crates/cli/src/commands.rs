//! The verbs. Each reads what it needs from the configuration and the output
//! directory and writes flat, plot-ready files back into it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ltc_core::data::{moving_average_7, prepare, read_raw_files, write_raw, write_smoothed, ObservationSet, PreparedData};
use ltc_core::forecast::{coverage, forecast_ensemble, forecast_trajectory, holdout_protocol, quantile_bands};
use ltc_core::gradient::{fd_check, sample_coordinates, FdReport};
use ltc_core::inversion::{
    fit_coarse_to_fine_with, initial_guess, objective, objective_gradient, refine_with, resample,
    write_trajectory_csv, Known, ObjectiveParts, Problem,
};
use ltc_core::model::{CompartmentState, ParameterSet, TimeGrid};
use ltc_core::optimizer::{OptimizeResult, Status};
use ltc_core::posterior::{to_constrained, EpidemicPosterior, EpidemicPrior};
use ltc_core::psvgd::{psvgd_adaptive, write_eigen_history, Ensemble};
use ltc_core::synth::{example_truth, synthesize, SynthConfig};
use ltc_core::{Error, Result};

use crate::config::RunConfig;

pub const FIT_FILE: &str = "fit.json";
pub const ENSEMBLE_FILE: &str = "ensemble.txt";

fn output(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.join(name))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Internal(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// A parameter file: either a bare parameter set or any record with a `theta` field.
pub fn read_parameters(path: &Path) -> Result<ParameterSet> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Source {
        Bare(ParameterSet),
        Fit { theta: ParameterSet },
    }
    let theta = match read_json::<Source>(path)? {
        Source::Bare(t) | Source::Fit { theta: t } => t,
    };
    theta.validate()?;
    Ok(theta)
}

pub fn load_data(cfg: &RunConfig) -> Result<PreparedData> {
    let raw = read_raw_files(&cfg.data.state, &cfg.data.ltc)?;
    prepare(&raw, &cfg.preprocess)
}

/// Training observations and, when a holdout is configured, the withheld days.
pub fn split(cfg: &RunConfig, obs: ObservationSet) -> Result<(ObservationSet, Option<ObservationSet>)> {
    if cfg.forecast.holdout_days == 0 {
        return Ok((obs, None));
    }
    let (train, valid) = holdout_protocol(&obs, cfg.forecast.holdout_days)?;
    Ok((train, Some(valid)))
}

pub fn initial_state(cfg: &RunConfig) -> CompartmentState {
    CompartmentState::initial(cfg.model.population, cfg.model.exposed)
}

pub fn training_problem(cfg: &RunConfig) -> Result<(Problem, Option<ObservationSet>)> {
    let (train, valid) = split(cfg, load_data(cfg)?.observations)?;
    let problem = Problem::new(train, initial_state(cfg), cfg.model.t_start, cfg.model.substeps_per_day)?;
    Ok((problem, valid))
}

/// Smoothed copies of the four raw streams, the detected thresholds and the
/// assembled log-space observations.
pub fn cmd_smooth(cfg: &RunConfig) -> Result<()> {
    let raw = read_raw_files(&cfg.data.state, &cfg.data.ltc)?;
    let prep = prepare(&raw, &cfg.preprocess)?;
    for (name, series) in [
        ("confirmed", &raw.confirmed),
        ("hospitalized", &raw.hospitalized),
        ("deaths", &raw.deaths),
        ("ltc_deaths", &raw.ltc_deaths),
    ] {
        let smoothed = if cfg.preprocess.smooth { moving_average_7(series) } else { series.clone() };
        write_smoothed(series, &smoothed, create(&output(cfg, &format!("smoothed_{name}.csv"))?)?)?;
    }
    prep.observations.write_thresholds(create(&output(cfg, "thresholds.csv")?)?)?;
    prep.observations.write_csv(create(&output(cfg, "observations.csv")?)?)?;
    log::info!("{} observation points in {} blocks", prep.observations.entry_count(), prep.observations.blocks.len());
    Ok(())
}

/// Generating parameters and the bookkeeping needed to fit the synthetic streams.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthRecord {
    pub theta: ParameterSet,
    /// Value for `preprocess.ltc_deaths_before_report` when fitting these streams.
    pub ltc_deaths_before_report: f64,
    pub synth: SynthConfig,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let noise = &cfg.synth.noise;
    let theta = match &cfg.synth.truth {
        Some(path) => read_parameters(path)?,
        None => {
            let grid = TimeGrid::new(0, noise.days as i64, 1, cfg.model.substeps_per_day)?;
            example_truth(&grid, cfg.model.population, cfg.synth.period.unwrap_or(noise.days as f64))
        }
    };
    theta.validate()?;
    let s = synthesize(&theta, &initial_state(cfg), cfg.model.substeps_per_day, noise)?;
    write_raw(&s.raw, create(&output(cfg, "state.csv")?)?, create(&output(cfg, "ltc.csv")?)?)?;
    let record = TruthRecord { theta, ltc_deaths_before_report: s.ltc_deaths_before_report, synth: noise.clone() };
    write_json(&output(cfg, "truth.json")?, &record)?;
    log::info!("{} days written; LTC deaths before the LTC stream: {}", noise.days, s.ltc_deaths_before_report);
    Ok(())
}

/// Summary of one optimization stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub delta_t: u32,
    pub status: Status,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the start and after every accepted step.
    pub log: Vec<f64>,
}

impl StageRecord {
    fn new(delta_t: u32, r: &OptimizeResult) -> Self {
        Self { delta_t, status: r.status, iterations: r.iterations, evaluations: r.evaluations, log: r.log.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub theta: ParameterSet,
    pub j: f64,
    pub f: f64,
    pub g: f64,
    /// Last day of the fitted window.
    pub window_end: i64,
    pub stages: Vec<StageRecord>,
}

fn write_iterations(path: &Path, stages: &[StageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["stage", "delta_t", "iteration", "objective"])?;
    for (s, stage) in stages.iter().enumerate() {
        for (k, j) in stage.log.iter().enumerate() {
            w.write_record([s.to_string(), stage.delta_t.to_string(), k.to_string(), j.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Coarse-then-daily fit of the training window. A daily initial guess skips
/// the coarse stage, so refitting a previous result cannot raise `J`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitRecord> {
    let (problem, _) = training_problem(cfg)?;
    let fc = &cfg.fit;
    let known = match &fc.known {
        Some(path) => Some(Known { values: read_parameters(path)?, freeze: fc.freeze.clone() }),
        None => None,
    };
    let initial = fc.initial.as_deref().map(read_parameters).transpose()?;
    let (theta, stages) = match initial {
        Some(init) if init.delta_t == 1 => {
            let daily = resample(&init, &problem.grid(1)?)?;
            let (theta, r) = refine_with(&daily, &problem, &fc.penalty, &fc.optimizer, known.as_ref())?;
            (theta, vec![StageRecord::new(1, &r)])
        }
        other => {
            let grid = problem.grid(fc.coarse_delta_t)?;
            let theta0 = match other {
                Some(init) => resample(&init, &grid)?,
                None => initial_guess(&grid, &fc.penalty, cfg.model.population),
            };
            let fit = fit_coarse_to_fine_with(&theta0, &problem, &fc.penalty, &fc.optimizer, known.as_ref())?;
            let stages = vec![StageRecord::new(fc.coarse_delta_t, &fit.coarse_result), StageRecord::new(1, &fit.fine_result)];
            (fit.theta, stages)
        }
    };
    let ObjectiveParts { j, f, g } = objective(&theta, &problem, &fc.penalty)?;
    log::info!("fit: J {j:.6e}, F {f:.6e}, G {g:.6e}");
    let series = forecast_trajectory(&theta, &problem.init, problem.t_start, problem.t_end, 0, problem.substeps_per_day)?;
    write_trajectory_csv(&series, create(&output(cfg, "trajectory.csv")?)?)?;
    write_iterations(&output(cfg, "iterations.csv")?, &stages)?;
    let record = FitRecord { theta, j, f, g, window_end: problem.t_end, stages };
    write_json(&output(cfg, FIT_FILE)?, &record)?;
    Ok(record)
}

pub fn read_fit(cfg: &RunConfig) -> Result<FitRecord> {
    read_json(&cfg.output_dir.join(FIT_FILE))
}

fn posterior(cfg: &RunConfig, fit: &FitRecord) -> Result<(EpidemicPosterior, Option<ObservationSet>)> {
    let (problem, valid) = training_problem(cfg)?;
    if problem.t_end != fit.window_end {
        return Err(Error::Config(format!(
            "the fit covers days through {}, the configured training window ends on day {}",
            fit.window_end, problem.t_end
        )));
    }
    let (prior, template) = EpidemicPrior::from_fit(&fit.theta, &problem, &cfg.prior)?;
    Ok((EpidemicPosterior::new(problem, template, prior, cfg.prior.noise_variance)?, valid))
}

/// Adaptive pSVGD from prior draws centered at the fit.
pub fn cmd_sample(cfg: &RunConfig) -> Result<Ensemble> {
    let fit = read_fit(cfg)?;
    let (post, _) = posterior(cfg, &fit)?;
    let sc = &cfg.sampler;
    let start = Ensemble::from_prior(&post.prior, sc.total_particles(), sc.seed)?;
    let out = psvgd_adaptive(start, &post, sc)?;
    out.ensemble.write(&output(cfg, ENSEMBLE_FILE)?)?;
    write_eigen_history(&output(cfg, "eigenvalues.csv")?, &out.history)?;
    Ok(out.ensemble)
}

/// Holdout score written next to the forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub low: f64,
    pub high: f64,
    pub holdout_days: usize,
    pub coverage: f64,
}

/// Quantile bands from the ensemble past the training window; scored against
/// the withheld days when a holdout is configured.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<Option<CoverageRecord>> {
    let fit = read_fit(cfg)?;
    let ensemble = Ensemble::read(&cfg.output_dir.join(ENSEMBLE_FILE))?;
    let (post, valid) = posterior(cfg, &fit)?;
    let p = &post.problem;
    let thetas =
        ensemble.samples.iter().map(|x| to_constrained(x, &post.template)).collect::<Result<Vec<_>>>()?;
    let fc = &cfg.forecast;
    let members =
        forecast_ensemble(&thetas, &p.init, p.t_start, p.t_end, fc.horizon, p.substeps_per_day, cfg.sampler.workers)?;
    let optimal = forecast_trajectory(&fit.theta, &p.init, p.t_start, p.t_end, fc.horizon, p.substeps_per_day)?;
    let band = quantile_bands(&members, &fc.quantiles, Some(&optimal))?;
    if band.excluded_fraction() > fc.max_excluded_fraction {
        return Err(Error::Degenerate(format!(
            "{} of {} members diverged, above the tolerated fraction {}",
            band.excluded, band.members, fc.max_excluded_fraction
        )));
    }
    band.write_csv(create(&output(cfg, "forecast.csv")?)?)?;
    let Some(valid) = valid else { return Ok(None) };
    let low = fc.quantiles.iter().copied().fold(f64::INFINITY, f64::min);
    let high = fc.quantiles.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let c = coverage(&band, &valid, low, high)?;
    log::info!("holdout coverage of the [{low}, {high}] band: {c:.3}");
    let record = CoverageRecord { low, high, holdout_days: fc.holdout_days, coverage: c };
    write_json(&output(cfg, "coverage.json")?, &record)?;
    Ok(Some(record))
}

/// Adjoint gradient of `J` against central differences on a noiseless
/// synthetic problem built from the example parameters.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<FdReport> {
    let gc = &cfg.gradcheck;
    let substeps = cfg.model.substeps_per_day;
    let daily = TimeGrid::new(0, gc.days as i64, 1, substeps)?;
    let truth = example_truth(&daily, cfg.model.population, gc.days as f64);
    let init = initial_state(cfg);
    let noise = SynthConfig { days: gc.days, ltc_start_day: (gc.days / 2).max(1) as i64, ..SynthConfig::default() };
    let s = synthesize(&truth, &init, substeps, &noise)?;
    let data = ltc_core::data::DataConfig {
        smooth: false,
        ltc_deaths_before_report: s.ltc_deaths_before_report,
        ..cfg.preprocess.clone()
    };
    let obs = prepare(&s.raw, &data)?.observations;
    let problem = Problem::new(obs, init, 0, substeps)?;
    let mut theta = resample(&truth, &daily.with_delta_t(gc.delta_t)?)?;
    theta.beta[0] *= 1.05;
    theta.contact[1][0] *= 0.9;
    let penalty = &cfg.fit.penalty;
    let (_, grad) = objective_gradient(&theta, &problem, penalty)?;
    let x = theta.to_vec();
    let coords = sample_coordinates(x.len(), gc.coordinates, gc.seed);
    let report = fd_check(
        |v| Ok(objective(&theta.with_vec(v)?, &problem, penalty)?.j),
        &x,
        &grad,
        &coords,
        gc.step,
        None,
        1e-6,
    )?;
    std::fs::write(output(cfg, "gradcheck.txt")?, report.render())?;
    log::info!("gradient check over {} of {} coordinates: max relative error {:.3e}", coords.len(), x.len(), report.max_error());
    if !(report.max_error() <= gc.tolerance) {
        return Err(Error::Internal(format!(
            "adjoint gradient disagrees with finite differences: {:.3e} > {:.1e}",
            report.max_error(),
            gc.tolerance
        )));
    }
    Ok(report)
}
