//! Run configuration: one TOML file per run, flags override selected keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ltc_core::data::DataConfig;
use ltc_core::inversion::{Freeze, PenaltyConfig};
use ltc_core::optimizer::OptimizerOptions;
use ltc_core::posterior::PriorConfig;
use ltc_core::psvgd::SamplerConfig;
use ltc_core::reference;
use ltc_core::synth::SynthConfig;
use ltc_core::{Error, Result};

/// Raw input streams, relative to the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    pub state: PathBuf,
    pub ltc: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self { state: "state.csv".into(), ltc: "ltc.csv".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Population inside and outside LTC.
    pub population: [f64; 2],
    /// Exposed individuals on the first day.
    pub exposed: [f64; 2],
    pub substeps_per_day: u32,
    /// Day (counted from the first data row) of the initial state.
    pub t_start: i64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { population: [60_000.0, 8_800_000.0], exposed: reference::EXPOSED, substeps_per_day: 10, t_start: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Knot spacing of the first stage; the second stage is daily.
    pub coarse_delta_t: u32,
    pub penalty: PenaltyConfig,
    pub optimizer: OptimizerOptions,
    /// Groups held at the values in `known`.
    pub freeze: Freeze,
    /// Parameter file (JSON) providing the frozen values.
    pub known: Option<PathBuf>,
    /// Parameter file (JSON) used as the starting point instead of the references.
    pub initial: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            coarse_delta_t: 7,
            penalty: PenaltyConfig::default(),
            optimizer: OptimizerOptions::default(),
            freeze: Freeze::default(),
            known: None,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    /// Trailing days withheld from fitting and sampling and scored afterwards.
    pub holdout_days: usize,
    /// Largest tolerated share of divergent ensemble members.
    pub max_excluded_fraction: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self { horizon: 28, quantiles: vec![0.05, 0.5, 0.95], holdout_days: 0, max_excluded_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub noise: SynthConfig,
    /// Parameter file (JSON) with the generating parameters; the built-in
    /// example curves are used when absent.
    pub truth: Option<PathBuf>,
    /// Days over which the example ratios vary before they level off.
    pub period: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub days: usize,
    pub delta_t: u32,
    pub coordinates: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { days: 30, delta_t: 7, coordinates: 20, step: 1e-6, tolerance: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub preprocess: DataConfig,
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub forecast: ForecastConfig,
    pub synth: SynthSection,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: "out".into(),
            data: DataPaths::default(),
            preprocess: DataConfig::default(),
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            prior: PriorConfig::default(),
            sampler: SamplerConfig::default(),
            forecast: ForecastConfig::default(),
            synth: SynthSection::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub quantiles: Option<Vec<f64>>,
    pub holdout_days: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read, resolve relative paths against the file's directory, apply the
    /// flags and validate.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.apply(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        join(&mut self.data.state);
        join(&mut self.data.ltc);
        for p in [&mut self.fit.known, &mut self.fit.initial, &mut self.synth.truth].into_iter().flatten() {
            join(p);
        }
    }

    /// Apply flag values. A new worker count keeps the total particle count.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.sampler.seed = s;
            self.synth.noise.seed = s;
        }
        if let Some(w) = o.workers {
            let total = self.sampler.total_particles();
            if w == 0 || total % w != 0 {
                return Err(Error::Config(format!("{total} particles cannot be split evenly over {w} workers")));
            }
            self.sampler.workers = w;
            self.sampler.particles_per_worker = total / w;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(q) = &o.quantiles {
            self.forecast.quantiles = q.clone();
        }
        if let Some(h) = o.holdout_days {
            self.forecast.holdout_days = h;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if !m.population.iter().chain(&m.exposed).all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::Config("populations and exposed counts must be positive".into()));
        }
        if m.exposed.iter().zip(&m.population).any(|(e, n)| e > n) {
            return Err(Error::Config("exposed counts exceed the populations".into()));
        }
        if m.substeps_per_day == 0 || self.fit.coarse_delta_t == 0 || self.gradcheck.delta_t == 0 {
            return Err(Error::Config("substeps and knot spacings must be at least 1".into()));
        }
        if self.fit.known.is_none() && !self.fit.freeze.is_empty() {
            return Err(Error::Config("fit.freeze needs fit.known".into()));
        }
        let f = &self.forecast;
        if f.quantiles.is_empty() || f.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config(format!("quantiles must be nonempty and lie in [0, 1], got {:?}", f.quantiles)));
        }
        if !(0.0..=1.0).contains(&f.max_excluded_fraction) {
            return Err(Error::Config("max_excluded_fraction must lie in [0, 1]".into()));
        }
        if f.holdout_days > 0 && f.horizon < f.holdout_days {
            return Err(Error::Config(format!(
                "forecast horizon {} is shorter than the holdout of {} days",
                f.horizon, f.holdout_days
            )));
        }
        self.fit.penalty.validate()?;
        self.prior.validate()?;
        self.sampler.validate()?;
        Ok(())
    }
}
