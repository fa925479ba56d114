//! Inference engine for a two-group (inside/outside long-term care) COVID-19
//! compartmental model.
//!
//! * [`model`]: the SEIR-H-D equations, parameter layout and forward integration.
//! * [`data`]: ingestion, smoothing and assembly of log-space observations.
//! * [`gradient`]: discrete adjoint of the fixed-step integrator.
//! * [`inversion`]: misfit, penalty and bound-constrained optimization.
//! * [`posterior`]: unconstrained coordinates, Gaussian-process prior, likelihood.
//! * [`psvgd`]: full and projected Stein variational gradient descent.
//! * [`forecast`]: posterior-predictive bands and the hold-out protocol.
//! * [`synth`]: synthetic raw streams for twin experiments.

pub mod data;
pub mod error;
pub mod forecast;
pub mod gradient;
pub mod inversion;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod optimizer;
pub mod posterior;
pub mod psvgd;
pub mod reference;
pub mod synth;

pub use error::{Error, Result};
