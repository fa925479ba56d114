//! Bayesian formulation in unconstrained coordinates.
//!
//! Ratios map through `ratio = (tanh g + 1) / 2` and scalars through
//! `scalar = exp h`; `x = (g, h)` uses the flat parameter layout. The prior
//! on each of the eight `g` sequences is Gaussian with precision
//! `(s_g / dt^2) K + s_I I`, where `K` is the Neumann difference Laplacian,
//! and the prior on `h` is an independent normal with standard deviation
//! `s_h |h*_l|`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{interpolate_to_daily, weighted_log_misfit, weighted_log_misfit_gradient, Problem};
use crate::linalg::TridiagonalCholesky;
use crate::model::{ParameterSet, SCALAR_DIM, SEQUENCE_COUNT};

/// Ratios are pulled this far inside (0, 1) before building a prior mean.
pub const RATIO_CLAMP: f64 = 1e-3;

/// Map a parameter set to `x = (g, h)`.
pub fn to_unconstrained(theta: &ParameterSet) -> Result<Vec<f64>> {
    let v = theta.to_vec();
    let split = theta.scalar_offset();
    let mut x = Vec::with_capacity(v.len());
    for r in &v[..split] {
        if !(*r > 0.0 && *r < 1.0) {
            return Err(Error::Domain(format!("ratio {r} is not strictly inside (0, 1)")));
        }
        x.push((2.0 * r - 1.0).atanh());
    }
    for s in &v[split..] {
        if !(*s > 0.0) {
            return Err(Error::Domain(format!("scalar {s} is not positive")));
        }
        x.push(s.ln());
    }
    Ok(x)
}

/// Inverse of [`to_unconstrained`]; `template` supplies the grid and populations.
pub fn to_constrained(x: &[f64], template: &ParameterSet) -> Result<ParameterSet> {
    let split = template.scalar_offset();
    if x.len() != template.dim() {
        return Err(Error::Dimension(format!("x has {} entries, expected {}", x.len(), template.dim())));
    }
    let v: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, xi)| if i < split { 0.5 * (xi.tanh() + 1.0) } else { xi.exp() })
        .collect();
    template.with_vec(&v)
}

/// `d theta / d x` per coordinate.
pub fn transform_jacobian(x: &[f64], split: usize) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, xi)| {
            if i < split {
                let t = xi.tanh();
                0.5 * (1.0 - t * t)
            } else {
                xi.exp()
            }
        })
        .collect()
}

/// `s_g sum ((g_j - g_{j-1}) / dt)^2 + s_I |g|^2`.
pub fn gp_precision_quadratic(g: &[f64], s_g: f64, s_i: f64, delta_t: f64) -> f64 {
    let diffs: f64 = g.windows(2).map(|w| ((w[1] - w[0]) / delta_t).powi(2)).sum();
    s_g * diffs + s_i * g.iter().map(|v| v * v).sum::<f64>()
}

/// Gaussian prior given by its mean and a factored precision `P = R R^T`.
pub trait GaussianPrior: Sync {
    fn dim(&self) -> usize;
    fn mean(&self) -> &[f64];
    /// `P v`.
    fn apply_precision(&self, v: &[f64]) -> Vec<f64>;
    /// `R^{-1} v` in place.
    fn factor_solve(&self, v: &mut [f64]);
    /// `R^{-T} v` in place.
    fn factor_solve_transpose(&self, v: &mut [f64]);

    /// `-(x - m)^T P (x - m) / 2` and its gradient.
    fn log_density_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let r: Vec<f64> = x.iter().zip(self.mean()).map(|(a, b)| a - b).collect();
        let pr = self.apply_precision(&r);
        let q: f64 = r.iter().zip(&pr).map(|(a, b)| a * b).sum();
        (-0.5 * q, pr.into_iter().map(|v| -v).collect())
    }

    /// One draw `m + R^{-T} z`, `z` standard normal.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64>
    where
        Self: Sized,
    {
        let mut z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.factor_solve_transpose(&mut z);
        z.iter().zip(self.mean()).map(|(a, b)| a + b).collect()
    }
}

/// Prior scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub s_g: f64,
    pub s_i: f64,
    pub s_h: f64,
    /// Variance of the log-space observation noise (identity covariance scaled).
    pub noise_variance: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { s_g: 1000.0, s_i: 1.0, s_h: 0.1, noise_variance: 1.0 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_g > 0.0 && self.s_i > 0.0 && self.s_h > 0.0 && self.noise_variance > 0.0) {
            return Err(Error::Config("prior scales and noise variance must be positive".into()));
        }
        Ok(())
    }
}

/// Block prior of the epidemic: eight identical tridiagonal blocks for `g`, diagonal for `h`.
#[derive(Clone, Debug)]
pub struct EpidemicPrior {
    pub knots: usize,
    pub s_g: f64,
    pub s_i: f64,
    pub delta_t: f64,
    mean: Vec<f64>,
    /// Per-coordinate precision of `h`.
    h_precision: [f64; SCALAR_DIM],
    block_diag: Vec<f64>,
    block_off: Vec<f64>,
    chol: TridiagonalCholesky,
}

impl EpidemicPrior {
    pub fn new(mean: Vec<f64>, knots: usize, delta_t: f64, cfg: &PriorConfig) -> Result<Self> {
        cfg.validate()?;
        if knots < 2 {
            return Err(Error::Config("the prior needs at least two knots per sequence".into()));
        }
        if mean.len() != SEQUENCE_COUNT * knots + SCALAR_DIM {
            return Err(Error::Dimension(format!("prior mean has {} entries", mean.len())));
        }
        let c = cfg.s_g / (delta_t * delta_t);
        let mut block_diag = vec![2.0 * c + cfg.s_i; knots];
        block_diag[0] = c + cfg.s_i;
        block_diag[knots - 1] = c + cfg.s_i;
        let block_off = vec![-c; knots - 1];
        let chol = TridiagonalCholesky::factor(&block_diag, &block_off)?;
        let mut h_precision = [0.0; SCALAR_DIM];
        for (l, h) in mean[SEQUENCE_COUNT * knots..].iter().enumerate() {
            let sd = cfg.s_h * h.abs();
            if !(sd > 0.0) {
                return Err(Error::Config(format!(
                    "scalar {l} has log-mean {h}; its prior standard deviation s_h |h*| vanishes"
                )));
            }
            h_precision[l] = 1.0 / (sd * sd);
        }
        Ok(Self { knots, s_g: cfg.s_g, s_i: cfg.s_i, delta_t, mean, h_precision, block_diag, block_off, chol })
    }

    /// Prior centered at a deterministic optimum, interpolated to daily knots if needed.
    pub fn from_fit(theta_star: &ParameterSet, problem: &Problem, cfg: &PriorConfig) -> Result<(Self, ParameterSet)> {
        let daily = if theta_star.delta_t == 1 {
            theta_star.clone()
        } else {
            interpolate_to_daily(theta_star, &problem.grid(theta_star.delta_t)?)?
        };
        let mut clamped = daily.clone();
        let mut v = clamped.to_vec();
        let split = clamped.scalar_offset();
        for r in &mut v[..split] {
            *r = r.clamp(RATIO_CLAMP, 1.0 - RATIO_CLAMP);
        }
        clamped.set_from_slice(&v)?;
        let mean = to_unconstrained(&clamped)?;
        let prior = Self::new(mean, clamped.knot_count(), 1.0, cfg)?;
        Ok((prior, clamped))
    }

    pub fn h_precision(&self) -> &[f64; SCALAR_DIM] {
        &self.h_precision
    }

    fn g_len(&self) -> usize {
        SEQUENCE_COUNT * self.knots
    }

    /// Dense precision matrix, for tests and small problems.
    pub fn dense_precision(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.knots;
        let mut m = DMatrix::zeros(d, d);
        for b in 0..SEQUENCE_COUNT {
            for i in 0..n {
                m[(b * n + i, b * n + i)] = self.block_diag[i];
                if i + 1 < n {
                    m[(b * n + i, b * n + i + 1)] = self.block_off[i];
                    m[(b * n + i + 1, b * n + i)] = self.block_off[i];
                }
            }
        }
        for l in 0..SCALAR_DIM {
            m[(self.g_len() + l, self.g_len() + l)] = self.h_precision[l];
        }
        m
    }
}

impl GaussianPrior for EpidemicPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn apply_precision(&self, v: &[f64]) -> Vec<f64> {
        let n = self.knots;
        let mut out = vec![0.0; v.len()];
        for b in 0..SEQUENCE_COUNT {
            let x = &v[b * n..(b + 1) * n];
            let y = &mut out[b * n..(b + 1) * n];
            for i in 0..n {
                let mut s = self.block_diag[i] * x[i];
                if i > 0 {
                    s += self.block_off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.block_off[i] * x[i + 1];
                }
                y[i] = s;
            }
        }
        for l in 0..SCALAR_DIM {
            out[self.g_len() + l] = self.h_precision[l] * v[self.g_len() + l];
        }
        out
    }

    fn factor_solve(&self, v: &mut [f64]) {
        let n = self.knots;
        for b in 0..SEQUENCE_COUNT {
            self.chol.solve_lower(&mut v[b * n..(b + 1) * n]);
        }
        let g = self.g_len();
        for l in 0..SCALAR_DIM {
            v[g + l] /= self.h_precision[l].sqrt();
        }
    }

    fn factor_solve_transpose(&self, v: &mut [f64]) {
        let n = self.knots;
        for b in 0..SEQUENCE_COUNT {
            self.chol.solve_upper(&mut v[b * n..(b + 1) * n]);
        }
        let g = self.g_len();
        for l in 0..SCALAR_DIM {
            v[g + l] /= self.h_precision[l].sqrt();
        }
    }
}

/// Gaussian prior with an explicit dense precision.
#[derive(Clone, Debug)]
pub struct DensePrior {
    mean: Vec<f64>,
    precision: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl DensePrior {
    pub fn new(mean: Vec<f64>, precision: DMatrix<f64>) -> Result<Self> {
        if precision.nrows() != mean.len() || precision.ncols() != mean.len() {
            return Err(Error::Dimension("precision does not match the mean".into()));
        }
        let factor = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("dense prior precision".into()))?
            .l();
        Ok(Self { mean, precision, factor })
    }

    /// Prior with covariance `cov`.
    pub fn from_covariance(mean: Vec<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("dense prior covariance".into()))?
            .inverse();
        Self::new(mean, inv)
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl GaussianPrior for DensePrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean(&self) -> &[f64] {
        &self.mean
    }

    fn apply_precision(&self, v: &[f64]) -> Vec<f64> {
        (&self.precision * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    fn factor_solve(&self, v: &mut [f64]) {
        let mut b = DVector::from_column_slice(v);
        self.factor.solve_lower_triangular_mut(&mut b);
        v.copy_from_slice(b.as_slice());
    }

    fn factor_solve_transpose(&self, v: &mut [f64]) {
        let mut b = DVector::from_column_slice(v);
        self.factor.tr_solve_lower_triangular_mut(&mut b);
        v.copy_from_slice(b.as_slice());
    }
}

/// A posterior the samplers can work with.
pub trait BayesianModel: Sync {
    type Prior: GaussianPrior;

    fn prior(&self) -> &Self::Prior;

    fn dim(&self) -> usize {
        self.prior().dim()
    }

    /// Log-likelihood (up to a constant) and its gradient.
    fn log_likelihood_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn log_posterior_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, mut g) = self.log_likelihood_and_gradient(x)?;
        let (p, pg) = self.prior().log_density_and_gradient(x);
        for (a, b) in g.iter_mut().zip(pg) {
            *a += b;
        }
        Ok((l + p, g))
    }
}

/// Epidemic posterior: log-space Gaussian likelihood with the daily weights
/// folded into data and model output, times the block prior.
#[derive(Clone, Debug)]
pub struct EpidemicPosterior {
    pub problem: Problem,
    pub template: ParameterSet,
    pub prior: EpidemicPrior,
    pub noise_variance: f64,
    /// With the likelihood off the posterior equals the prior.
    pub likelihood: bool,
}

impl EpidemicPosterior {
    pub fn new(problem: Problem, template: ParameterSet, prior: EpidemicPrior, noise_variance: f64) -> Result<Self> {
        if template.dim() != prior.dim() {
            return Err(Error::Dimension("prior and parameter template disagree".into()));
        }
        if !(noise_variance > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
        Ok(Self { problem, template, prior, noise_variance, likelihood: true })
    }

    fn coef(&self) -> impl Fn(f64) -> f64 + '_ {
        move |w| 0.5 * w * w / self.noise_variance
    }

    /// `-(1/2) sum (w log m - y)^2 / noise_variance`; `-inf` when the model diverges.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        if !self.likelihood {
            return Ok(0.0);
        }
        let theta = to_constrained(x, &self.template)?;
        match weighted_log_misfit(&theta, &self.problem, self.coef()) {
            Ok(v) => Ok(-v),
            Err(e) if e.is_numerical() => {
                log::debug!("likelihood evaluation failed: {e}");
                Ok(f64::NEG_INFINITY)
            }
            Err(e) => Err(e),
        }
    }

    pub fn log_prior(&self, x: &[f64]) -> f64 {
        self.prior.log_density_and_gradient(x).0
    }
}

impl BayesianModel for EpidemicPosterior {
    type Prior = EpidemicPrior;

    fn prior(&self) -> &EpidemicPrior {
        &self.prior
    }

    fn log_likelihood_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if !self.likelihood {
            return Ok((0.0, vec![0.0; x.len()]));
        }
        let theta = to_constrained(x, &self.template)?;
        let (v, grad_theta) = weighted_log_misfit_gradient(&theta, &self.problem, self.coef())?;
        let jac = transform_jacobian(x, self.template.scalar_offset());
        let grad = grad_theta.iter().zip(jac).map(|(g, j)| -g * j).collect();
        Ok((-v, grad))
    }
}

/// Linear data map with Gaussian noise: `y = A x + e`, `e ~ N(0, noise_variance I)`.
#[derive(Clone, Debug)]
pub struct LinearGaussian<P: GaussianPrior> {
    pub map: DMatrix<f64>,
    pub data: DVector<f64>,
    pub noise_variance: f64,
    pub prior: P,
}

impl LinearGaussian<DensePrior> {
    /// Analytic posterior mean and covariance.
    pub fn posterior_moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let at = self.map.transpose();
        let h = &at * &self.map / self.noise_variance;
        let precision = self.prior.precision() + &h;
        let cov = precision
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?
            .inverse();
        let m0 = DVector::from_column_slice(self.prior.mean());
        let rhs = self.prior.precision() * &m0 + &at * &self.data / self.noise_variance;
        Ok((&cov * rhs, cov))
    }

    /// Generalized eigenvalues of the data-misfit Hessian against the prior precision, descending.
    pub fn generalized_spectrum(&self) -> Result<Vec<f64>> {
        let h = self.map.transpose() * &self.map / self.noise_variance;
        let l = self
            .prior
            .precision()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("prior precision".into()))?
            .l();
        let linv = l.clone().try_inverse().ok_or_else(|| Error::Internal("singular factor".into()))?;
        let reduced = &linv * h * linv.transpose();
        let mut ev: Vec<f64> = reduced.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        Ok(ev)
    }
}

impl<P: GaussianPrior> BayesianModel for LinearGaussian<P> {
    type Prior = P;

    fn prior(&self) -> &P {
        &self.prior
    }

    fn log_likelihood_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = &self.data - &self.map * DVector::from_column_slice(x);
        let v = -0.5 * r.norm_squared() / self.noise_variance;
        let g = self.map.transpose() * r / self.noise_variance;
        Ok((v, g.as_slice().to_vec()))
    }
}

/// Standard normal target in `dim` dimensions.
///
/// The prior is `N(0, prior_variance I)` and the likelihood supplies the
/// remaining precision `1 - 1 / prior_variance`, so the posterior is exactly
/// standard normal while samplers still start from the wider prior.
#[derive(Clone, Debug)]
pub struct IsotropicNormal {
    pub prior: DensePrior,
    likelihood_precision: f64,
}

impl IsotropicNormal {
    pub fn new(dim: usize, prior_variance: f64) -> Result<Self> {
        if !(prior_variance > 1.0) {
            return Err(Error::Config("prior variance must exceed the target variance 1".into()));
        }
        let prior = DensePrior::new(vec![0.0; dim], DMatrix::identity(dim, dim) / prior_variance)?;
        Ok(Self { prior, likelihood_precision: 1.0 - 1.0 / prior_variance })
    }
}

impl BayesianModel for IsotropicNormal {
    type Prior = DensePrior;

    fn prior(&self) -> &DensePrior {
        &self.prior
    }

    fn log_likelihood_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s = self.likelihood_precision;
        let v = -0.5 * s * x.iter().map(|v| v * v).sum::<f64>();
        Ok((v, x.iter().map(|v| -s * v).collect()))
    }
}
