//! Stein variational samplers.
//!
//! Plain SVGD moves particles along the kernelized Stein direction. The
//! projected variant restricts the motion to the span of the dominant
//! generalized eigenvectors of the gradient information matrix against the
//! prior precision, holding each particle's complement fixed, and rebuilds
//! that basis between rounds of inner updates.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, orthonormalize_in};
use crate::posterior::{BayesianModel, GaussianPrior};

pub const ENSEMBLE_HEADER: &str = "# ltc-ensemble v1";
pub const EIGEN_HEADER: &str = "outer_iter,index,lambda";

/// Step-size rule for the particle updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `base / (sqrt(sum of squared directions) + 1e-8)` per particle and coordinate.
    Adagrad { base: f64 },
    Constant { step: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Adagrad { base: 0.1 }
    }
}

impl StepSchedule {
    fn base(&self) -> f64 {
        match *self {
            StepSchedule::Adagrad { base } => base,
            StepSchedule::Constant { step } => step,
        }
    }

    /// Step for direction component `p`, updating the accumulator `acc`.
    fn step(&self, acc: &mut f64, p: f64) -> f64 {
        match *self {
            StepSchedule::Constant { step } => step,
            StepSchedule::Adagrad { base } => {
                *acc += p * p;
                base / (acc.sqrt() + 1e-8)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub particles_per_worker: usize,
    pub workers: usize,
    pub step: StepSchedule,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Inner loop stops when the mean coefficient change falls to this value.
    pub w_tol: f64,
    /// Outer loop stops when the mean particle change over a round falls to this value.
    pub x_tol: f64,
    pub truncation_tol: f64,
    pub min_rank: usize,
    pub max_rank: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            particles_per_worker: 125,
            workers: 8,
            step: StepSchedule::default(),
            inner_iterations: 10,
            outer_iterations: 10,
            w_tol: 1e-8,
            x_tol: 1e-8,
            truncation_tol: 0.1,
            min_rank: 1,
            max_rank: 50,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles_per_worker == 0 || self.workers == 0 {
            return Err(Error::Config("particle and worker counts must be at least 1".into()));
        }
        if self.inner_iterations == 0 || self.outer_iterations == 0 {
            return Err(Error::Config("iteration counts must be at least 1".into()));
        }
        if !(self.step.base() > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.max_rank == 0 || self.min_rank > self.max_rank {
            return Err(Error::Config("need 1 <= max_rank and min_rank <= max_rank".into()));
        }
        if !(self.truncation_tol >= 0.0 && self.w_tol >= 0.0 && self.x_tol >= 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_particles(&self) -> usize {
        self.particles_per_worker * self.workers
    }
}

/// Particles with their coordinates in the current basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub samples: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<f64>>,
    pub complements: Vec<Vec<f64>>,
    pub seed: u64,
    pub outer_iteration: usize,
}

impl Ensemble {
    pub fn new(samples: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let d = samples.first().map(Vec::len).unwrap_or(0);
        if samples.is_empty() || d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::Dimension("ensemble needs equally sized, nonempty particles".into()));
        }
        Ok(Self { samples, coefficients: Vec::new(), complements: Vec::new(), seed, outer_iteration: 0 })
    }

    /// `count` prior draws; particle `n` uses stream `n` of the seeded generator.
    pub fn from_prior<P: GaussianPrior>(prior: &P, count: usize, seed: u64) -> Result<Self> {
        let samples = (0..count)
            .map(|n| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(n as u64);
                prior.sample(&mut rng)
            })
            .collect();
        Self::new(samples, seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for s in &self.samples {
            for (a, b) in m.iter_mut().zip(s) {
                *a += b;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Per-coordinate sample standard deviation (divisor `N - 1`).
    pub fn std_dev(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim()];
        for s in &self.samples {
            for ((a, x), mu) in v.iter_mut().zip(s).zip(&m) {
                *a += (x - mu) * (x - mu);
            }
        }
        let n = (self.len().max(2) - 1) as f64;
        v.into_iter().map(|a| (a / n).sqrt()).collect()
    }

    /// Overwrite samples with `Psi w + x_perp`.
    pub fn reconstruct(&mut self, basis: &ProjectionBasis) {
        for ((s, w), c) in self.samples.iter_mut().zip(&self.coefficients).zip(&self.complements) {
            *s = basis.reconstruct(w, c);
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{ENSEMBLE_HEADER}")?;
        writeln!(
            f,
            "# dim {} particles {} seed {} outer_iteration {}",
            self.dim(),
            self.len(),
            self.seed,
            self.outer_iteration
        )?;
        for s in &self.samples {
            let line: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut lines = reader.lines();
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        if lines.next().transpose()?.as_deref() != Some(ENSEMBLE_HEADER) {
            return Err(bad("missing ensemble header"));
        }
        let meta = lines.next().transpose()?.ok_or_else(|| bad("missing metadata line"))?;
        let fields: Vec<&str> = meta.trim_start_matches('#').split_whitespace().collect();
        if fields.len() != 8 || fields[0] != "dim" || fields[2] != "particles" || fields[4] != "seed" || fields[6] != "outer_iteration" {
            return Err(bad("malformed metadata line"));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|_| bad("malformed metadata value"));
        let dim = parse(fields[1])? as usize;
        let count = parse(fields[3])? as usize;
        let seed = parse(fields[5])?;
        let outer = parse(fields[7])? as usize;
        let mut samples = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|_| bad("unparseable value"))?;
            if row.len() != dim {
                return Err(bad("row length differs from dim"));
            }
            samples.push(row);
        }
        if samples.len() != count {
            return Err(bad("particle count differs from header"));
        }
        let mut e = Self::new(samples, seed)?;
        e.outer_iteration = outer;
        Ok(e)
    }
}

/// Columns spanning the dominant generalized eigenspace, orthonormal in the
/// prior precision `P` (equivalently, Euclidean-orthonormal after prior
/// whitening), so coefficients and complements are independent under the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionBasis {
    pub psi: Vec<Vec<f64>>,
    /// `P psi` for every column; coefficients are `dual^T x`.
    pub dual: Vec<Vec<f64>>,
    /// Retained eigenvalues, descending (zero for padding directions).
    pub lambda: Vec<f64>,
    /// Leading eigenvalues, up to the rank cap, whether retained or not.
    pub spectrum: Vec<f64>,
    pub truncation_tol: f64,
}

impl ProjectionBasis {
    /// Basis with Euclidean-orthonormal columns (identity prior precision).
    pub fn orthonormal(psi: Vec<Vec<f64>>, lambda: Vec<f64>, spectrum: Vec<f64>, truncation_tol: f64) -> Self {
        Self { dual: psi.clone(), psi, lambda, spectrum, truncation_tol }
    }

    pub fn rank(&self) -> usize {
        self.psi.len()
    }

    pub fn dim(&self) -> usize {
        self.psi.first().map(Vec::len).unwrap_or(0)
    }

    /// `Psi^T P x`, the coordinates of the projection `Psi Psi^T P x`.
    pub fn coefficients(&self, x: &[f64]) -> Vec<f64> {
        self.dual.iter().map(|p| dot(p, x)).collect()
    }

    /// `Psi^T g`: a gradient in `x` pulled back to the coefficients.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        self.psi.iter().map(|p| dot(p, g)).collect()
    }

    /// `Psi w + c`.
    pub fn reconstruct(&self, w: &[f64], c: &[f64]) -> Vec<f64> {
        let mut x = c.to_vec();
        for (p, wi) in self.psi.iter().zip(w) {
            for (xi, pi) in x.iter_mut().zip(p) {
                *xi += wi * pi;
            }
        }
        x
    }

    /// Kernel metric `Lambda + I`.
    pub fn metric(&self) -> Vec<f64> {
        self.lambda.iter().map(|l| l + 1.0).collect()
    }
}

/// `exp(-|x - y|^2 / h)`.
pub fn kernel_full(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / bandwidth).exp()
}

/// `exp(-(w - v)^T (Lambda + I) (w - v) / h)`.
pub fn kernel_projected(w: &[f64], v: &[f64], lambda: &[f64], bandwidth: f64) -> f64 {
    let d2: f64 = w.iter().zip(v).zip(lambda).map(|((a, b), l)| (l + 1.0) * (a - b) * (a - b)).sum();
    (-d2 / bandwidth).exp()
}

fn weighted_sq_dist(x: &[f64], y: &[f64], metric: &[f64]) -> f64 {
    x.iter().zip(y).zip(metric).map(|((a, b), m)| m * (a - b) * (a - b)).sum()
}

/// `med^2 / log N`, `med` the median pairwise distance under the diagonal `metric`.
///
/// Falls back to 1 when fewer than two particles are present or all coincide.
pub fn median_bandwidth(points: &[Vec<f64>], metric: &[f64]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 1.0;
    }
    let mut d: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(weighted_sq_dist(&points[i], &points[j], metric).sqrt());
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    let h = med * med / (n as f64).ln();
    if h > 0.0 && h.is_finite() {
        h
    } else {
        1.0
    }
}

/// Stein direction at particle `m`:
/// `(1/N) sum_n [grad_n k(x_n, x_m) + grad_{x_n} k(x_n, x_m)]` for the metric kernel.
fn stein_direction_at(m: usize, points: &[Vec<f64>], grads: &[Vec<f64>], metric: &[f64], bandwidth: f64) -> Vec<f64> {
    let d = points[m].len();
    let mut phi = vec![0.0; d];
    for (xn, gn) in points.iter().zip(grads) {
        let k = (-weighted_sq_dist(xn, &points[m], metric) / bandwidth).exp();
        for i in 0..d {
            phi[i] += gn[i] * k - 2.0 / bandwidth * metric[i] * (xn[i] - points[m][i]) * k;
        }
    }
    let n = points.len() as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    phi
}

/// SVGD directions for every particle under the kernel with diagonal `metric`
/// (all ones gives the plain Gaussian kernel).
pub fn svgd_direction(points: &[Vec<f64>], grads: &[Vec<f64>], metric: &[f64], bandwidth: f64) -> Vec<Vec<f64>> {
    (0..points.len()).map(|m| stein_direction_at(m, points, grads, metric, bandwidth)).collect()
}

/// `(1/M) sum_m g_m g_m^T`.
pub fn gradient_info_matrix(grads: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = grads.first().map(Vec::len).ok_or_else(|| Error::Dimension("no gradients".into()))?;
    let mut h = DMatrix::zeros(d, d);
    for g in grads {
        if g.len() != d {
            return Err(Error::Dimension("gradient lengths differ".into()));
        }
        for j in 0..d {
            for i in 0..d {
                h[(i, j)] += g[i] * g[j];
            }
        }
    }
    Ok(h / grads.len() as f64)
}

fn sorted_eigen(m: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..eig.eigenvalues.len())
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

/// Generalized eigenpairs of `H psi = lambda P psi` (`P` the prior precision),
/// descending, with `psi = R^{-T} v` for eigenvectors `v` of `R^{-1} H R^{-T}`.
pub fn generalized_eigenpairs<P: GaussianPrior>(h: &DMatrix<f64>, prior: &P) -> Result<Vec<(f64, Vec<f64>)>> {
    let d = prior.dim();
    if h.nrows() != d || h.ncols() != d {
        return Err(Error::Dimension("information matrix does not match the prior".into()));
    }
    // B = R^{-1} H column by column, then R^{-1} B^T = R^{-1} H R^{-T}
    let mut b = h.clone();
    for mut col in b.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        prior.factor_solve(&mut v);
        col.copy_from_slice(&v);
    }
    let mut c = b.transpose();
    for mut col in c.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        prior.factor_solve(&mut v);
        col.copy_from_slice(&v);
    }
    Ok(sorted_eigen(c)
        .into_iter()
        .map(|(l, mut v)| {
            prior.factor_solve_transpose(&mut v);
            (l, v)
        })
        .collect())
}

/// Same pairs as [`generalized_eigenpairs`] for `H = (1/M) sum g g^T`, computed
/// through the smaller of the `M x M` Gram matrix and the `d x d` product.
pub fn generalized_eigenpairs_from_gradients<P: GaussianPrior>(
    grads: &[Vec<f64>],
    prior: &P,
) -> Result<Vec<(f64, Vec<f64>)>> {
    let d = prior.dim();
    let m = grads.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let scale = 1.0 / (m as f64).sqrt();
    let rows: Vec<Vec<f64>> = grads
        .iter()
        .map(|g| {
            let mut a = g.clone();
            if a.len() != d {
                return Err(Error::Dimension("gradient does not match the prior".into()));
            }
            prior.factor_solve(&mut a);
            a.iter_mut().for_each(|v| *v *= scale);
            Ok(a)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(f64, Vec<f64>)> = if m < d {
        let gram = DMatrix::from_fn(m, m, |i, j| dot(&rows[i], &rows[j]));
        sorted_eigen(gram)
            .into_iter()
            .filter(|(mu, _)| *mu > 0.0)
            .map(|(mu, u)| {
                let mut v = vec![0.0; d];
                for (ui, row) in u.iter().zip(&rows) {
                    for (vk, rk) in v.iter_mut().zip(row) {
                        *vk += ui * rk;
                    }
                }
                let s = mu.sqrt();
                v.iter_mut().for_each(|x| *x /= s);
                (mu, v)
            })
            .collect()
    } else {
        let ata = DMatrix::from_fn(d, d, |i, j| rows.iter().map(|r| r[i] * r[j]).sum());
        sorted_eigen(ata)
    };
    Ok(pairs
        .into_iter()
        .map(|(l, mut v)| {
            prior.factor_solve_transpose(&mut v);
            (l, v)
        })
        .collect())
}

/// Truncate descending eigenpairs and orthonormalize the retained vectors in
/// the prior precision.
///
/// Rank is the number of eigenvalues above `truncation_tol`, clamped to
/// `[min_rank, max_rank]`; missing directions are padded with coordinate axes.
pub fn truncate_basis<P: GaussianPrior>(
    pairs: Vec<(f64, Vec<f64>)>,
    prior: &P,
    truncation_tol: f64,
    min_rank: usize,
    max_rank: usize,
) -> ProjectionBasis {
    let dim = prior.dim();
    let max_rank = max_rank.min(dim);
    let mut spectrum: Vec<f64> = pairs.iter().take(max_rank).map(|p| p.0.max(0.0)).collect();
    spectrum.resize(max_rank, 0.0);
    let above = pairs.iter().take_while(|p| p.0 > truncation_tol).count();
    let rank = above.clamp(min_rank.min(max_rank), max_rank);
    let mut columns: Vec<Vec<f64>> = pairs.iter().take(rank).map(|p| p.1.clone()).collect();
    let mut lambda: Vec<f64> = pairs.iter().take(rank).map(|p| p.0.max(0.0)).collect();
    let apply = |v: &[f64]| prior.apply_precision(v);
    let (mut psi, mut dual) = orthonormalize_in(&columns, apply);
    let mut axis = 0;
    while psi.len() < rank && axis < dim {
        let mut e = vec![0.0; dim];
        e[axis] = 1.0;
        columns = psi.clone();
        columns.push(e);
        (psi, dual) = orthonormalize_in(&columns, apply);
        axis += 1;
    }
    lambda.truncate(psi.len());
    lambda.resize(psi.len(), 0.0);
    ProjectionBasis { psi, dual, lambda, spectrum, truncation_tol }
}

/// Basis from an assembled information matrix.
pub fn solve_projection_basis<P: GaussianPrior>(
    h: &DMatrix<f64>,
    prior: &P,
    truncation_tol: f64,
    min_rank: usize,
    max_rank: usize,
) -> Result<ProjectionBasis> {
    let pairs = generalized_eigenpairs(h, prior)?;
    Ok(truncate_basis(pairs, prior, truncation_tol, min_rank, max_rank))
}

/// `w_n = Psi^T P x_n`, `x_perp_n = x_n - Psi w_n`.
pub fn project(ensemble: &mut Ensemble, basis: &ProjectionBasis) {
    ensemble.coefficients = ensemble.samples.iter().map(|x| basis.coefficients(x)).collect();
    ensemble.complements = ensemble
        .samples
        .iter()
        .zip(&ensemble.coefficients)
        .map(|(x, w)| {
            let p = basis.reconstruct(w, &vec![0.0; x.len()]);
            x.iter().zip(p).map(|(a, b)| a - b).collect()
        })
        .collect();
}

/// Log posterior at `Psi w + c` and its gradient in `w`.
pub fn projected_log_density_gradient<M: BayesianModel>(
    w: &[f64],
    complement: &[f64],
    basis: &ProjectionBasis,
    model: &M,
) -> Result<(f64, Vec<f64>)> {
    let x = basis.reconstruct(w, complement);
    let (v, g) = model.log_posterior_and_gradient(&x)?;
    Ok((v, basis.pullback(&g)))
}

/// Gradients at one particle; a failed likelihood leaves only the prior term.
#[derive(Clone, Debug)]
struct Evaluation {
    posterior: Vec<f64>,
    likelihood: Vec<f64>,
    degenerate: bool,
}

fn evaluate<M: BayesianModel>(model: &M, x: &[f64]) -> Result<Evaluation> {
    let (_, prior_grad) = model.prior().log_density_and_gradient(x);
    let lik = match model.log_likelihood_and_gradient(x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => Some(g),
        Ok(_) => None,
        Err(e) if e.is_numerical() => {
            log::debug!("particle evaluation failed: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(match lik {
        Some(g) => Evaluation {
            posterior: prior_grad.iter().zip(&g).map(|(a, b)| a + b).collect(),
            likelihood: g,
            degenerate: false,
        },
        None => Evaluation { likelihood: vec![0.0; x.len()], posterior: prior_grad, degenerate: true },
    })
}

/// Map `f` over `0..n` on `workers` scoped threads, each taking a contiguous block.
/// The output order does not depend on `workers`.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let f = &f;
                s.spawn(move || (k * chunk..((k + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sampler worker panicked")).collect()
    })
}

fn evaluate_all<M: BayesianModel>(model: &M, samples: &[Vec<f64>], workers: usize) -> Result<(Vec<Evaluation>, usize)> {
    let evals: Vec<Evaluation> = par_map(samples.len(), workers, |n| evaluate(model, &samples[n]))
        .into_iter()
        .collect::<Result<_>>()?;
    let degenerate = evals.iter().filter(|e| e.degenerate).count();
    if 2 * degenerate > samples.len() {
        return Err(Error::Degenerate(format!("{degenerate} of {} particles failed to evaluate", samples.len())));
    }
    Ok((evals, degenerate))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InnerReport {
    pub iterations: usize,
    /// Mean coefficient change of the last step.
    pub last_change: f64,
    /// Degenerate particle count summed over iterations.
    pub degenerate: usize,
}

/// Inner pSVGD loop on the coefficients; complements stay fixed and the
/// samples are reconstructed on exit.
pub fn psvgd_inner<M: BayesianModel>(
    ensemble: &mut Ensemble,
    basis: &ProjectionBasis,
    model: &M,
    config: &SamplerConfig,
) -> Result<InnerReport> {
    let n = ensemble.len();
    let r = basis.rank();
    if ensemble.coefficients.len() != n || ensemble.complements.len() != n {
        return Err(Error::Internal("ensemble is not projected onto the basis".into()));
    }
    let metric = basis.metric();
    let mut accum = vec![vec![0.0; r]; n];
    let mut report = InnerReport::default();
    for _ in 0..config.inner_iterations {
        let xs: Vec<Vec<f64>> =
            ensemble.coefficients.iter().zip(&ensemble.complements).map(|(w, c)| basis.reconstruct(w, c)).collect();
        let (evals, degenerate) = evaluate_all(model, &xs, config.workers)?;
        report.degenerate += degenerate;
        let grads: Vec<Vec<f64>> = evals.iter().map(|e| basis.pullback(&e.posterior)).collect();
        let h = median_bandwidth(&ensemble.coefficients, &metric);
        let ws = &ensemble.coefficients;
        let phi = par_map(n, config.workers, |m| stein_direction_at(m, ws, &grads, &metric, h));
        let mut change = 0.0;
        for ((w, p), acc) in ensemble.coefficients.iter_mut().zip(&phi).zip(&mut accum) {
            let mut sq = 0.0;
            for i in 0..r {
                let dw = config.step.step(&mut acc[i], p[i]) * p[i];
                w[i] += dw;
                sq += dw * dw;
            }
            change += sq.sqrt();
        }
        report.iterations += 1;
        report.last_change = change / n as f64;
        if report.last_change <= config.w_tol {
            break;
        }
    }
    ensemble.reconstruct(basis);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub rank: usize,
    pub spectrum: Vec<f64>,
    pub inner: InnerReport,
    /// Mean particle displacement over the round.
    pub change: f64,
}

#[derive(Clone, Debug)]
pub struct SamplerOutcome {
    pub ensemble: Ensemble,
    pub history: Vec<OuterRecord>,
    pub basis: ProjectionBasis,
}

/// Basis from the likelihood gradients at the current particles.
pub fn adaptive_basis<M: BayesianModel>(
    ensemble: &Ensemble,
    model: &M,
    config: &SamplerConfig,
) -> Result<ProjectionBasis> {
    let (evals, _) = evaluate_all(model, &ensemble.samples, config.workers)?;
    let grads: Vec<Vec<f64>> = evals.into_iter().filter(|e| !e.degenerate).map(|e| e.likelihood).collect();
    let pairs = generalized_eigenpairs_from_gradients(&grads, model.prior())?;
    Ok(truncate_basis(pairs, model.prior(), config.truncation_tol, config.min_rank, config.max_rank))
}

/// Adaptive pSVGD: alternate basis rebuilds with inner coefficient updates.
pub fn psvgd_adaptive<M: BayesianModel>(
    mut ensemble: Ensemble,
    model: &M,
    config: &SamplerConfig,
) -> Result<SamplerOutcome> {
    config.validate()?;
    if ensemble.dim() != model.dim() {
        return Err(Error::Dimension("ensemble and model dimensions differ".into()));
    }
    let mut history = Vec::new();
    let mut basis = None;
    for outer in 0..config.outer_iterations {
        let b = adaptive_basis(&ensemble, model, config)?;
        let before = ensemble.samples.clone();
        project(&mut ensemble, &b);
        let inner = psvgd_inner(&mut ensemble, &b, model, config)?;
        ensemble.outer_iteration = outer + 1;
        let change = before.iter().zip(&ensemble.samples).map(|(a, b)| {
            let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            norm(&d)
        });
        let change = change.sum::<f64>() / ensemble.len() as f64;
        log::info!(
            "outer {}: rank {}, lambda_1 {:.4e}, inner steps {}, mean move {:.3e}, degenerate {}",
            outer,
            b.rank(),
            b.spectrum.first().copied().unwrap_or(0.0),
            inner.iterations,
            change,
            inner.degenerate
        );
        history.push(OuterRecord { outer_iter: outer, rank: b.rank(), spectrum: b.spectrum.clone(), inner, change });
        basis = Some(b);
        if change <= config.x_tol {
            break;
        }
    }
    Ok(SamplerOutcome { ensemble, history, basis: basis.expect("at least one outer iteration") })
}

/// Plain SVGD in the full space with the Gaussian kernel.
pub fn svgd<M: BayesianModel>(mut ensemble: Ensemble, model: &M, config: &SamplerConfig, iterations: usize) -> Result<Ensemble> {
    let n = ensemble.len();
    let d = ensemble.dim();
    let metric = vec![1.0; d];
    let mut accum = vec![vec![0.0; d]; n];
    for _ in 0..iterations {
        let (evals, _) = evaluate_all(model, &ensemble.samples, config.workers)?;
        let grads: Vec<Vec<f64>> = evals.into_iter().map(|e| e.posterior).collect();
        let h = median_bandwidth(&ensemble.samples, &metric);
        let xs = &ensemble.samples;
        let phi = par_map(n, config.workers, |m| stein_direction_at(m, xs, &grads, &metric, h));
        for ((x, p), acc) in ensemble.samples.iter_mut().zip(&phi).zip(&mut accum) {
            for i in 0..d {
                x[i] += config.step.step(&mut acc[i], p[i]) * p[i];
            }
        }
    }
    Ok(ensemble)
}

/// `outer_iter,index,lambda`, one row per recorded eigenvalue.
pub fn write_eigen_history(path: &Path, history: &[OuterRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EIGEN_HEADER.split(','))?;
    for rec in history {
        for (i, l) in rec.spectrum.iter().enumerate() {
            w.write_record(&[rec.outer_iter.to_string(), i.to_string(), l.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
