//! Gaussian-process regression with a Matern-5/2 kernel.
//!
//! One surrogate per objective. Targets are standardized to zero mean and
//! unit variance before fitting so hyperparameter bounds are scale-free
//! across objectives. Hyperparameters (signal variance, per-dimension
//! lengthscales, noise variance) are chosen by maximizing the log marginal
//! likelihood with a multi-start, gradient-free coordinate search in
//! log-space. Fits are deterministic under a fixed seed.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::scalar::{real, to_f64, Real};

/// Matern-5/2 kernel hyperparameters with per-dimension lengthscales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub signal_var: T,
    pub lengthscales: Vec<T>,
    pub noise_var: T,
}

/// Hyperparameter bounds and search configuration for [`fit`].
#[derive(Debug, Clone)]
pub struct GpConfig {
    /// Number of local searches started from log-uniform draws.
    pub restarts: usize,
    /// Seed for the initial draws.
    pub seed: u64,
    pub lengthscale_bounds: (f64, f64),
    pub signal_var_bounds: (f64, f64),
    pub noise_var_bounds: (f64, f64),
    /// Coordinate-descent sweeps per restart.
    pub sweeps: usize,
}

impl Default for GpConfig {
    fn default() -> GpConfig {
        GpConfig {
            restarts: 8,
            seed: 0,
            lengthscale_bounds: (1e-3, 1e3),
            signal_var_bounds: (1e-6, 1e3),
            noise_var_bounds: (1e-8, 1.0),
            sweeps: 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum GpError {
    #[error("need at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("training point {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("non-finite training value at index {0}")]
    NonFiniteTarget(usize),
    #[error("training input {0} outside the unit cube")]
    InputOutOfRange(usize),
    #[error(
        "Cholesky factorization failed after jitter escalation to {max_jitter}: \
         training data is degenerate (e.g. duplicate inputs with conflicting targets)"
    )]
    CholeskyFailure { max_jitter: f64 },
}

/// Matern-5/2 covariance between two points under the given hyperparameters:
/// `signal_var * (1 + sqrt(5) r + 5 r^2 / 3) * exp(-sqrt(5) r)` with
/// `r^2 = sum_i ((x1_i - x2_i) / l_i)^2`.
pub fn matern52<T: Real>(x1: &[T], x2: &[T], params: &KernelParams<T>) -> T {
    debug_assert_eq!(x1.len(), x2.len());
    debug_assert_eq!(x1.len(), params.lengthscales.len());
    let mut r2 = T::zero();
    for i in 0..x1.len() {
        let d = (x1[i] - x2[i]) / params.lengthscales[i];
        r2 += d * d;
    }
    params.signal_var * matern52_profile(r2)
}

/// The kernel's radial profile as a function of the squared scaled distance.
#[inline]
fn matern52_profile<T: Real>(r2: T) -> T {
    let sqrt5: T = real(5.0f64.sqrt());
    let five_thirds: T = real(5.0 / 3.0);
    let r = r2.sqrt();
    (T::one() + sqrt5 * r + five_thirds * r2) * (-sqrt5 * r).exp()
}

/// A fitted Gaussian-process surrogate over the unit cube.
#[derive(Debug, Clone)]
pub struct GpModel<T> {
    params: KernelParams<T>,
    train_x: Vec<Vec<T>>,
    train_y_std: Vec<T>,
    y_mean: T,
    y_std: T,
    chol: Vec<T>,
    alpha: Vec<T>,
    jitter: T,
}

struct Factorization<T> {
    chol: Vec<T>,
    alpha: Vec<T>,
    jitter: T,
}

/// Jitter ladder tried when the Gram matrix is numerically indefinite.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-8, 1e-6, 1e-4, 1e-2];

fn factorize<T: Real>(
    xs: &[Vec<T>],
    ys_std: &[T],
    params: &KernelParams<T>,
) -> Result<Factorization<T>, GpError> {
    let n = xs.len();
    let mut gram = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = matern52(&xs[i], &xs[j], params);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    for ladder in JITTER_LADDER {
        let jitter = real::<T>(ladder);
        let mut k = gram.clone();
        for i in 0..n {
            k[i * n + i] += params.noise_var + jitter;
        }
        if let Some(chol) = linalg::cholesky(&k, n) {
            let alpha = linalg::cholesky_solve(&chol, n, ys_std);
            return Ok(Factorization { chol, alpha, jitter });
        }
    }
    Err(GpError::CholeskyFailure {
        max_jitter: *JITTER_LADDER.last().unwrap(),
    })
}

impl<T: Real> GpModel<T> {
    /// Builds a model with fixed hyperparameters (no search). Standardizes
    /// the targets, factorizes the Gram matrix with jitter escalation and
    /// solves for the weight vector.
    pub fn from_params(
        xs: Vec<Vec<T>>,
        ys: Vec<T>,
        params: KernelParams<T>,
    ) -> Result<GpModel<T>, GpError> {
        let dim = params.lengthscales.len();
        for (i, x) in xs.iter().enumerate() {
            if x.len() != dim {
                return Err(GpError::DimensionMismatch {
                    index: i,
                    found: x.len(),
                    expected: dim,
                });
            }
            if x.iter().any(|c| !c.is_finite()) {
                return Err(GpError::InputOutOfRange(i));
            }
        }
        for (i, y) in ys.iter().enumerate() {
            if !y.is_finite() {
                return Err(GpError::NonFiniteTarget(i));
            }
        }
        let (y_mean, y_std) = standardization_constants(&ys);
        let ys_std: Vec<T> = ys.iter().map(|y| (*y - y_mean) / y_std).collect();
        let f = factorize(&xs, &ys_std, &params)?;
        Ok(GpModel {
            params,
            train_x: xs,
            train_y_std: ys_std,
            y_mean,
            y_std,
            chol: f.chol,
            alpha: f.alpha,
            jitter: f.jitter,
        })
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn train_len(&self) -> usize {
        self.train_x.len()
    }

    pub fn standardization(&self) -> (T, T) {
        (self.y_mean, self.y_std)
    }

    /// Achieved diagonal jitter (zero unless escalation was needed).
    pub fn jitter(&self) -> T {
        self.jitter
    }

    /// Log marginal likelihood of the standardized targets:
    /// `-1/2 y^T alpha - sum log diag(L) - n/2 log(2 pi)`.
    pub fn log_marginal_likelihood(&self) -> T {
        let n = self.train_x.len();
        let fit: T = self
            .train_y_std
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| *y * *a)
            .sum();
        let logdet: T = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        let half: T = real(0.5);
        let tau: T = real((2.0 * std::f64::consts::PI).ln());
        -half * fit - logdet - half * real::<T>(n as f64) * tau
    }

    /// The data-fit quadratic form `y^T alpha` on standardized targets.
    pub fn fit_term(&self) -> T {
        self.train_y_std
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| *y * *a)
            .sum()
    }

    /// Predictive mean and variance at a point, in original target units.
    /// The variance is the latent-function variance (no observation noise),
    /// clamped at zero from below.
    pub fn posterior(&self, x: &[T]) -> (T, T) {
        let n = self.train_x.len();
        let k: Vec<T> = (0..n)
            .map(|i| matern52(&self.train_x[i], x, &self.params))
            .collect();
        let mean_std: T = k.iter().zip(self.alpha.iter()).map(|(a, b)| *a * *b).sum();
        let v = linalg::solve_lower(&self.chol, n, &k);
        let explained: T = v.iter().map(|c| *c * *c).sum();
        let var_std = self.params.signal_var - explained;
        let clamp_tol: T = real(-1e-10);
        let var_std = if var_std < clamp_tol {
            T::zero()
        } else {
            var_std.max(T::zero())
        };
        let mean = self.y_mean + self.y_std * mean_std;
        let var = self.y_std * self.y_std * var_std;
        (mean, var)
    }
}

fn standardization_constants<T: Real>(ys: &[T]) -> (T, T) {
    let n = real::<T>(ys.len() as f64);
    let mean = ys.iter().copied().sum::<T>() / n;
    let var = ys.iter().map(|y| (*y - mean) * (*y - mean)).sum::<T>() / n;
    let std = var.sqrt();
    // Constant targets: keep the scale at one so the model degenerates to
    // the mean instead of dividing by zero.
    let floor: T = real(1e-12);
    (mean, if std < floor { T::one() } else { std })
}

fn log_uniform(rng_value: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = bounds;
    (lo.ln() + rng_value * (hi.ln() - lo.ln())).exp()
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    use rand_core::RngCore;
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

/// Precomputed per-pair squared coordinate differences, pair-major so the
/// inner lengthscale loop is contiguous. Pairs cover the lower triangle
/// including the diagonal.
struct FitData<T> {
    n: usize,
    dim: usize,
    pair_sq: Vec<T>,
    ys_std: Vec<T>,
}

impl<T: Real> FitData<T> {
    fn new(xs: &[Vec<T>], ys_std: &[T]) -> FitData<T> {
        let n = xs.len();
        let dim = xs[0].len();
        let pairs = n * (n + 1) / 2;
        let mut pair_sq = vec![T::zero(); pairs * dim];
        let mut t = 0usize;
        for i in 0..n {
            for j in 0..=i {
                for d in 0..dim {
                    let diff = xs[i][d] - xs[j][d];
                    pair_sq[t * dim + d] = diff * diff;
                }
                t += 1;
            }
        }
        FitData {
            n,
            dim,
            pair_sq,
            ys_std: ys_std.to_vec(),
        }
    }

    /// Log marginal likelihood of `theta = [signal_var, ls.., noise_var]`,
    /// `-inf` when the factorization fails even after jitter escalation.
    fn lml(&self, theta: &[f64], scratch: &mut Vec<T>) -> f64 {
        let n = self.n;
        let dim = self.dim;
        let signal_var = real::<T>(theta[0]);
        let noise_var = real::<T>(theta[dim + 1]);
        let weights: Vec<T> = (0..dim)
            .map(|d| T::one() / real::<T>(theta[1 + d] * theta[1 + d]))
            .collect();
        for ladder in JITTER_LADDER {
            scratch.clear();
            scratch.resize(n * n, T::zero());
            let diag_add = noise_var + real::<T>(ladder);
            let mut t = 0usize;
            for i in 0..n {
                for j in 0..=i {
                    let sq = &self.pair_sq[t * dim..(t + 1) * dim];
                    let mut r2 = T::zero();
                    for d in 0..dim {
                        r2 += weights[d] * sq[d];
                    }
                    let mut k = signal_var * matern52_profile(r2);
                    if i == j {
                        k += diag_add;
                    }
                    scratch[i * n + j] = k;
                    t += 1;
                }
            }
            if !crate::linalg::cholesky_in_place(scratch, n) {
                continue;
            }
            let v = crate::linalg::solve_lower(scratch, n, &self.ys_std);
            let fit: T = v.iter().map(|x| *x * *x).sum();
            let logdet: f64 = (0..n).map(|i| to_f64(scratch[i * n + i]).ln()).sum();
            return -0.5 * to_f64(fit)
                - logdet
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        }
        f64::NEG_INFINITY
    }
}

/// Greedy coordinate descent in log-space: for each hyperparameter keep
/// multiplying (or dividing) by the sweep's step while the likelihood
/// improves.
fn coordinate_descent<T: Real>(
    data: &FitData<T>,
    start: Vec<f64>,
    start_value: f64,
    config: &GpConfig,
) -> (Vec<f64>, f64) {
    let dim = data.dim;
    let bounds = |i: usize| -> (f64, f64) {
        if i == 0 {
            config.signal_var_bounds
        } else if i <= dim {
            config.lengthscale_bounds
        } else {
            config.noise_var_bounds
        }
    };
    let mut scratch: Vec<T> = Vec::new();
    let mut theta = start;
    let mut best = start_value;
    let mut step = 4.0f64;
    // Move set: every hyperparameter individually, plus all lengthscales
    // jointly (they are strongly coupled on smooth targets and stall when
    // walked one at a time).
    let moves: Vec<Vec<usize>> = std::iter::once((1..=dim).collect::<Vec<_>>())
        .chain((0..theta.len()).map(|i| vec![i]))
        .collect();
    for _ in 0..config.sweeps {
        for indices in &moves {
            for direction in [step, 1.0 / step] {
                let mut moved = false;
                // Walk while improving, capped to stay within bounds.
                for _ in 0..16 {
                    let mut trial = theta.clone();
                    let mut changed = false;
                    for &i in indices {
                        let candidate = (trial[i] * direction).clamp(bounds(i).0, bounds(i).1);
                        changed |= candidate != trial[i];
                        trial[i] = candidate;
                    }
                    if !changed {
                        break;
                    }
                    let value = data.lml(&trial, &mut scratch);
                    if value > best {
                        best = value;
                        theta = trial;
                        moved = true;
                    } else {
                        break;
                    }
                }
                // After a successful walk the opposite direction re-tests a
                // point that already lost; skip it.
                if moved {
                    break;
                }
            }
        }
        step = step.sqrt();
    }
    (theta, best)
}

/// Local searches launched per fit: every restart's likelihood is screened,
/// the most promising starts get the full descent.
const REFINED_STARTS: usize = 3;

/// Fits a surrogate to `(xs, ys)` by maximizing the log marginal likelihood
/// over the kernel hyperparameters. `xs` rows live in the unit cube.
pub fn fit<T: Real>(
    xs: Vec<Vec<T>>,
    ys: Vec<T>,
    config: &GpConfig,
) -> Result<GpModel<T>, GpError> {
    let n = xs.len();
    if n < 2 {
        return Err(GpError::TooFewPoints(n));
    }
    let dim = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != dim {
            return Err(GpError::DimensionMismatch {
                index: i,
                found: x.len(),
                expected: dim,
            });
        }
        if x.iter().any(|c| !c.is_finite() || *c < T::zero() || *c > T::one()) {
            return Err(GpError::InputOutOfRange(i));
        }
    }
    for (i, y) in ys.iter().enumerate() {
        if !y.is_finite() {
            return Err(GpError::NonFiniteTarget(i));
        }
    }
    let (y_mean, y_std) = standardization_constants(&ys);
    let ys_std: Vec<T> = ys.iter().map(|y| (*y - y_mean) / y_std).collect();

    // Starting points: one fixed default plus log-uniform draws.
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(config.restarts + 1);
    let mut default_start = vec![1.0f64];
    default_start.extend(std::iter::repeat_n(0.5, dim));
    default_start.push(1e-4);
    starts.push(default_start);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        let mut theta = vec![log_uniform(unit_f64(&mut rng), config.signal_var_bounds)];
        for _ in 0..dim {
            theta.push(log_uniform(unit_f64(&mut rng), config.lengthscale_bounds));
        }
        theta.push(log_uniform(unit_f64(&mut rng), config.noise_var_bounds));
        starts.push(theta);
    }

    let data = FitData::new(&xs, &ys_std);
    // Screen every restart, then descend from the most promising ones. The
    // fixed default start is always refined; screening order (hence
    // determinism) is fixed by the start index.
    let mut screened: Vec<(usize, Vec<f64>, f64)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(idx, start)| {
            let mut scratch: Vec<T> = Vec::new();
            let value = data.lml(&start, &mut scratch);
            (idx, start, value)
        })
        .collect();
    screened.sort_by(|a, b| {
        (a.0 != 0)
            .cmp(&(b.0 != 0))
            .then(b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.0.cmp(&b.0))
    });
    screened.truncate(REFINED_STARTS.max(1));
    let results: Vec<(Vec<f64>, f64)> = screened
        .into_par_iter()
        .map(|(_, start, value)| coordinate_descent(&data, start, value, config))
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (theta, value) in results {
        let better = match &best {
            None => value > f64::NEG_INFINITY,
            Some((_, b)) => value > *b,
        };
        if better {
            best = Some((theta, value));
        }
    }
    let (theta, _) = best.ok_or(GpError::CholeskyFailure {
        max_jitter: *JITTER_LADDER.last().unwrap(),
    })?;
    let params = KernelParams {
        signal_var: real::<T>(theta[0]),
        lengthscales: theta[1..=dim].iter().map(|v| real::<T>(*v)).collect(),
        noise_var: real::<T>(theta[dim + 1]),
    };
    GpModel::from_params(xs, ys, params)
}
