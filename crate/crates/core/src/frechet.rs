//! Frechet distance between Gaussian feature statistics.
//!
//! The fidelity objective is a Frechet distance between the feature
//! statistics of a candidate model's outputs and those of the teacher on
//! identical prompt-seed pairs. Statistics arrive as (mean, covariance)
//! pairs; feature extraction itself happens outside this crate. The matrix
//! square root uses the symmetrized form `(A^1/2 B A^1/2)^1/2`, which keeps
//! every intermediate symmetric PSD.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::scalar::{real, Real};

/// Symmetry tolerance applied when constructing statistics.
const SYMMETRY_TOL: f64 = 1e-8;
/// Eigenvalues above this (negative) threshold are treated as roundoff and
/// clamped to zero; anything below is invalid input.
const EIGENVALUE_TOL: f64 = -1e-8;
/// Distances in `[-1e-6, 0)` are roundoff and clamp to zero; below that the
/// computation signals numerical breakdown.
const DISTANCE_TOL: f64 = -1e-6;

/// Gaussian summary of a feature distribution: mean vector, covariance
/// matrix (row-major) and the sample count it was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats<T> {
    mean: Vec<T>,
    cov: Vec<T>,
    n_samples: usize,
}

#[derive(Debug, Error)]
pub enum FrechetError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} contains a non-finite component")]
    NonFiniteSample { index: usize },
    #[error("covariance asymmetry {asymmetry} exceeds tolerance {SYMMETRY_TOL}")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix eigenvalue {0} below tolerance {EIGENVALUE_TOL}: not PSD")]
    NegativeEigenvalue(f64),
    #[error("distance {0} below tolerance {DISTANCE_TOL}: numerical breakdown")]
    NegativeDistance(f64),
    #[error("stats file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("stats file declares dim {dim} but carries {found} {field} values")]
    BadFileShape {
        dim: usize,
        found: usize,
        field: &'static str,
    },
}

impl<T: Real> GaussianStats<T> {
    /// Builds statistics from raw moments. The covariance must be symmetric
    /// within `1e-8`; it is symmetrized exactly on construction.
    pub fn from_moments(
        mean: Vec<T>,
        mut cov: Vec<T>,
        n_samples: usize,
    ) -> Result<GaussianStats<T>, FrechetError> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(FrechetError::DimensionMismatch(d * d, cov.len()));
        }
        let asym = linalg::asymmetry(&cov, d);
        if asym.to_f64().unwrap_or(f64::INFINITY) > SYMMETRY_TOL {
            return Err(FrechetError::NotSymmetric {
                asymmetry: asym.to_f64().unwrap_or(f64::INFINITY),
            });
        }
        linalg::symmetrize(&mut cov, d);
        Ok(GaussianStats {
            mean,
            cov,
            n_samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn cov(&self) -> &[T] {
        &self.cov
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }
}

/// Single-pass mean/covariance accumulator (Welford update extended to the
/// co-moment matrix), numerically stable for long streams.
#[derive(Debug, Clone)]
pub struct StatsAccumulator<T> {
    dim: usize,
    count: usize,
    mean: Vec<T>,
    comoment: Vec<T>,
}

impl<T: Real> StatsAccumulator<T> {
    pub fn new(dim: usize) -> StatsAccumulator<T> {
        StatsAccumulator {
            dim,
            count: 0,
            mean: vec![T::zero(); dim],
            comoment: vec![T::zero(); dim * dim],
        }
    }

    pub fn push(&mut self, sample: &[T]) -> Result<(), FrechetError> {
        if sample.len() != self.dim {
            return Err(FrechetError::DimensionMismatch(self.dim, sample.len()));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(FrechetError::NonFiniteSample { index: self.count });
        }
        self.count += 1;
        let n = real::<T>(self.count as f64);
        let delta: Vec<T> = sample
            .iter()
            .zip(self.mean.iter())
            .map(|(x, m)| *x - *m)
            .collect();
        for (m, d) in self.mean.iter_mut().zip(delta.iter()) {
            *m += *d / n;
        }
        let delta2: Vec<T> = sample
            .iter()
            .zip(self.mean.iter())
            .map(|(x, m)| *x - *m)
            .collect();
        for (i, di) in delta.iter().enumerate() {
            for (j, dj) in delta2.iter().enumerate() {
                self.comoment[i * self.dim + j] += *di * *dj;
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Finishes the pass: unbiased covariance with divisor `n - 1`.
    pub fn finalize(self) -> Result<GaussianStats<T>, FrechetError> {
        if self.count < 2 {
            return Err(FrechetError::TooFewSamples(self.count));
        }
        let divisor = real::<T>((self.count - 1) as f64);
        let cov: Vec<T> = self.comoment.iter().map(|m| *m / divisor).collect();
        GaussianStats::from_moments(self.mean, cov, self.count)
    }
}

/// Mean and unbiased covariance of a stream of `d`-vectors.
pub fn accumulate_stats<T, I, S>(samples: I) -> Result<GaussianStats<T>, FrechetError>
where
    T: Real,
    I: IntoIterator<Item = S>,
    S: AsRef<[T]>,
{
    let mut iter = samples.into_iter();
    let first = match iter.next() {
        Some(s) => s,
        None => return Err(FrechetError::TooFewSamples(0)),
    };
    let mut acc = StatsAccumulator::new(first.as_ref().len());
    acc.push(first.as_ref())?;
    for s in iter {
        acc.push(s.as_ref())?;
    }
    acc.finalize()
}

/// Symmetric PSD square root via eigendecomposition: `S` with `S S = m`.
/// Eigenvalues in `[-1e-8, 0)` clamp to zero; smaller ones are an error.
pub fn matrix_sqrt_psd<T: Real>(m: &[T], dim: usize) -> Result<Vec<T>, FrechetError> {
    assert_eq!(m.len(), dim * dim, "matrix size mismatch");
    let asym = linalg::asymmetry(m, dim);
    if asym.to_f64().unwrap_or(f64::INFINITY) > SYMMETRY_TOL {
        return Err(FrechetError::NotSymmetric {
            asymmetry: asym.to_f64().unwrap_or(f64::INFINITY),
        });
    }
    let mut sym = m.to_vec();
    linalg::symmetrize(&mut sym, dim);
    let (eig, v) = linalg::jacobi_eigh(&sym, dim);
    let tol = real::<T>(EIGENVALUE_TOL);
    let mut sqrt_eig = Vec::with_capacity(dim);
    for lambda in &eig {
        if *lambda < tol {
            return Err(FrechetError::NegativeEigenvalue(
                lambda.to_f64().unwrap_or(f64::NEG_INFINITY),
            ));
        }
        sqrt_eig.push(lambda.max(T::zero()).sqrt());
    }
    // v * diag(sqrt_eig) * v^T
    let mut out = vec![T::zero(); dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = T::zero();
            for k in 0..dim {
                s += v[i * dim + k] * sqrt_eig[k] * v[j * dim + k];
            }
            out[i * dim + j] = s;
            out[j * dim + i] = s;
        }
    }
    Ok(out)
}

/// Squared Frechet distance between two Gaussians:
/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
/// Tiny negative results (roundoff) clamp to zero.
pub fn frechet_distance<T: Real>(
    a: &GaussianStats<T>,
    b: &GaussianStats<T>,
) -> Result<T, FrechetError> {
    let d = a.dim();
    if b.dim() != d {
        return Err(FrechetError::DimensionMismatch(d, b.dim()));
    }
    let mean_term: T = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum();
    let sqrt_a = matrix_sqrt_psd(&a.cov, d)?;
    // inner = sqrt_a * cov_b * sqrt_a, symmetrized against roundoff.
    let tmp = linalg::matmul(&sqrt_a, &b.cov, d);
    let mut inner = linalg::matmul(&tmp, &sqrt_a, d);
    linalg::symmetrize(&mut inner, d);
    let cross = matrix_sqrt_psd(&inner, d)?;
    let mut trace = T::zero();
    for i in 0..d {
        trace += a.cov[i * d + i] + b.cov[i * d + i] - real::<T>(2.0) * cross[i * d + i];
    }
    let dist = mean_term + trace;
    if dist < real::<T>(DISTANCE_TOL) {
        return Err(FrechetError::NegativeDistance(
            dist.to_f64().unwrap_or(f64::NEG_INFINITY),
        ));
    }
    Ok(dist.max(T::zero()))
}

/// Teacher-aligned Frechet distance: [`frechet_distance`] with the candidate
/// model in the first slot and the teacher in the second. Provenance (which
/// prompt set, which extractor) travels with the stats files, not the math.
pub fn tafid<T: Real>(
    student: &GaussianStats<T>,
    teacher: &GaussianStats<T>,
) -> Result<T, FrechetError> {
    frechet_distance(student, teacher)
}

/// On-disk stats container: JSON with the raw moments (covariance row-major)
/// and opaque provenance strings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StatsFile {
    pub dim: usize,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    #[serde(default)]
    pub feature_extractor: String,
    #[serde(default)]
    pub prompt_set: String,
    #[serde(default)]
    pub seed_set: String,
}

impl StatsFile {
    pub fn from_stats(
        stats: &GaussianStats<f64>,
        feature_extractor: &str,
        prompt_set: &str,
        seed_set: &str,
    ) -> StatsFile {
        StatsFile {
            dim: stats.dim(),
            n_samples: stats.n_samples(),
            mean: stats.mean().to_vec(),
            cov: stats.cov().to_vec(),
            feature_extractor: feature_extractor.to_owned(),
            prompt_set: prompt_set.to_owned(),
            seed_set: seed_set.to_owned(),
        }
    }

    pub fn parse(document: &str) -> Result<StatsFile, FrechetError> {
        let file: StatsFile = serde_json::from_str(document)?;
        if file.mean.len() != file.dim {
            return Err(FrechetError::BadFileShape {
                dim: file.dim,
                found: file.mean.len(),
                field: "mean",
            });
        }
        if file.cov.len() != file.dim * file.dim {
            return Err(FrechetError::BadFileShape {
                dim: file.dim,
                found: file.cov.len(),
                field: "cov",
            });
        }
        Ok(file)
    }

    pub fn to_stats(&self) -> Result<GaussianStats<f64>, FrechetError> {
        GaussianStats::from_moments(self.mean.clone(), self.cov.clone(), self.n_samples)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats file serializes")
    }
}
