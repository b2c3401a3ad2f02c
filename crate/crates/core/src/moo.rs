//! Bi-objective minimization primitives: weak dominance, Pareto front
//! extraction, exact 2-D hypervolume and exact 2-D expected hypervolume
//! improvement for independent Gaussian objectives.
//!
//! Both objectives are minimized. The reference point must be strictly worse
//! than every front member in both coordinates; hypervolume is the staircase
//! area between the front and the reference point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{real, to_f64, Real};

/// A point in objective space with an opaque identity tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint<T> {
    pub f1: T,
    pub f2: T,
    pub id: String,
}

impl<T: Real> ObjectivePoint<T> {
    pub fn new(f1: T, f2: T, id: impl Into<String>) -> ObjectivePoint<T> {
        ObjectivePoint {
            f1,
            f2,
            id: id.into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.f1.is_finite() && self.f2.is_finite()
    }
}

#[derive(Debug, Error)]
pub enum MooError {
    #[error("point `{0}` has a non-finite objective value")]
    NonFinite(String),
    #[error("cannot extract a front from an empty point set")]
    EmptyInput,
    #[error("member `{id}` ({f1}, {f2}) is not strictly below the reference point ({r1}, {r2})")]
    NotBelowReference {
        id: String,
        f1: f64,
        f2: f64,
        r1: f64,
        r2: f64,
    },
    #[error("negative variance {0}")]
    NegativeVariance(f64),
}

/// Weak Pareto dominance for minimization: `a` is no worse in both
/// objectives and strictly better in at least one.
pub fn dominates<T: Real>(a: &ObjectivePoint<T>, b: &ObjectivePoint<T>) -> bool {
    a.f1 <= b.f1 && a.f2 <= b.f2 && (a.f1 < b.f1 || a.f2 < b.f2)
}

/// Maximal subset of mutually non-dominated points, sorted ascending by f1.
///
/// Exact duplicates in objective space keep a single representative: the
/// input is stably pre-sorted by id, so the lexicographically smallest id
/// wins regardless of input order.
pub fn pareto_front<T: Real>(
    points: &[ObjectivePoint<T>],
) -> Result<Vec<ObjectivePoint<T>>, MooError> {
    if points.is_empty() {
        return Err(MooError::EmptyInput);
    }
    for p in points {
        if !p.is_finite() {
            return Err(MooError::NonFinite(p.id.clone()));
        }
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    // Drop exact objective duplicates, first id wins.
    let mut deduped: Vec<ObjectivePoint<T>> = Vec::with_capacity(sorted.len());
    for p in sorted {
        if !deduped.iter().any(|q| q.f1 == p.f1 && q.f2 == p.f2) {
            deduped.push(p);
        }
    }
    deduped.sort_by(|a, b| {
        (a.f1, a.f2)
            .partial_cmp(&(b.f1, b.f2))
            .expect("finite objectives")
    });
    // Sweep: after the sort, a point survives iff its f2 is strictly below
    // everything seen so far, which is exactly weak non-dominance.
    let mut front = Vec::new();
    let mut best_f2 = T::infinity();
    for p in deduped {
        if p.f2 < best_f2 {
            best_f2 = p.f2;
            front.push(p);
        }
    }
    Ok(front)
}

/// An evolving non-dominated set plus the reference point that bounds its
/// hypervolume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive<T> {
    points: Vec<ObjectivePoint<T>>,
    ref_point: (T, T),
}

impl<T: Real> ParetoArchive<T> {
    /// Builds an archive from arbitrary points: extracts the front and
    /// checks every member sits strictly below the reference point.
    pub fn from_points(
        points: &[ObjectivePoint<T>],
        ref_point: (T, T),
    ) -> Result<ParetoArchive<T>, MooError> {
        let front = pareto_front(points)?;
        for p in &front {
            if !(p.f1 < ref_point.0 && p.f2 < ref_point.1) {
                return Err(MooError::NotBelowReference {
                    id: p.id.clone(),
                    f1: to_f64(p.f1),
                    f2: to_f64(p.f2),
                    r1: to_f64(ref_point.0),
                    r2: to_f64(ref_point.1),
                });
            }
        }
        Ok(ParetoArchive {
            points: front,
            ref_point,
        })
    }

    /// An archive with no members yet.
    pub fn empty(ref_point: (T, T)) -> ParetoArchive<T> {
        ParetoArchive {
            points: Vec::new(),
            ref_point,
        }
    }

    /// Front members, ascending by f1 (hence strictly descending by f2).
    pub fn points(&self) -> &[ObjectivePoint<T>] {
        &self.points
    }

    pub fn ref_point(&self) -> (T, T) {
        self.ref_point
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.points.iter().map(|p| p.id.as_str()).collect()
    }
}

/// Exact 2-D hypervolume: the staircase area dominated by the front and
/// bounded by the reference point. Zero for an empty front.
pub fn hypervolume_2d<T: Real>(archive: &ParetoArchive<T>) -> T {
    let (r1, r2) = archive.ref_point;
    let mut hv = T::zero();
    let points = archive.points();
    for (i, p) in points.iter().enumerate() {
        let next_f1 = points.get(i + 1).map(|q| q.f1).unwrap_or(r1);
        hv += (next_f1 - p.f1) * (r2 - p.f2);
    }
    hv
}

/// Standard normal density and distribution function.
pub fn standard_normal<T: Real>(x: T) -> (T, T) {
    let xf = to_f64(x);
    let pdf = (-0.5 * xf * xf).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let cdf = 0.5 * libm::erfc(-xf / std::f64::consts::SQRT_2);
    (real(pdf), real(cdf))
}

/// Gaussian partial expectation
/// `psi(a, b, mu, sigma) = sigma * phi((b - mu) / sigma) + (a - mu) * Phi((b - mu) / sigma)`.
///
/// For `a = b = u` this is `E[(u - Y)^+]` of `Y ~ N(mu, sigma^2)`.
pub fn psi<T: Real>(a: T, b: T, mu: T, sigma: T) -> T {
    if sigma == T::zero() {
        // Step-function limit.
        return if b >= mu { a - mu } else { T::zero() };
    }
    let z = (b - mu) / sigma;
    let (pdf, cdf) = standard_normal(z);
    sigma * pdf + (a - mu) * cdf
}

/// Exact expected hypervolume improvement of a candidate with independent
/// Gaussian objectives `N(mu1, var1)`, `N(mu2, var2)` over the archive.
///
/// The non-dominated region is cut into vertical strips at the front's f1
/// coordinates; each strip contributes the product of a Gaussian partial
/// expectation in f2 and an integral of the f1 CDF across the strip. With
/// zero variance the terms degenerate to the deterministic improvement.
pub fn ehvi_2d<T: Real>(
    mu1: T,
    var1: T,
    mu2: T,
    var2: T,
    archive: &ParetoArchive<T>,
) -> Result<T, MooError> {
    if var1 < T::zero() {
        return Err(MooError::NegativeVariance(to_f64(var1)));
    }
    if var2 < T::zero() {
        return Err(MooError::NegativeVariance(to_f64(var2)));
    }
    let sigma1 = var1.sqrt();
    let sigma2 = var2.sqrt();
    let (r1, r2) = archive.ref_point;
    let points = archive.points();
    let m = points.len();

    // Integral of Phi((t - mu1) / sigma1) over [a, b].
    let cdf_integral = |a: T, b: T| -> T {
        if b <= a {
            return T::zero();
        }
        if sigma1 == T::zero() {
            // Unit step at mu1.
            return (b - mu1.max(a)).max(T::zero());
        }
        // psi(u, u, mu, sigma) = sigma * Psi((u - mu) / sigma) with
        // Psi(z) = z Phi(z) + phi(z), so the integral telescopes.
        let upper = psi(b, b, mu1, sigma1);
        let lower = if a == T::neg_infinity() {
            T::zero()
        } else {
            psi(a, a, mu1, sigma1)
        };
        (upper - lower).max(T::zero())
    };

    let mut total = T::zero();
    for i in 0..=m {
        // Strip i spans [t_i, t_{i+1}) in f1; everything below h_i in f2 is
        // uncovered there.
        let t_lo = if i == 0 {
            T::neg_infinity()
        } else {
            points[i - 1].f1
        };
        let t_hi = if i == m { r1 } else { points[i].f1 };
        let height = if i == 0 { r2 } else { points[i - 1].f2 };
        let gain = psi(height, height, mu2, sigma2);
        if gain > T::zero() {
            total += gain * cdf_integral(t_lo, t_hi);
        }
    }
    Ok(total.max(T::zero()))
}

/// Deterministic hypervolume improvement of a single point over the archive:
/// the area the point would add, zero if it is dominated or out of bounds.
pub fn hypervolume_improvement<T: Real>(f1: T, f2: T, archive: &ParetoArchive<T>) -> T {
    ehvi_2d(f1, T::zero(), f2, T::zero(), archive).expect("zero variance is valid")
}
