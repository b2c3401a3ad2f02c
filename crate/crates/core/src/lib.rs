//! Multi-objective Bayesian optimization engine for hardware-aware
//! architecture selection.
//!
//! The crate searches a stage-wise discrete space of U-Net block variants
//! for architectures that trade generative fidelity (a Frechet distance to a
//! teacher model) against on-device cost (latency or parameter count). The
//! loop relaxes the discrete space to the unit cube, fits one Gaussian
//! process per objective, maximizes expected hypervolume improvement over a
//! candidate pool, projects the winner back onto the grid and sends it to a
//! black-box oracle. Everything an experiment produces is appended to a
//! checksummed event log so runs can be resumed and replayed exactly.
//!
//! Numeric kernels ([`gp`], [`moo`], [`frechet`], [`linalg`]) are generic
//! over the scalar type via [`scalar::Real`]; the aliases below fix them to
//! `f64`, which is what the optimizer itself uses.

pub mod bo;
pub mod cost;
pub mod frechet;
pub mod gp;
pub mod linalg;
pub mod log;
pub mod moo;
pub mod oracle;
pub mod scalar;
pub mod space;

pub use scalar::Real;

/// `f64` Gaussian feature statistics.
pub type GaussianStats = frechet::GaussianStats<f64>;
/// `f64` Gaussian process surrogate.
pub type GpModel = gp::GpModel<f64>;
/// `f64` kernel hyperparameters.
pub type KernelParams = gp::KernelParams<f64>;
/// `f64` objective-space point.
pub type ObjectivePoint = moo::ObjectivePoint<f64>;
/// `f64` non-dominated archive.
pub type ParetoArchive = moo::ParetoArchive<f64>;
