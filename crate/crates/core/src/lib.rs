//! Resonance spectra and exceptional-point (EP) population transfer for the
//! hydrogen atom in parallel electric and magnetic fields.
//!
//! The crate covers the full pipeline: assembly of the complex-scaled
//! Hamiltonian in a Coulomb-Sturmian basis ([`basis`]), solution of the
//! resulting complex-symmetric generalized eigenvalue problem with c-product
//! normalization and adiabatic label tracking ([`spectral`]), a reduced 2x2
//! matrix model fitted around an EP ([`two_level`]), time propagation of
//! resonance populations along closed field-strength loops ([`dynamics`]),
//! and parameter sweeps / optimization of the transferred population
//! ([`loops`]).
//!
//! All physical quantities are in atomic Hartree units; see [`units`] for
//! the SI conversion constants of the dimensionless field strengths.

use std::fmt;

use num_complex::Complex;
use num_traits::{Float as NumFloat, FloatConst, FromPrimitive, NumAssignOps};

pub mod basis;
pub mod dynamics;
pub mod linalg;
pub mod loops;
pub mod ode;
pub mod optim;
pub mod quad;
pub mod spectral;
pub mod two_level;
pub mod units;

/// Real scalar type underlying all complex arithmetic.
///
/// The heavy spectral machinery is only meaningful in `f64` (Sturmian
/// normalization factors underflow `f32` beyond small bases), but the model
/// layers (`two_level`, `ode`, `loops`) are exercised with both widths.
pub trait Scalar:
    NumFloat
    + FloatConst
    + FromPrimitive
    + NumAssignOps
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion from `f64` literals.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert into Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex number over a generic real scalar.
pub type Cplx<S> = Complex<S>;

/// Concrete aliases used by the CLI and most call sites.
pub type C64 = Complex<f64>;
pub type C32 = Complex<f32>;

/// Dimensionless field-strength pair `(gamma, f)` in atomic units.
///
/// `gamma = B / B0` and `f = F / F0` with the conversion constants of
/// [`units`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPoint<S> {
    pub gamma: S,
    pub f: S,
}

impl<S: Scalar> FieldPoint<S> {
    pub fn new(gamma: S, f: S) -> Self {
        Self { gamma, f }
    }
}

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid basis specification: {0}")]
    InvalidBasis(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("eigensolver did not converge: {0}")]
    NonConvergence(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("ambiguous state tracking: {0}; refine the path discretization")]
    AmbiguousTracking(String),
    #[error("self-orthogonal eigenvector (EP degeneracy): |v^T B v| / ||v||^2 = {0:e}")]
    SelfOrthogonal(f64),
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("no EP root inside the sampled region: {0}")]
    EpNotFound(String),
    #[error("integration failed at t = {t}: {msg}")]
    IntegrationFailure { t: f64, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
