//! Numerical multichannel scattering for finite Hermitian matrices.
//!
//! A system is a channel set A = A∞ + A₁ + … + A_N with a smoothing weight X.
//! It is stacked into the triple (A₀, A, J) on ℋ₀ = ℋ^{N+1} with the coupling
//! matrix T, so that AJ − JA₀ = JT. The resolvent of A is then recovered
//! from Fredholm equations, continued to the real axis, and used to build
//! wave operators and the scattering matrix.

pub mod faddeev;
pub mod linalg;
pub mod model;
pub mod report;
pub mod resolvent;
pub mod scattering;
pub mod spectral;

pub use faddeev::{FaddeevError, FaddeevSystem};
pub use linalg::{ComplexMatrix, HermitianEig, Interval, LinalgError};
pub use model::{AssumptionReport, ChannelSet, ModelError, MultichannelSystem};
pub use num_complex::Complex64;
pub use resolvent::{BoundaryValue, FreeModel, LimitOptions, ResolventContext, ResolventError, ResolventPoint, Side};
pub use scattering::{ScatteringError, ScatteringSample, Target, WaveMethod, WaveOperatorResult};
pub use spectral::{SpectralDecomposition, SpectralError};

/// Any error raised by the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Scattering(#[from] ScatteringError),
    #[error(transparent)]
    Faddeev(#[from] FaddeevError),
}
