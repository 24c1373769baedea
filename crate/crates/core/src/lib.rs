//! Correlated observation-error covariances for along-track observation networks.
//!
//! The crate is organised around the pieces of a 1D variational analysis with a
//! non-diagonal observation-error covariance matrix:
//!
//! * [`kernels`]: auto-regressive (Matérn-class) correlation functions, their
//!   spectra and the eigenvalues of the circulant matrices they generate.
//! * [`spectral`]: scale-by-scale analysis of the optimal and suboptimal
//!   analysis equations for circulant covariances.
//! * [`mesh`]: observation tracks as 1D finite-element meshes, with contiguous
//!   partitioning and halos.
//! * [`fem`]: P1 assembly of the implicit diffusion operator, its exact inverse,
//!   Chebyshev-iteration application and normalisation factors.
//! * [`obs_cov`]: block-diagonal observation-error covariance `R = ΣΓDΓΣ`.
//! * [`background`]: homogeneous circulant background-error covariance.
//! * [`assimilation`]: twin experiments driven by simulated innovations and a
//!   B-preconditioned conjugate gradient.
//! * [`config`] and [`io`]: experiment configuration and CSV/JSON emission.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assimilation;
pub mod background;
pub mod config;
pub mod error;
pub mod fem;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod mesh;
pub mod obs_cov;
pub mod spectral;

pub use assimilation::{
    analysis_error_series, minimize, run_experiment, simulate_innovation, ExperimentReport, ExperimentState,
    Minimization, SelectionOperator, StoppingCriterion,
};
pub use background::{BackgroundCov, CirculantCov};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use fem::{
    assemble, AssembledOperators, ChebyshevCalibration, DiffusionOperator, DiffusionSettings, EigenBounds,
    Normalization,
};
pub use kernels::{ArKernel, CirculantSpectrum, CorrelationModel};
pub use mesh::{MeshPartition, TrackMesh};
pub use obs_cov::{BlockCorrelation, ObsBlock, ObsErrorCov};
pub use spectral::{ScaleDecomposition, SensitivitySpectrum};

/// A symmetric positive definite covariance operator available only through
/// matrix-vector products.
pub trait Covariance: Send + Sync {
    fn dim(&self) -> usize;

    /// `C v`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// `C⁻¹ v`.
    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// A square-root factor `L` with `L Lᵀ = C`, applied to white noise.
    fn apply_sqrt(&self, eta: &[f64]) -> Result<Vec<f64>>;
}
