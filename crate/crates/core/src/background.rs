//! Homogeneous covariance on a uniform periodic grid, applied through the FFT.

use crate::error::{check_len, Error, Result};
use crate::kernels::{circulant_eigenvalues, CirculantSpectrum, CorrelationModel};
use crate::linalg::CirculantFft;
use crate::Covariance;

/// `σ² C` with `C` a symmetric circulant correlation matrix.
#[derive(Debug, Clone)]
pub struct CirculantCov {
    sigma: f64,
    model: Option<CorrelationModel>,
    spectrum: CirculantSpectrum,
    fft: CirculantFft,
}

/// The background-error covariance of the synthetic experiments.
pub type BackgroundCov = CirculantCov;

impl CirculantCov {
    /// AR correlation with `n` points of spacing `h`; the domain must span
    /// at least six length scales.
    pub fn build(n: usize, h: f64, sigma: f64, model: &CorrelationModel) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("n", "at least two grid points are required"));
        }
        let spectrum = circulant_eigenvalues(model, n, h)?;
        let mut c = Self::from_spectrum(sigma, spectrum)?;
        c.model = Some(*model);
        Ok(c)
    }

    /// Uncorrelated limit, `σ² I`.
    pub fn white(n: usize, h: f64, sigma: f64) -> Result<Self> {
        Self::from_spectrum(sigma, CirculantSpectrum::white(n, h)?)
    }

    pub fn from_spectrum(sigma: f64, spectrum: CirculantSpectrum) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(
                "sigma",
                format!("standard deviation must be positive, got {sigma}"),
            ));
        }
        let fft = CirculantFft::new(spectrum.p());
        Ok(Self {
            sigma,
            model: None,
            spectrum,
            fft,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn model(&self) -> Option<&CorrelationModel> {
        self.model.as_ref()
    }

    pub fn spectrum(&self) -> &CirculantSpectrum {
        &self.spectrum
    }

    pub fn n(&self) -> usize {
        self.spectrum.p()
    }

    pub fn h(&self) -> f64 {
        self.spectrum.h()
    }

    fn scaled(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.spectrum.eigenvalues().iter().map(|&l| f(l)).collect()
    }
}

/// Build the background covariance; see [`CirculantCov::build`].
#[allow(non_snake_case)]
pub fn build_B(n: usize, h: f64, sigma_b: f64, model: &CorrelationModel) -> Result<BackgroundCov> {
    CirculantCov::build(n, h, sigma_b, model)
}

impl Covariance for CirculantCov {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.n())?;
        let s2 = self.sigma * self.sigma;
        Ok(self.fft.multiply(&self.scaled(|l| s2 * l), v))
    }

    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.n())?;
        if let Some(k) = self.spectrum.eigenvalues().iter().position(|&l| l <= 0.0) {
            return Err(Error::invalid(
                "spectrum",
                format!("covariance is singular (zero eigenvalue at wavenumber {k})"),
            ));
        }
        let s2 = self.sigma * self.sigma;
        Ok(self.fft.multiply(&self.scaled(|l| 1.0 / (s2 * l)), v))
    }

    fn apply_sqrt(&self, eta: &[f64]) -> Result<Vec<f64>> {
        check_len(eta, self.n())?;
        Ok(self.fft.multiply(&self.scaled(|l| self.sigma * l.sqrt()), eta))
    }
}
