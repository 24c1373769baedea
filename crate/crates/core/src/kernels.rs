//! Auto-regressive (AR) correlation functions generated by implicit diffusion.
//!
//! An AR function of order `m` is the smoothing kernel of `m` implicit
//! diffusion steps `(I - κ∂²)⁻¹` with a constant diffusion coefficient `κ`.
//! It belongs to the Matérn class: a polynomial of degree `m - 1` times an
//! exponential. The kernel is realised here numerically, as the normalised
//! response of the discrete operator to a unit impulse on a long, fine
//! auxiliary grid, so it is exactly the function that the finite-element
//! operator of [`crate::fem`] converges to.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CirculantFft, SymTridiagonal};

/// Parameters of one AR correlation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    m: u32,
    rho: f64,
    kappa: f64,
}

impl CorrelationModel {
    /// Model with `m` diffusion steps and length-scale parameter `rho` (km).
    pub fn new(m: u32, rho: f64) -> Result<Self> {
        let kappa = length_scale_to_kappa(rho, m)?;
        Ok(Self { m, rho, kappa })
    }

    /// Model from a diffusion coefficient (km²) instead of a length scale.
    pub fn from_kappa(m: u32, kappa: f64) -> Result<Self> {
        let rho = kappa_to_length_scale(kappa, m)?;
        Ok(Self { m, rho, kappa })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// `κ = ρ² / (2m − 1)`.
pub fn length_scale_to_kappa(rho: f64, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m", "the number of diffusion steps must be at least 1"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(
            "rho",
            format!("length scale must be positive, got {rho}"),
        ));
    }
    Ok(rho * rho / (2 * m - 1) as f64)
}

/// `ρ = √(κ (2m − 1))`.
pub fn kappa_to_length_scale(kappa: f64, m: u32) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("m", "the number of diffusion steps must be at least 1"));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(
            "kappa",
            format!("diffusion coefficient must be positive, got {kappa}"),
        ));
    }
    Ok((kappa * (2 * m - 1) as f64).sqrt())
}

/// Tabulated AR correlation function.
///
/// Values are stored at lags `j * spacing` for `j = 0..=half_width`; between
/// nodes the logarithm is interpolated linearly, which keeps the function
/// positive and strictly decreasing. Beyond the table the last logarithmic
/// slope is continued.
#[derive(Debug, Clone)]
pub struct ArKernel {
    model: CorrelationModel,
    spacing: f64,
    values: Vec<f64>,
    /// Unnormalised peak of the impulse response, used to normalise the spectrum.
    peak: f64,
    tail_slope: f64,
}

impl ArKernel {
    /// Nodes per length scale on the default auxiliary grid.
    pub const NODES_PER_RHO: f64 = 50.0;
    /// Half-width of the auxiliary grid in length scales.
    pub const HALF_WIDTH_RHO: f64 = 20.0;

    pub fn new(model: &CorrelationModel) -> Self {
        Self::build(model, model.rho / Self::NODES_PER_RHO)
    }

    /// Kernel tabulated at a caller-chosen auxiliary spacing (km).
    pub fn with_spacing(model: &CorrelationModel, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid("spacing", "auxiliary grid spacing must be positive"));
        }
        Ok(Self::build(model, spacing))
    }

    fn build(model: &CorrelationModel, spacing: f64) -> Self {
        let half = ((Self::HALF_WIDTH_RHO * model.rho / spacing).ceil() as usize).max(2);
        let n = 2 * half + 1;
        let s = model.kappa / (spacing * spacing);
        let step = SymTridiagonal {
            diag: vec![1.0 + 2.0 * s; n],
            off: vec![-s; n - 1],
        };
        let mut x = vec![0.0; n];
        x[half] = 1.0;
        for _ in 0..model.m {
            x = step.solve(&x);
        }
        let peak = x[half];
        let values: Vec<f64> = x[half..].iter().map(|v| v / peak).collect();
        let tail_slope = (values[half] / values[half - 1]).ln() / spacing;
        Self {
            model: *model,
            spacing,
            values,
            peak,
            tail_slope,
        }
    }

    pub fn model(&self) -> &CorrelationModel {
        &self.model
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Tabulated values at lags `0, spacing, 2 spacing, ...`.
    pub fn lag_values(&self) -> &[f64] {
        &self.values
    }

    /// Correlation at an integer multiple of the auxiliary spacing.
    pub fn at_lag(&self, j: usize) -> f64 {
        match self.values.get(j) {
            Some(&v) => v,
            None => {
                let last = self.values.len() - 1;
                self.values[last] * (self.tail_slope * (j - last) as f64 * self.spacing).exp()
            }
        }
    }

    /// Correlation at separation `r` (km).
    pub fn correlation(&self, r: f64) -> f64 {
        let x = r.abs() / self.spacing;
        let j = x.floor();
        let t = x - j;
        let j = j as usize;
        let last = self.values.len() - 1;
        if j >= last {
            return self.values[last] * (self.tail_slope * (r.abs() - last as f64 * self.spacing)).exp();
        }
        if t == 0.0 {
            return self.values[j];
        }
        ((1.0 - t) * self.values[j].ln() + t * self.values[j + 1].ln()).exp()
    }

    /// Spectral density of the tabulated kernel at angular wavenumber `k`
    /// (rad/km), normalised so that its inverse Fourier transform equals 1
    /// at zero lag. Zero beyond the Nyquist wavenumber of the auxiliary grid.
    pub fn spectral_density(&self, k: f64) -> f64 {
        let nyquist = PI / self.spacing;
        if k.abs() > nyquist {
            return 0.0;
        }
        let s = self.model.kappa / (self.spacing * self.spacing);
        let sin = (0.5 * k * self.spacing).sin();
        let symbol = (1.0 + 4.0 * s * sin * sin).powi(-(self.model.m as i32));
        self.spacing * symbol / self.peak
    }

    /// Largest wavenumber represented on the auxiliary grid.
    pub fn nyquist(&self) -> f64 {
        PI / self.spacing
    }
}

/// AR correlation at separation `r` (km). Builds a fresh kernel; use
/// [`ArKernel`] directly when evaluating many separations.
pub fn ar_correlation(model: &CorrelationModel, r: f64) -> f64 {
    ArKernel::new(model).correlation(r)
}

/// AR spectral density on a sorted, nonnegative wavenumber grid (rad/km).
pub fn ar_spectrum(model: &CorrelationModel, wavenumbers: &[f64]) -> Result<Vec<f64>> {
    if wavenumbers.iter().any(|&k| !(k >= 0.0)) {
        return Err(Error::invalid("wavenumbers", "wavenumbers must be nonnegative"));
    }
    if wavenumbers.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("wavenumbers", "wavenumbers must be sorted"));
    }
    let kernel = ArKernel::new(model);
    Ok(wavenumbers.iter().map(|&k| kernel.spectral_density(k)).collect())
}

/// Eigenvalues of a `p × p` symmetric circulant covariance on a uniform
/// periodic grid of spacing `h`, with the first row kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantSpectrum {
    h: f64,
    eigenvalues: Vec<f64>,
    first_row: Vec<f64>,
}

/// Tolerated imaginary residue and negative round-off of circulant eigenvalues.
const EIGEN_TOL: f64 = 1e-10;

impl CirculantSpectrum {
    /// Spectrum of the identity (uncorrelated) correlation matrix.
    pub fn white(p: usize, h: f64) -> Result<Self> {
        if p < 2 {
            return Err(Error::invalid("p", "at least two grid points are required"));
        }
        let mut first_row = vec![0.0; p];
        first_row[0] = 1.0;
        Ok(Self {
            h,
            eigenvalues: vec![1.0; p],
            first_row,
        })
    }

    /// Eigenvalues from the first row of a symmetric circulant matrix.
    pub fn from_first_row(h: f64, first_row: Vec<f64>) -> Result<Self> {
        let p = first_row.len();
        if p < 2 {
            return Err(Error::invalid("p", "at least two grid points are required"));
        }
        if !(h > 0.0) {
            return Err(Error::invalid("h", "grid spacing must be positive"));
        }
        let spec = CirculantFft::new(p).forward(&first_row);
        let scale = first_row.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let mut eigenvalues = Vec::with_capacity(p);
        for (k, z) in spec.iter().enumerate() {
            if z.im.abs() > EIGEN_TOL * scale {
                return Err(Error::invalid(
                    "first_row",
                    format!("row is not symmetric: eigenvalue {k} has imaginary part {}", z.im),
                ));
            }
            let mut v = z.re;
            if v < 0.0 {
                if v < -EIGEN_TOL {
                    warn!("clamping negative circulant eigenvalue {v:e} at wavenumber {k}");
                }
                v = 0.0;
            }
            eigenvalues.push(v);
        }
        // Pair k with p − k bit for bit; the transform only matches them to rounding.
        for k in 1..p.div_ceil(2) {
            let avg = 0.5 * (eigenvalues[k] + eigenvalues[p - k]);
            eigenvalues[k] = avg;
            eigenvalues[p - k] = avg;
        }
        Ok(Self {
            h,
            eigenvalues,
            first_row,
        })
    }

    /// Spectrum from eigenvalues given in DFT order (entry `k` must equal
    /// entry `p − k`).
    pub fn from_eigenvalues(h: f64, eigenvalues: Vec<f64>) -> Result<Self> {
        let p = eigenvalues.len();
        if p < 2 {
            return Err(Error::invalid("p", "at least two grid points are required"));
        }
        if eigenvalues.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("eigenvalues", "eigenvalues must be nonnegative"));
        }
        for k in 1..p {
            let (a, b) = (eigenvalues[k], eigenvalues[p - k]);
            if (a - b).abs() > EIGEN_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::invalid(
                    "eigenvalues",
                    format!("entry {k} differs from entry {}", p - k),
                ));
            }
        }
        let fft = CirculantFft::new(p);
        let spec = eigenvalues
            .iter()
            .map(|&v| num_complex::Complex64::new(v, 0.0))
            .collect();
        let first_row = fft.inverse(spec).into_iter().map(|z| z.re).collect();
        Ok(Self {
            h,
            eigenvalues,
            first_row,
        })
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn mean(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.p() as f64
    }

    /// The circulant symbol `Σ_j c_j cos(2π j k / p)`, with `j` the signed lag, at a real-valued
    /// wavenumber; equals the eigenvalues at integer `k`.
    pub fn symbol(&self, k: f64) -> f64 {
        let n = self.p();
        let p = n as f64;
        self.first_row
            .iter()
            .enumerate()
            .map(|(j, c)| {
                // Signed lag keeps the interpolant even in k between integers.
                let lag = if 2 * j <= n { j as f64 } else { j as f64 - p };
                c * (2.0 * PI * lag * k / p).cos()
            })
            .sum()
    }
}

/// Default wrap-around guard: the periodic domain must span `6ρ`.
pub const DEFAULT_GUARD_RATIO: f64 = 6.0;

/// Eigenvalues of the `p × p` circulant AR correlation matrix on a periodic
/// grid of spacing `h`.
pub fn circulant_eigenvalues(model: &CorrelationModel, p: usize, h: f64) -> Result<CirculantSpectrum> {
    circulant_eigenvalues_with_guard(model, p, h, DEFAULT_GUARD_RATIO)
}

pub fn circulant_eigenvalues_with_guard(
    model: &CorrelationModel,
    p: usize,
    h: f64,
    guard_ratio: f64,
) -> Result<CirculantSpectrum> {
    if p < 2 {
        return Err(Error::invalid("p", "at least two grid points are required"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("h", "grid spacing must be positive"));
    }
    let length = p as f64 * h;
    let required = guard_ratio * model.rho;
    if length < required {
        return Err(Error::DomainTooSmall { length, required });
    }
    let kernel = aligned_kernel(model, h)?;
    CirculantSpectrum::from_first_row(h, periodic_first_row(&kernel, p, h))
}

/// Kernel whose auxiliary grid contains every point of a grid of spacing `h`.
pub fn aligned_kernel(model: &CorrelationModel, h: f64) -> Result<ArKernel> {
    let refine = (ArKernel::NODES_PER_RHO * h / model.rho).ceil().max(1.0);
    ArKernel::with_spacing(model, h / refine)
}

/// First row of the correlation matrix of diffusion on a periodic grid of
/// `p` points: the line kernel summed over periodic images, rescaled to a
/// unit diagonal. Unlike the plainly truncated kernel this is always
/// positive semi-definite.
pub fn periodic_first_row(kernel: &ArKernel, p: usize, h: f64) -> Vec<f64> {
    let refine = (h / kernel.spacing()).round() as usize;
    let reach = ArKernel::HALF_WIDTH_RHO * kernel.model().rho / (p as f64 * h);
    let images = reach.ceil() as i64 + 1;
    let pi = p as i64;
    let mut row: Vec<f64> = (0..pi)
        .map(|j| {
            (-images..=images)
                .map(|n| kernel.at_lag((j + n * pi).unsigned_abs() as usize * refine))
                .sum()
        })
        .collect();
    let c0 = row[0];
    for v in row.iter_mut() {
        *v /= c0;
    }
    // Exact mirror symmetry regardless of summation order.
    for j in 1..p.div_ceil(2) {
        row[p - j] = row[j];
    }
    row
}
