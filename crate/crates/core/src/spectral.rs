//! Scale-by-scale analysis of the BLUE when every covariance is circulant.
//!
//! On a uniform periodic grid with direct observations at every point, `GBGᵀ`
//! and `R` share the Fourier eigenvectors and the gain collapses to one scalar
//! filter per wavenumber. All spectra here are "variance" spectra, i.e. the
//! eigenvalue of a correlation matrix already multiplied by its variance.

use log::warn;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernels::CirculantSpectrum;

/// Background and observation-error spectra on one grid, optionally with a
/// practical (misspecified) observation-error spectrum.
#[derive(Debug, Clone)]
pub struct ScaleDecomposition {
    sigma_b2: f64,
    background: CirculantSpectrum,
    sigma_o2: f64,
    observation: CirculantSpectrum,
    practical: Option<(f64, CirculantSpectrum)>,
}

fn check_variance(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::invalid(field, format!("variance must be positive, got {v}")));
    }
    Ok(())
}

impl ScaleDecomposition {
    pub fn new(
        sigma_b2: f64,
        background: CirculantSpectrum,
        sigma_o2: f64,
        observation: CirculantSpectrum,
    ) -> Result<Self> {
        check_variance("sigma_b2", sigma_b2)?;
        check_variance("sigma_o2", sigma_o2)?;
        if background.p() != observation.p() {
            return Err(Error::DimensionMismatch {
                expected: background.p(),
                actual: observation.p(),
            });
        }
        if (background.h() - observation.h()).abs() > 1e-12 * background.h() {
            return Err(Error::invalid("h", "background and observation grids differ"));
        }
        Ok(Self {
            sigma_b2,
            background,
            sigma_o2,
            observation,
            practical: None,
        })
    }

    /// Attach the practical observation-error variance and spectrum.
    pub fn with_practical(mut self, sigma_o2_tilde: f64, practical: CirculantSpectrum) -> Result<Self> {
        check_variance("sigma_o2_tilde", sigma_o2_tilde)?;
        if practical.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: practical.p(),
            });
        }
        self.practical = Some((sigma_o2_tilde, practical));
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.background.p()
    }

    pub fn h(&self) -> f64 {
        self.background.h()
    }

    pub fn background(&self) -> &CirculantSpectrum {
        &self.background
    }

    pub fn observation(&self) -> &CirculantSpectrum {
        &self.observation
    }

    pub fn has_practical(&self) -> bool {
        self.practical.is_some()
    }

    /// `σb² λb⁽ᵏ⁾`
    pub fn background_variance(&self) -> Vec<f64> {
        self.background
            .eigenvalues()
            .iter()
            .map(|l| self.sigma_b2 * l)
            .collect()
    }

    /// `σo² λo⁽ᵏ⁾`
    pub fn observation_variance(&self) -> Vec<f64> {
        self.observation
            .eigenvalues()
            .iter()
            .map(|l| self.sigma_o2 * l)
            .collect()
    }

    /// `σ̃o² λ̃o⁽ᵏ⁾`, if a practical spectrum is attached.
    pub fn practical_variance(&self) -> Option<Vec<f64>> {
        self.practical
            .as_ref()
            .map(|(s2, spec)| spec.eigenvalues().iter().map(|l| s2 * l).collect())
    }

    fn require_practical(&self) -> Result<Vec<f64>> {
        self.practical_variance()
            .ok_or_else(|| Error::invalid("practical", "no practical observation-error spectrum attached"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    Optimal,
    Practical,
}

/// Eigenvalues of the sensitivity matrix `S = GK`, one per wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySpectrum {
    pub values: Vec<f64>,
    pub kind: GainKind,
}

fn sensitivity(bvar: f64, ovar: f64) -> f64 {
    if bvar == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + ovar / bvar)
}

/// `λs⁽ᵏ⁾ = 1 / (1 + ν⁽ᵏ⁾)` with `ν⁽ᵏ⁾ = σo²λo⁽ᵏ⁾ / σb²λb⁽ᵏ⁾`; the tilded
/// observation spectrum is used when `use_practical` is set.
pub fn sensitivity_spectrum(dec: &ScaleDecomposition, use_practical: bool) -> Result<SensitivitySpectrum> {
    let ovar = if use_practical {
        dec.require_practical()?
    } else {
        dec.observation_variance()
    };
    let bvar = dec.background_variance();
    if bvar.contains(&0.0) {
        warn!("background variance vanishes at some wavenumbers; sensitivity set to zero there");
    }
    let values = bvar.iter().zip(&ovar).map(|(&b, &o)| sensitivity(b, o)).collect();
    Ok(SensitivitySpectrum {
        values,
        kind: if use_practical {
            GainKind::Practical
        } else {
            GainKind::Optimal
        },
    })
}

fn harmonic(b: f64, o: f64) -> f64 {
    if b == 0.0 || o == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 / b + 1.0 / o)
}

/// `σa²λa⁽ᵏ⁾ = (1/σb²λb⁽ᵏ⁾ + 1/σo²λo⁽ᵏ⁾)⁻¹`.
pub fn optimal_analysis_spectrum(dec: &ScaleDecomposition) -> Vec<f64> {
    dec.background_variance()
        .iter()
        .zip(dec.observation_variance())
        .map(|(&b, o)| harmonic(b, o))
        .collect()
}

fn suboptimal(b: f64, o: f64, ot: f64) -> f64 {
    let denom = ot + b;
    if denom == 0.0 {
        return 0.0;
    }
    (b * ot * ot + o * b * b) / (denom * denom)
}

/// Analysis-error variance per wavenumber when the gain is built from the
/// practical observation-error spectrum while the errors follow the true one.
pub fn suboptimal_analysis_spectrum(dec: &ScaleDecomposition) -> Result<Vec<f64>> {
    let ot = dec.require_practical()?;
    Ok(dec
        .background_variance()
        .iter()
        .zip(dec.observation_variance())
        .zip(ot)
        .map(|((&b, o), ot)| suboptimal(b, o, ot))
        .collect())
}

/// Suboptimal-to-optimal analysis-error variance ratio at one scale, as a
/// function of `eta_oo = σ̃o²λ̃o / σo²λo` and `eta_ob = σo²λo / σb²λb`.
pub fn analysis_error_ratio(eta_oo: f64, eta_ob: f64) -> Result<f64> {
    if !(eta_oo > 0.0 && eta_oo.is_finite()) {
        return Err(Error::invalid("eta_oo", "ratio must be positive"));
    }
    if !(eta_ob > 0.0 && eta_ob.is_finite()) {
        return Err(Error::invalid("eta_ob", "ratio must be positive"));
    }
    let cross = eta_ob * eta_oo;
    let common = 1.0 + cross * cross;
    Ok((common + (1.0 + eta_oo * eta_oo) * eta_ob) / (common + 2.0 * cross))
}

/// `eta_aa` on the tensor grid `grid_oo × grid_ob`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSurface {
    pub eta_oo: Vec<f64>,
    pub eta_ob: Vec<f64>,
    /// Row-major: `values[i * eta_oo.len() + j]` is at `(eta_oo[j], eta_ob[i])`.
    pub values: Vec<f64>,
}

impl RatioSurface {
    pub fn at(&self, i_ob: usize, j_oo: usize) -> f64 {
        self.values[i_ob * self.eta_oo.len() + j_oo]
    }
}

pub fn ratio_surface(grid_oo: &[f64], grid_ob: &[f64]) -> Result<RatioSurface> {
    let mut values = Vec::with_capacity(grid_oo.len() * grid_ob.len());
    for &ob in grid_ob {
        for &oo in grid_oo {
            values.push(analysis_error_ratio(oo, ob)?);
        }
    }
    Ok(RatioSurface {
        eta_oo: grid_oo.to_vec(),
        eta_ob: grid_ob.to_vec(),
        values,
    })
}

/// `n` points log-uniformly spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// `δŷa⁽ᵏ⁾ = λs⁽ᵏ⁾ d̂⁽ᵏ⁾`.
pub fn spectral_increment(lam_s: &[f64], innovation: &[Complex64]) -> Result<Vec<Complex64>> {
    if lam_s.len() != innovation.len() {
        return Err(Error::DimensionMismatch {
            expected: lam_s.len(),
            actual: innovation.len(),
        });
    }
    Ok(lam_s.iter().zip(innovation).map(|(s, d)| d * *s).collect())
}

/// Scalar BLUE for one direct observation: `(increment, analysis variance)`.
pub fn scalar_analysis(d: f64, sigma_o2: f64, sigma_b2: f64) -> Result<(f64, f64)> {
    check_variance("sigma_o2", sigma_o2)?;
    check_variance("sigma_b2", sigma_b2)?;
    Ok((d / (1.0 + sigma_o2 / sigma_b2), harmonic(sigma_b2, sigma_o2)))
}

/// Spatial scale `p h / k` (km) of wavenumber index `k`.
pub fn wavenumber_to_scale(k: usize, p: usize, h: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k", "k = 0 is the mean mode and has no finite scale"));
    }
    if k > p {
        return Err(Error::invalid("k", format!("wavenumber {k} exceeds grid size {p}")));
    }
    Ok(p as f64 * h / k as f64)
}

/// One row of the scale-decomposition table.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScaleRow {
    pub k: usize,
    pub scale_km: f64,
    pub lam_b_var: f64,
    pub lam_o_var: f64,
    pub lam_s: f64,
    pub lam_a_var: f64,
    pub lam_a_var_subopt: f64,
}

/// Rows for wavenumbers `1..=p/2`, ordered by decreasing scale. When no
/// practical spectrum is attached the suboptimal column equals the optimal one.
pub fn scale_table(dec: &ScaleDecomposition) -> Result<Vec<ScaleRow>> {
    let bvar = dec.background_variance();
    let ovar = dec.observation_variance();
    let lam_s = sensitivity_spectrum(dec, false)?.values;
    let opt = optimal_analysis_spectrum(dec);
    let sub = if dec.has_practical() {
        suboptimal_analysis_spectrum(dec)?
    } else {
        opt.clone()
    };
    let p = dec.p();
    (1..=p / 2)
        .map(|k| {
            Ok(ScaleRow {
                k,
                scale_km: wavenumber_to_scale(k, p, dec.h())?,
                lam_b_var: bvar[k],
                lam_o_var: ovar[k],
                lam_s: lam_s[k],
                lam_a_var: opt[k],
                lam_a_var_subopt: sub[k],
            })
        })
        .collect()
}

/// Where the background and observation variance spectra intersect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Real-valued wavenumber index of the intersection.
    pub wavenumber: f64,
    pub scale_km: f64,
    /// Optimal sensitivity evaluated on the circulant symbols at the crossing.
    pub lam_s: f64,
    /// Number of sign changes of `σb²λb − σo²λo` over `k = 1..=p/2`.
    pub sign_changes: usize,
}

/// Locate the first wavenumber in `1..=p/2` at which `σb²λb⁽ᵏ⁾ = σo²λo⁽ᵏ⁾`,
/// refined by bisection on the circulant symbols between the bracketing
/// integer wavenumbers.
pub fn variance_crossing(dec: &ScaleDecomposition) -> Option<Crossing> {
    let f = |k: f64| dec.sigma_b2 * dec.background.symbol(k) - dec.sigma_o2 * dec.observation.symbol(k);
    let bvar = dec.background_variance();
    let ovar = dec.observation_variance();
    let p = dec.p();
    let diff: Vec<f64> = (1..=p / 2).map(|k| bvar[k] - ovar[k]).collect();
    let sign_changes = diff.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
    let first = diff.windows(2).position(|w| (w[0] > 0.0) != (w[1] > 0.0))?;
    let (mut lo, mut hi) = ((first + 1) as f64, (first + 2) as f64);
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi {
            break;
        }
    }
    let k = 0.5 * (lo + hi);
    let b = dec.sigma_b2 * dec.background.symbol(k);
    let o = dec.sigma_o2 * dec.observation.symbol(k);
    Some(Crossing {
        wavenumber: k,
        scale_km: p as f64 * dec.h() / k,
        lam_s: sensitivity(b, o),
        sign_changes,
    })
}
