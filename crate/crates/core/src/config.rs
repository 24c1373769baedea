//! TOML experiment configuration.
//!
//! Every section has defaults, so a file only needs the sections relevant to
//! the subcommand at hand. Validation errors name the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{DiffusionSettings, Normalization};
use crate::kernels::CorrelationModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replicates: usize,
    pub grid: GridConfig,
    pub background: BackgroundConfig,
    pub truth: ObsErrorConfig,
    /// Specified covariances tried against the same truth; the truth itself
    /// is used when empty.
    pub specified: Vec<ObsErrorConfig>,
    pub observations: ObservationConfig,
    pub solver: SolverConfig,
    pub normalization: NormalizationConfig,
    pub kernel: KernelConfig,
    pub ratio_surface: RatioSurfaceConfig,
    pub sample: SampleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            replicates: 10,
            grid: GridConfig::default(),
            background: BackgroundConfig::default(),
            truth: ObsErrorConfig::default(),
            specified: Vec::new(),
            observations: ObservationConfig::default(),
            solver: SolverConfig::default(),
            normalization: NormalizationConfig::default(),
            kernel: KernelConfig::default(),
            ratio_surface: RatioSurfaceConfig::default(),
            sample: SampleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    pub h_km: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 256, h_km: 25.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    pub sigma_b: f64,
    pub m_b: u32,
    pub rho_b_km: f64,
    /// Uncorrelated background.
    pub diagonal: bool,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            sigma_b: 1.0,
            m_b: 10,
            rho_b_km: 250.0,
            diagonal: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    /// `σ² I`.
    Diagonal,
    /// Normalised finite-element diffusion on the observation track.
    Diffusion,
    /// Periodic circulant AR covariance on a uniform observation grid.
    Circulant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsErrorConfig {
    pub name: Option<String>,
    pub kind: CovKind,
    pub sigma_o: f64,
    pub m_o: u32,
    pub rho_o_km: f64,
}

impl Default for ObsErrorConfig {
    fn default() -> Self {
        Self {
            name: None,
            kind: CovKind::Diagonal,
            sigma_o: 1.0,
            m_o: 2,
            rho_o_km: 100.0,
        }
    }
}

impl ObsErrorConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| match self.kind {
            CovKind::Diagonal => "diagonal".into(),
            CovKind::Diffusion => format!("diffusion_m{}_rho{}", self.m_o, self.rho_o_km),
            CovKind::Circulant => format!("circulant_m{}_rho{}", self.m_o, self.rho_o_km),
        })
    }

    pub fn model(&self) -> Result<CorrelationModel> {
        CorrelationModel::new(self.m_o, self.rho_o_km)
    }

    fn validate(&self, section: &str) -> Result<()> {
        positive(&format!("{section}.sigma_o"), self.sigma_o)?;
        if self.kind != CovKind::Diagonal {
            if self.m_o < 1 {
                return Err(field(&format!("{section}.m_o"), "must be at least 1"));
            }
            positive(&format!("{section}.rho_o_km"), self.rho_o_km)?;
        }
        if self.kind == CovKind::Diffusion && self.m_o % 2 != 0 {
            return Err(field(
                &format!("{section}.m_o"),
                &format!("must be even for a diffusion covariance, got {}", self.m_o),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    Every,
    Stride,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservationConfig {
    pub mode: ObsMode,
    pub stride: usize,
    pub offset: usize,
    pub path: Option<PathBuf>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            mode: ObsMode::Every,
            stride: 1,
            offset: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Orders of magnitude of gradient-norm reduction.
    pub tolerance_orders: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance_orders: 10.0,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    None,
    Exact,
    Spaced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub mode: NormalizationMode,
    pub spacing_factor: f64,
    pub ci_tolerance: f64,
    pub ci_max_iter: usize,
    pub gap_split_factor: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            mode: NormalizationMode::Spaced,
            spacing_factor: 10.0,
            ci_tolerance: 1e-2,
            ci_max_iter: 500,
            gap_split_factor: f64::INFINITY,
        }
    }
}

impl NormalizationConfig {
    pub fn normalization(&self) -> Normalization {
        match self.mode {
            NormalizationMode::None => Normalization::None,
            NormalizationMode::Exact => Normalization::Exact,
            NormalizationMode::Spaced => Normalization::Spaced {
                spacing_factor: self.spacing_factor,
            },
        }
    }

    pub fn diffusion_settings(&self, seed: u64) -> DiffusionSettings {
        DiffusionSettings {
            target_tol: self.ci_tolerance,
            max_iter: self.ci_max_iter,
            seed,
            normalization: self.normalization(),
            ..DiffusionSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    pub m: u32,
    pub rho_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub curves: Vec<CurveConfig>,
    pub r_max_km: f64,
    pub n_points: usize,
    /// Largest angular wavenumber (rad/km) of the emitted spectrum.
    pub k_max: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            curves: Vec::new(),
            r_max_km: 2000.0,
            n_points: 401,
            k_max: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioSurfaceConfig {
    pub n_oo: usize,
    pub n_ob: usize,
    pub eta_oo_min: f64,
    pub eta_oo_max: f64,
    pub eta_ob_min: f64,
    pub eta_ob_max: f64,
}

impl Default for RatioSurfaceConfig {
    fn default() -> Self {
        Self {
            n_oo: 200,
            n_ob: 200,
            eta_oo_min: 1e-2,
            eta_oo_max: 1e2,
            eta_ob_min: 1e-4,
            eta_ob_max: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub draws: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { draws: 100 }
    }
}

fn field(name: &str, reason: &str) -> Error {
    Error::Config(format!("{name}: {reason}"))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(field(name, &format!("must be positive, got {v}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_hint(text, e.span())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Specified covariances, defaulting to the truth.
    pub fn specified_or_truth(&self) -> Vec<ObsErrorConfig> {
        if self.specified.is_empty() {
            let mut t = self.truth.clone();
            t.name.get_or_insert_with(|| "truth".into());
            vec![t]
        } else {
            self.specified.clone()
        }
    }

    pub fn background_model(&self) -> Result<CorrelationModel> {
        CorrelationModel::new(self.background.m_b, self.background.rho_b_km)
    }

    /// Checks for the grid, background and observation-error sections.
    pub fn validate(&self) -> Result<()> {
        if self.grid.n < 2 {
            return Err(field("grid.n", "at least two grid points are required"));
        }
        positive("grid.h_km", self.grid.h_km)?;
        positive("background.sigma_b", self.background.sigma_b)?;
        if !self.background.diagonal {
            if self.background.m_b < 1 {
                return Err(field("background.m_b", "must be at least 1"));
            }
            positive("background.rho_b_km", self.background.rho_b_km)?;
        }
        self.truth.validate("truth")?;
        for (i, s) in self.specified.iter().enumerate() {
            s.validate(&format!("specified[{i}]"))?;
        }
        match self.observations.mode {
            ObsMode::Stride if self.observations.stride == 0 => {
                return Err(field("observations.stride", "must be at least 1"));
            }
            ObsMode::Stride if self.observations.offset >= self.grid.n => {
                return Err(field("observations.offset", "must be smaller than grid.n"));
            }
            _ => {}
        }
        if !(self.solver.tolerance_orders > 0.0) {
            return Err(field("solver.tolerance_orders", "must be positive"));
        }
        if self.solver.max_iter == 0 {
            return Err(field("solver.max_iter", "must be at least 1"));
        }
        if self.normalization.mode == NormalizationMode::Spaced {
            positive("normalization.spacing_factor", self.normalization.spacing_factor)?;
        }
        positive("normalization.ci_tolerance", self.normalization.ci_tolerance)?;
        if !(self.normalization.gap_split_factor > 0.0) {
            return Err(field("normalization.gap_split_factor", "must be positive"));
        }
        Ok(())
    }

    pub fn validate_kernel(&self) -> Result<()> {
        for (i, c) in self.kernel.curves.iter().enumerate() {
            if c.m < 1 {
                return Err(field(&format!("kernel.curves[{i}].m"), "must be at least 1"));
            }
            positive(&format!("kernel.curves[{i}].rho_km"), c.rho_km)?;
        }
        positive("kernel.r_max_km", self.kernel.r_max_km)?;
        positive("kernel.k_max", self.kernel.k_max)?;
        if self.kernel.n_points < 2 {
            return Err(field("kernel.n_points", "at least two points are required"));
        }
        Ok(())
    }

    pub fn validate_ratio_surface(&self) -> Result<()> {
        let s = &self.ratio_surface;
        for (name, v) in [
            ("ratio_surface.eta_oo_min", s.eta_oo_min),
            ("ratio_surface.eta_oo_max", s.eta_oo_max),
            ("ratio_surface.eta_ob_min", s.eta_ob_min),
            ("ratio_surface.eta_ob_max", s.eta_ob_max),
        ] {
            positive(name, v)?;
        }
        if s.n_oo == 0 {
            return Err(field("ratio_surface.n_oo", "must be at least 1"));
        }
        if s.n_ob == 0 {
            return Err(field("ratio_surface.n_ob", "must be at least 1"));
        }
        Ok(())
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}
