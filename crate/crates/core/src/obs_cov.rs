//! Block-diagonal observation-error covariance `R = ΣΓDΓΣ`, one block per
//! instrument or track.

use std::ops::Range;

use crate::error::{check_len, Error, Result};
use crate::fem::{DiffusionOperator, DiffusionSettings};
use crate::kernels::CorrelationModel;
use crate::mesh::TrackMesh;
use crate::Covariance;

/// Correlation structure within one block.
#[derive(Debug)]
pub enum BlockCorrelation {
    /// `C = I`.
    Diagonal,
    /// `C = ΓDΓ` from a normalised diffusion operator.
    Diffusion(Box<DiffusionOperator>),
}

#[derive(Debug)]
pub struct ObsBlock {
    pub mesh: Option<TrackMesh>,
    pub sigma: Vec<f64>,
    pub correlation: BlockCorrelation,
}

impl ObsBlock {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn gamma(&self) -> Option<&[f64]> {
        match &self.correlation {
            BlockCorrelation::Diagonal => None,
            BlockCorrelation::Diffusion(d) => Some(d.gamma()),
        }
    }

    /// `R_b v`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.correlation {
            BlockCorrelation::Diagonal => Ok(v.iter().zip(&self.sigma).map(|(x, s)| x * s * s).collect()),
            BlockCorrelation::Diffusion(d) => {
                let g = d.gamma();
                let w: Vec<f64> = (0..v.len()).map(|i| v[i] * self.sigma[i] * g[i]).collect();
                let y = d.apply(&w)?;
                Ok((0..v.len()).map(|i| y[i] * self.sigma[i] * g[i]).collect())
            }
        }
    }

    /// `R_b⁻¹ v`.
    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        match &self.correlation {
            BlockCorrelation::Diagonal => Ok(v.iter().zip(&self.sigma).map(|(x, s)| x / (s * s)).collect()),
            BlockCorrelation::Diffusion(d) => {
                let g = d.gamma();
                let w: Vec<f64> = (0..v.len()).map(|i| v[i] / (self.sigma[i] * g[i])).collect();
                let y = d.apply_inverse(&w)?;
                Ok((0..v.len()).map(|i| y[i] / (self.sigma[i] * g[i])).collect())
            }
        }
    }

    /// `V_b η` with `V_b = ΣΓ M̄^{-1/2} Q^{m/2}`.
    fn apply_sqrt(&self, eta: &[f64]) -> Result<Vec<f64>> {
        match &self.correlation {
            BlockCorrelation::Diagonal => Ok(eta.iter().zip(&self.sigma).map(|(x, s)| x * s).collect()),
            BlockCorrelation::Diffusion(d) => {
                let g = d.gamma();
                let y = d.apply_sqrt(eta)?;
                Ok((0..eta.len()).map(|i| y[i] * self.sigma[i] * g[i]).collect())
            }
        }
    }
}

fn check_sigma(sigma: &[f64]) -> Result<()> {
    if let Some(i) = sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid(
            "sigma_o",
            format!("entry {i} is not a positive standard deviation"),
        ));
    }
    Ok(())
}

/// Observation-error covariance with independent blocks.
#[derive(Debug)]
pub struct ObsErrorCov {
    blocks: Vec<ObsBlock>,
    ranges: Vec<Range<usize>>,
    dim: usize,
}

impl ObsErrorCov {
    pub fn from_blocks(blocks: Vec<ObsBlock>) -> Result<Self> {
        let mut ranges = Vec::with_capacity(blocks.len());
        let mut start = 0;
        for b in &blocks {
            check_sigma(&b.sigma)?;
            if let BlockCorrelation::Diffusion(d) = &b.correlation {
                if d.p() != b.len() {
                    return Err(Error::DimensionMismatch {
                        expected: d.p(),
                        actual: b.len(),
                    });
                }
            }
            ranges.push(start..start + b.len());
            start += b.len();
        }
        Ok(Self {
            blocks,
            ranges,
            dim: start,
        })
    }

    /// `R = Σ²`.
    pub fn diagonal(sigma: Vec<f64>) -> Result<Self> {
        Self::from_blocks(vec![ObsBlock {
            mesh: None,
            sigma,
            correlation: BlockCorrelation::Diagonal,
        }])
    }

    /// One correlated block on `mesh`. `model.m()` must be even.
    pub fn build(
        mesh: &TrackMesh,
        sigma: Vec<f64>,
        model: &CorrelationModel,
        settings: &DiffusionSettings,
    ) -> Result<Self> {
        Self::from_blocks(vec![Self::block(mesh, sigma, model, settings)?])
    }

    /// A correlated block for use with [`Self::from_blocks`].
    pub fn block(
        mesh: &TrackMesh,
        sigma: Vec<f64>,
        model: &CorrelationModel,
        settings: &DiffusionSettings,
    ) -> Result<ObsBlock> {
        if sigma.len() != mesh.len() {
            return Err(Error::DimensionMismatch {
                expected: mesh.len(),
                actual: sigma.len(),
            });
        }
        check_sigma(&sigma)?;
        let op = DiffusionOperator::new(mesh, model, settings)?;
        Ok(ObsBlock {
            mesh: Some(mesh.clone()),
            sigma,
            correlation: BlockCorrelation::Diffusion(Box::new(op)),
        })
    }

    pub fn blocks(&self) -> &[ObsBlock] {
        &self.blocks
    }

    pub fn block_ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    /// Normalisation factors of every node; 1 on diagonal blocks.
    pub fn gamma(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.gamma().map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; b.len()]))
            .collect()
    }

    fn blockwise<F>(&self, v: &[f64], f: F) -> Result<Vec<f64>>
    where
        F: Fn(&ObsBlock, &[f64]) -> Result<Vec<f64>>,
    {
        check_len(v, self.dim)?;
        let mut out = Vec::with_capacity(self.dim);
        for (b, r) in self.blocks.iter().zip(&self.ranges) {
            out.extend(f(b, &v[r.clone()])?);
        }
        Ok(out)
    }
}

/// Build `R` for a single track; alias of [`ObsErrorCov::build`].
#[allow(non_snake_case)]
pub fn build_R(
    mesh: &TrackMesh,
    sigma: Vec<f64>,
    model: &CorrelationModel,
    settings: &DiffusionSettings,
) -> Result<ObsErrorCov> {
    ObsErrorCov::build(mesh, sigma, model, settings)
}

impl Covariance for ObsErrorCov {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(v, ObsBlock::apply)
    }

    fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(v, ObsBlock::apply_inverse)
    }

    fn apply_sqrt(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.blockwise(eta, ObsBlock::apply_sqrt)
    }
}
