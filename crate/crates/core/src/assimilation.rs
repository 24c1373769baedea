//! Synthetic twin experiments with a B-preconditioned conjugate gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::background::CirculantCov;
use crate::config::{CovKind, ExperimentConfig, ObsErrorConfig, ObsMode};
use crate::error::{check_len, Error, Result};
use crate::io::read_obs_file;
use crate::kernels::{circulant_eigenvalues, CorrelationModel};
use crate::linalg::{dot, rms};
use crate::mesh::{Locations, TrackMesh};
use crate::obs_cov::ObsErrorCov;
use crate::Covariance;

/// `G`: picks the observed grid points out of the state vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionOperator {
    n: usize,
    indices: Vec<usize>,
}

impl SelectionOperator {
    pub fn every(n: usize) -> Self {
        Self {
            n,
            indices: (0..n).collect(),
        }
    }

    pub fn stride(n: usize, stride: usize, offset: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        if offset >= n {
            return Err(Error::invalid("offset", "must be smaller than the state dimension"));
        }
        Ok(Self {
            n,
            indices: (offset..n).step_by(stride).collect(),
        })
    }

    /// Strictly increasing indices within `[0, n)`.
    pub fn from_indices(n: usize, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("indices", "at least one observation is required"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(
                "indices",
                format!("index {i} outside the grid of {n} points"),
            ));
        }
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "indices",
                "must be strictly increasing (one observation per point)",
            ));
        }
        Ok(Self { n, indices })
    }

    /// Nearest grid points of along-track positions (km) on a grid of
    /// spacing `h`.
    pub fn from_positions(n: usize, h: f64, positions: &[f64]) -> Result<Self> {
        let idx = positions.iter().map(|x| (x / h).round()).collect::<Vec<_>>();
        if let Some(x) = idx.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::invalid("positions", format!("negative grid index {x}")));
        }
        Self::from_indices(n, idx.into_iter().map(|x| x as usize).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Uniform observation spacing in grid steps, if any.
    pub fn uniform_stride(&self) -> Option<usize> {
        let s = if self.indices.len() > 1 {
            self.indices[1] - self.indices[0]
        } else {
            self.n
        };
        let uniform = self.indices.windows(2).all(|w| w[1] - w[0] == s);
        (uniform && self.n % s == 0 && self.indices.len() * s == self.n).then_some(s)
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, self.n)?;
        Ok(self.indices.iter().map(|&i| x[i]).collect())
    }

    /// `Gᵀ y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, self.p())?;
        let mut out = vec![0.0; self.n];
        for (&i, v) in self.indices.iter().zip(y) {
            out[i] += v;
        }
        Ok(out)
    }
}

/// Everything produced by one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentState {
    pub seed: u64,
    pub eps_b: Vec<f64>,
    pub eps_o: Vec<f64>,
    pub d: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
    pub rms_series: Vec<f64>,
    pub grad_norm_series: Vec<f64>,
    pub cost_series: Vec<f64>,
    pub converged: bool,
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `d = εo − G εb`.
pub fn innovation_from_errors(eps_b: &[f64], eps_o: &[f64], g: &SelectionOperator) -> Result<Vec<f64>> {
    check_len(eps_o, g.p())?;
    let geb = g.apply(eps_b)?;
    Ok(eps_o.iter().zip(&geb).map(|(o, b)| o - b).collect())
}

/// Draw `ηb` then `ηo` from a ChaCha8 stream seeded with `seed` and form
/// `εb = Uηb`, `εo = Vηo` and the innovation.
pub fn simulate_innovation(
    b: &dyn Covariance,
    r_true: &dyn Covariance,
    g: &SelectionOperator,
    seed: u64,
) -> Result<ExperimentState> {
    if b.dim() != g.n() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            actual: b.dim(),
        });
    }
    if r_true.dim() != g.p() {
        return Err(Error::DimensionMismatch {
            expected: g.p(),
            actual: r_true.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta_b = normal(&mut rng, g.n());
    let eta_o = normal(&mut rng, g.p());
    let eps_b = b.apply_sqrt(&eta_b)?;
    let eps_o = r_true.apply_sqrt(&eta_o)?;
    let d = innovation_from_errors(&eps_b, &eps_o, g)?;
    Ok(ExperimentState {
        seed,
        eps_b,
        eps_o,
        d,
        iterates: Vec::new(),
        rms_series: Vec::new(),
        grad_norm_series: Vec::new(),
        cost_series: Vec::new(),
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingCriterion {
    /// Stop once `‖∇J‖_B ≤ 10^(-orders) ‖∇J₀‖_B`.
    pub orders: f64,
    pub max_iter: usize,
}

impl Default for StoppingCriterion {
    fn default() -> Self {
        Self {
            orders: 10.0,
            max_iter: 500,
        }
    }
}

/// Iterates and diagnostics of one minimisation. Index 0 is the zero
/// starting increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimization {
    pub iterates: Vec<Vec<f64>>,
    /// `‖∇J‖_B = √(∇Jᵀ B ∇J)` at every iterate.
    pub grad_bnorm: Vec<f64>,
    pub cost: Vec<f64>,
    pub converged: bool,
}

impl Minimization {
    pub fn iterations(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn grad_bnorm_rel(&self) -> Vec<f64> {
        let g0 = self.grad_bnorm[0];
        self.grad_bnorm
            .iter()
            .map(|g| if g0 > 0.0 { g / g0 } else { 0.0 })
            .collect()
    }

    pub fn solution(&self) -> &[f64] {
        self.iterates.last().expect("at least the initial iterate")
    }
}

/// Minimise `J(δx) = ½δxᵀB⁻¹δx + ½(Gδx−d)ᵀR̃⁻¹(Gδx−d)` by conjugate
/// gradients preconditioned with `B`.
///
/// Only products with `B` and `R̃⁻¹` are used: the image of the search
/// direction under `B⁻¹` is carried along by the same recurrence as the
/// direction itself.
pub fn minimize(
    b: &dyn Covariance,
    r_spec: &dyn Covariance,
    g: &SelectionOperator,
    d: &[f64],
    criterion: StoppingCriterion,
) -> Result<Minimization> {
    check_len(d, g.p())?;
    if b.dim() != g.n() || r_spec.dim() != g.p() {
        return Err(Error::DimensionMismatch {
            expected: g.n(),
            actual: b.dim(),
        });
    }
    let n = g.n();
    let rinv_d = r_spec.apply_inverse(d)?;
    let j0 = 0.5 * dot(d, &rinv_d);
    // Right-hand side of the normal equations; also the negative gradient at 0.
    let rhs = g.adjoint(&rinv_d)?;
    let mut x = vec![0.0; n];
    let mut r = rhs.clone();
    let mut z = b.apply(&r)?;
    let mut rz = dot(&r, &z).max(0.0);
    let mut dir = z.clone();
    let mut dir_hat = r.clone();

    let g0 = rz.sqrt();
    let target = g0 * 10f64.powf(-criterion.orders);
    let mut out = Minimization {
        iterates: vec![x.clone()],
        grad_bnorm: vec![g0],
        cost: vec![j0],
        converged: g0 == 0.0,
    };
    if out.converged {
        return Ok(out);
    }
    for _ in 0..criterion.max_iter {
        let gd = g.apply(&dir)?;
        let q_obs = g.adjoint(&r_spec.apply_inverse(&gd)?)?;
        let q: Vec<f64> = dir_hat.iter().zip(&q_obs).map(|(a, b)| a + b).collect();
        let curvature = dot(&dir, &q);
        if !(curvature > 0.0) {
            break;
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * dir[i];
            r[i] -= alpha * q[i];
        }
        z = b.apply(&r)?;
        let rz_new = dot(&r, &z).max(0.0);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
            dir_hat[i] = r[i] + beta * dir_hat[i];
        }
        let cost = j0
            - 0.5
                * x.iter()
                    .zip(rhs.iter().zip(&r))
                    .map(|(xi, (bi, ri))| xi * (bi + ri))
                    .sum::<f64>();
        let gn = rz.sqrt();
        out.iterates.push(x.clone());
        out.grad_bnorm.push(gn);
        out.cost.push(cost);
        if gn <= target {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// RMS over the grid of `δxa⁽ⁱ⁾ + εb` for every iterate.
pub fn analysis_error_series(iterates: &[Vec<f64>], eps_b: &[f64]) -> Result<Vec<f64>> {
    iterates
        .iter()
        .map(|x| {
            check_len(x, eps_b.len())?;
            let e: Vec<f64> = x.iter().zip(eps_b).map(|(a, b)| a + b).collect();
            Ok(rms(&e))
        })
        .collect()
}

impl ExperimentState {
    /// Minimise with the specified covariance and fill the series.
    pub fn assimilate(
        &mut self,
        b: &dyn Covariance,
        r_spec: &dyn Covariance,
        g: &SelectionOperator,
        criterion: StoppingCriterion,
    ) -> Result<()> {
        let m = minimize(b, r_spec, g, &self.d, criterion)?;
        self.rms_series = analysis_error_series(&m.iterates, &self.eps_b)?;
        self.grad_norm_series = m.grad_bnorm_rel();
        self.cost_series = m.cost;
        self.converged = m.converged;
        self.iterates = m.iterates;
        Ok(())
    }
}

/// Observation-error covariance on the observed grid points.
pub fn build_obs_cov(
    cfg: &ObsErrorConfig,
    g: &SelectionOperator,
    h: f64,
    settings: &crate::fem::DiffusionSettings,
) -> Result<Box<dyn Covariance>> {
    let p = g.p();
    Ok(match cfg.kind {
        CovKind::Diagonal => Box::new(ObsErrorCov::diagonal(vec![cfg.sigma_o; p])?),
        CovKind::Diffusion => {
            let positions = g.indices().iter().map(|&i| i as f64 * h).collect();
            let mesh = TrackMesh::from_positions(positions)?;
            Box::new(ObsErrorCov::build(
                &mesh,
                vec![cfg.sigma_o; p],
                &cfg.model()?,
                settings,
            )?)
        }
        CovKind::Circulant => {
            let stride = g.uniform_stride().ok_or_else(|| {
                Error::Config(
                    "a circulant observation-error covariance needs uniformly spaced observations \
                     covering the periodic grid"
                        .into(),
                )
            })?;
            let spec = circulant_eigenvalues(&cfg.model()?, p, stride as f64 * h)?;
            Box::new(CirculantCov::from_spectrum(cfg.sigma_o, spec)?)
        }
    })
}

/// Selection operator described by the observation section.
pub fn selection_from_config(cfg: &ExperimentConfig) -> Result<SelectionOperator> {
    let n = cfg.grid.n;
    let o = &cfg.observations;
    match o.mode {
        ObsMode::Every => Ok(SelectionOperator::every(n)),
        ObsMode::Stride => SelectionOperator::stride(n, o.stride, o.offset),
        ObsMode::File => {
            let path = o
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("observations.path: required when mode = \"file\"".into()))?;
            let tracks = read_obs_file(path)?;
            let mut positions = Vec::new();
            for t in tracks {
                match t.locations {
                    Locations::ArcKm(v) => positions.extend(v),
                    Locations::LonLat(_) => {
                        return Err(Error::Input(
                            "observations.path: assimilation layouts need arc_km positions".into(),
                        ))
                    }
                }
            }
            SelectionOperator::from_positions(n, cfg.grid.h_km, &positions)
        }
    }
}

/// Per-replicate series for one specified covariance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub rms: Vec<f64>,
    pub grad_bnorm_rel: Vec<f64>,
    pub cost: Vec<f64>,
    pub converged: bool,
}

impl ReplicateResult {
    pub fn iterations(&self) -> usize {
        self.rms.len() - 1
    }

    pub fn final_rms(&self) -> f64 {
        *self.rms.last().expect("initial iterate present")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub replicates: usize,
    pub initial_rms_mean: f64,
    pub final_rms_mean: f64,
    pub final_rms_std: f64,
    /// Half-width of the normal-approximation 95% interval of the mean.
    pub final_rms_ci95: f64,
    pub iterations_mean: f64,
    pub iterations_min: usize,
    pub iterations_max: usize,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub name: String,
    pub replicates: Vec<ReplicateResult>,
    pub summary: VariantSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub variants: Vec<VariantReport>,
}

fn summarize(name: &str, reps: &[ReplicateResult]) -> VariantSummary {
    let k = reps.len();
    if k == 0 {
        return VariantSummary {
            name: name.into(),
            replicates: 0,
            initial_rms_mean: 0.0,
            final_rms_mean: 0.0,
            final_rms_std: 0.0,
            final_rms_ci95: 0.0,
            iterations_mean: 0.0,
            iterations_min: 0,
            iterations_max: 0,
            all_converged: true,
        };
    }
    let kf = k as f64;
    let finals: Vec<f64> = reps.iter().map(ReplicateResult::final_rms).collect();
    let mean = finals.iter().sum::<f64>() / kf;
    let std = if k > 1 {
        (finals.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt()
    } else {
        0.0
    };
    let iters: Vec<usize> = reps.iter().map(ReplicateResult::iterations).collect();
    VariantSummary {
        name: name.into(),
        replicates: k,
        initial_rms_mean: reps.iter().map(|r| r.rms[0]).sum::<f64>() / kf,
        final_rms_mean: mean,
        final_rms_std: std,
        final_rms_ci95: 1.959964 * std / kf.sqrt(),
        iterations_mean: iters.iter().sum::<usize>() as f64 / kf,
        iterations_min: *iters.iter().min().expect("non-empty"),
        iterations_max: *iters.iter().max().expect("non-empty"),
        all_converged: reps.iter().all(|r| r.converged),
    }
}

/// Seed of replicate `i`.
pub fn replicate_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

/// Run all replicates for every specified covariance. Each replicate uses the
/// same error draw for all specified covariances, so results are paired.
/// `workers` threads process replicates in parallel; the output does not
/// depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig, g: &SelectionOperator, workers: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    if g.n() != cfg.grid.n {
        return Err(Error::DimensionMismatch {
            expected: cfg.grid.n,
            actual: g.n(),
        });
    }
    let h = cfg.grid.h_km;
    let b: CirculantCov = if cfg.background.diagonal {
        CirculantCov::white(cfg.grid.n, h, cfg.background.sigma_b)?
    } else {
        let model = CorrelationModel::new(cfg.background.m_b, cfg.background.rho_b_km)?;
        CirculantCov::build(cfg.grid.n, h, cfg.background.sigma_b, &model)?
    };
    let settings = cfg.normalization.diffusion_settings(cfg.seed);
    let truth = build_obs_cov(&cfg.truth, g, h, &settings)?;
    let specs = cfg.specified_or_truth();
    let spec_ops = specs
        .iter()
        .map(|s| build_obs_cov(s, g, h, &settings))
        .collect::<Result<Vec<_>>>()?;
    let criterion = StoppingCriterion {
        orders: cfg.solver.tolerance_orders,
        max_iter: cfg.solver.max_iter,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let per_rep: Vec<Vec<ReplicateResult>> = pool.install(|| {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let seed = replicate_seed(cfg.seed, rep);
                let base = simulate_innovation(&b, truth.as_ref(), g, seed)?;
                spec_ops
                    .iter()
                    .map(|r_spec| {
                        let mut st = base.clone();
                        st.assimilate(&b, r_spec.as_ref(), g, criterion)?;
                        Ok(ReplicateResult {
                            replicate: rep,
                            seed,
                            rms: st.rms_series,
                            grad_bnorm_rel: st.grad_norm_series,
                            cost: st.cost_series,
                            converged: st.converged,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let variants = specs
        .iter()
        .enumerate()
        .map(|(v, s)| {
            let reps: Vec<ReplicateResult> = per_rep.iter().map(|r| r[v].clone()).collect();
            let name = s.label();
            VariantReport {
                summary: summarize(&name, &reps),
                name,
                replicates: reps,
            }
        })
        .collect();
    Ok(ExperimentReport {
        seed: cfg.seed,
        n: g.n(),
        p: g.p(),
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_modes() {
        let g = SelectionOperator::stride(10, 3, 1).unwrap();
        assert_eq!(g.indices(), &[1, 4, 7]);
        assert_eq!(
            g.apply(&(0..10).map(|i| i as f64).collect::<Vec<_>>()).unwrap(),
            vec![1.0, 4.0, 7.0]
        );
        assert_eq!(g.adjoint(&[1.0, 2.0, 3.0]).unwrap()[4], 2.0);
        assert!(SelectionOperator::from_indices(5, vec![1, 1]).is_err());
        assert!(SelectionOperator::from_indices(5, vec![5]).is_err());
        assert_eq!(SelectionOperator::every(8).uniform_stride(), Some(1));
        assert_eq!(SelectionOperator::stride(8, 2, 0).unwrap().uniform_stride(), Some(2));
        assert_eq!(g.uniform_stride(), None);
    }

    #[test]
    fn zero_noise_gives_zero_innovation() {
        let g = SelectionOperator::every(4);
        let d = innovation_from_errors(&[0.0; 4], &[0.0; 4], &g).unwrap();
        assert_eq!(d, vec![0.0; 4]);
        let b = CirculantCov::white(4, 1.0, 1.0).unwrap();
        let r = ObsErrorCov::diagonal(vec![1.0; 4]).unwrap();
        let m = minimize(&b, &r, &g, &d, StoppingCriterion::default()).unwrap();
        assert!(m.converged && m.iterations() == 0);
    }

    #[test]
    fn single_observation_halves_innovation() {
        let model = CorrelationModel::new(2, 20.0).unwrap();
        let b = CirculantCov::build(32, 10.0, 1.0, &model).unwrap();
        let g = SelectionOperator::from_indices(32, vec![5]).unwrap();
        let r = ObsErrorCov::diagonal(vec![1.0]).unwrap();
        let m = minimize(&b, &r, &g, &[0.8], StoppingCriterion::default()).unwrap();
        assert!(m.converged);
        assert!((m.solution()[5] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn first_rms_is_background_error() {
        let eps_b = vec![1.0, -1.0, 1.0, -1.0];
        let s = analysis_error_series(&[vec![0.0; 4]], &eps_b).unwrap();
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn zero_replicates_empty_report() {
        let cfg = ExperimentConfig {
            replicates: 0,
            ..ExperimentConfig::default()
        };
        let rep = run_experiment(&cfg, &SelectionOperator::every(cfg.grid.n), 1).unwrap();
        assert!(rep.variants.iter().all(|v| v.replicates.is_empty()));
    }
}
