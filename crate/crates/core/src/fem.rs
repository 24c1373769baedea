//! P1 finite elements for the implicit diffusion operator on a track.
//!
//! With lumped mass `M̄` and stiffness `A`, the diffusion operator is
//! `D = [(M̄+A)⁻¹M̄]^m M̄⁻¹`. Its inverse is a fixed sequence of sparse
//! products. `D` itself is applied through `m` Chebyshev-iteration solves
//! with `S = I + M̄^{-1/2} A M̄^{-1/2}`, half of them through the adjoint
//! recurrence so that the discrete operator stays symmetric.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::kernels::CorrelationModel;
use crate::linalg::{dot, norm2, SymTridiagonal};
use crate::mesh::{MeshPartition, TrackMesh};

/// Mass and stiffness matrices of one track.
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledOperators {
    kappa: f64,
    lumped_mass: Vec<f64>,
    consistent_mass: SymTridiagonal,
    stiffness: SymTridiagonal,
}

/// Element-by-element assembly of the P1 mass and stiffness matrices.
pub fn assemble(mesh: &TrackMesh, kappa: f64) -> Result<AssembledOperators> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", format!("must be non-negative, got {kappa}")));
    }
    let p = mesh.len();
    let mut mass = SymTridiagonal::zeros(p);
    let mut stiff = SymTridiagonal::zeros(p);
    // Row sums of the consistent mass, accumulated without the 1/3 + 1/6 rounding.
    let mut lumped_mass = vec![0.0; p];
    for (e, &he) in mesh.edges().iter().enumerate() {
        if he <= 0.0 {
            return Err(Error::Mesh(format!("zero-length element {e}")));
        }
        let (mii, mij) = (he / 3.0, he / 6.0);
        let kii = kappa / he;
        lumped_mass[e] += 0.5 * he;
        lumped_mass[e + 1] += 0.5 * he;
        mass.diag[e] += mii;
        mass.diag[e + 1] += mii;
        mass.off[e] += mij;
        stiff.diag[e] += kii;
        stiff.diag[e + 1] += kii;
        stiff.off[e] -= kii;
    }
    Ok(AssembledOperators {
        kappa,
        lumped_mass,
        consistent_mass: mass,
        stiffness: stiff,
    })
}

impl AssembledOperators {
    pub fn p(&self) -> usize {
        self.lumped_mass.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped_mass
    }

    /// Kept for verification only; operators use the lumped mass.
    pub fn consistent_mass(&self) -> &SymTridiagonal {
        &self.consistent_mass
    }

    pub fn stiffness(&self) -> &SymTridiagonal {
        &self.stiffness
    }

    /// `I + M̄^{-1/2} A M̄^{-1/2}`.
    pub fn scaled_operator(&self) -> SymTridiagonal {
        let s: Vec<f64> = self.lumped_mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let a = &self.stiffness;
        SymTridiagonal {
            diag: (0..self.p()).map(|i| 1.0 + s[i] * a.diag[i] * s[i]).collect(),
            off: (0..self.p().saturating_sub(1))
                .map(|i| s[i] * a.off[i] * s[i + 1])
                .collect(),
        }
    }

    /// `M̄ + A`.
    fn system_matrix(&self) -> SymTridiagonal {
        SymTridiagonal {
            diag: self
                .lumped_mass
                .iter()
                .zip(&self.stiffness.diag)
                .map(|(m, a)| m + a)
                .collect(),
            off: self.stiffness.off.clone(),
        }
    }
}

/// Extreme eigenvalue estimates of `S = I + M̄^{-1/2} A M̄^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lanczos_steps: usize,
    /// Set when Lanczos broke down and Gershgorin bounds were used.
    pub fallback: bool,
}

fn normal_vector(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..p).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Ritz values of `S` from the coefficients of a conjugate-gradient run.
///
/// The lower bound is fixed to the exact value 1 (`A` is positive
/// semi-definite); the upper bound is the largest Ritz value, without any
/// safety margin.
pub fn estimate_extreme_eigenvalues(ops: &AssembledOperators, max_steps: usize, seed: u64) -> EigenBounds {
    let s = ops.scaled_operator();
    let p = ops.p();
    let steps = max_steps.min(p).max(1);
    let b = normal_vector(p, seed);

    let mut r = b;
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let rr0 = rr;
    let mut alphas = Vec::with_capacity(steps);
    let mut betas = Vec::with_capacity(steps);
    let mut breakdown = rr0 == 0.0;
    for _ in 0..steps {
        if breakdown {
            break;
        }
        let sd = s.matvec(&d);
        let dsd = dot(&d, &sd);
        if !(dsd > 0.0 && dsd.is_finite()) {
            breakdown = true;
            break;
        }
        let alpha = rr / dsd;
        for i in 0..p {
            r[i] -= alpha * sd[i];
        }
        let rr_new = dot(&r, &r);
        alphas.push(alpha);
        let beta = rr_new / rr;
        rr = rr_new;
        if rr <= 1e-28 * rr0 {
            break;
        }
        betas.push(beta);
        for i in 0..p {
            d[i] = r[i] + beta * d[i];
        }
    }

    let k = alphas.len();
    if breakdown && k == 0 {
        warn!("Lanczos breakdown, falling back to Gershgorin bounds");
        return EigenBounds {
            lambda_min: 1.0,
            lambda_max: s.gershgorin_max().max(1.0),
            lanczos_steps: 0,
            fallback: true,
        };
    }
    let mut t = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        t[(j, j)] = 1.0 / alphas[j];
        if j > 0 {
            t[(j, j)] += betas[j - 1] / alphas[j - 1];
        }
        if j + 1 < k {
            let o = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = o;
            t[(j + 1, j)] = o;
        }
    }
    let ritz = SymmetricEigen::new(t).eigenvalues;
    let ritz_max = ritz.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    EigenBounds {
        lambda_min: 1.0,
        lambda_max: ritz_max.max(1.0),
        lanczos_steps: k,
        fallback: false,
    }
}

/// Fixed Chebyshev-iteration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyshevCalibration {
    /// Bounds used by the iteration, after the safety factor.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub n_iter: usize,
    pub target_tol: f64,
    /// Relative residual of the trial solve at `n_iter`.
    pub residual: f64,
}

/// How normalisation factors are obtained.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Normalization {
    /// `Γ = I`.
    None,
    /// One application of `D` per node.
    Exact,
    /// Combs of impulses at least `spacing_factor · ρ` apart.
    Spaced { spacing_factor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSettings {
    pub safety: f64,
    pub target_tol: f64,
    pub max_iter: usize,
    pub lanczos_steps: usize,
    pub seed: u64,
    /// Bypass calibration and use this many Chebyshev iterations.
    pub fixed_iterations: Option<usize>,
    pub normalization: Normalization,
}

impl Default for DiffusionSettings {
    fn default() -> Self {
        Self {
            safety: 1.01,
            target_tol: 1e-2,
            max_iter: 500,
            lanczos_steps: 60,
            seed: 0x5eed,
            fixed_iterations: None,
            normalization: Normalization::Spaced { spacing_factor: 10.0 },
        }
    }
}

/// Operation counters for the cost contract.
#[derive(Debug, Default)]
pub struct Counters {
    pub tridiagonal_products: AtomicUsize,
    pub diagonal_products: AtomicUsize,
    pub diffusion_applications: AtomicUsize,
    pub ci_iterations: AtomicUsize,
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            tridiagonal_products: self.tridiagonal_products.load(Ordering::Relaxed),
            diagonal_products: self.diagonal_products.load(Ordering::Relaxed),
            diffusion_applications: self.diffusion_applications.load(Ordering::Relaxed),
            ci_iterations: self.ci_iterations.load(Ordering::Relaxed),
        }
    }

    fn add(c: &AtomicUsize, n: usize) {
        c.fetch_add(n, Ordering::Relaxed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub tridiagonal_products: usize,
    pub diagonal_products: usize,
    pub diffusion_applications: usize,
    pub ci_iterations: usize,
}

impl std::ops::Sub for CounterSnapshot {
    type Output = CounterSnapshot;
    fn sub(self, o: Self) -> Self {
        CounterSnapshot {
            tridiagonal_products: self.tridiagonal_products - o.tridiagonal_products,
            diagonal_products: self.diagonal_products - o.diagonal_products,
            diffusion_applications: self.diffusion_applications - o.diffusion_applications,
            ci_iterations: self.ci_iterations - o.ci_iterations,
        }
    }
}

/// Outcome of a normalisation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationReport {
    pub gamma: Vec<f64>,
    pub applications: usize,
    pub mode: Normalization,
}

type Tri<'a> = &'a (dyn Fn(&SymTridiagonal, &[f64]) -> Vec<f64> + Sync);

/// Calibrated, normalised diffusion operator on one track.
#[derive(Debug)]
pub struct DiffusionOperator {
    model: CorrelationModel,
    mean_spacing: f64,
    ops: AssembledOperators,
    scaled: SymTridiagonal,
    system: SymTridiagonal,
    inv_sqrt_mass: Vec<f64>,
    bounds: EigenBounds,
    calibration: ChebyshevCalibration,
    coeffs: Vec<(f64, f64)>,
    gamma: Vec<f64>,
    normalization_applications: usize,
    counters: Counters,
}

impl DiffusionOperator {
    /// Assemble, calibrate and normalise. `model.m()` must be even.
    pub fn new(mesh: &TrackMesh, model: &CorrelationModel, settings: &DiffusionSettings) -> Result<Self> {
        let mut op = Self::unnormalized(mesh, model, settings)?;
        if settings.normalization != Normalization::None {
            let report = op.compute_normalization(settings.normalization)?;
            op.gamma = report.gamma;
            op.normalization_applications = report.applications;
        }
        Ok(op)
    }

    /// Assemble and calibrate, leaving `Γ = I`.
    pub fn unnormalized(mesh: &TrackMesh, model: &CorrelationModel, settings: &DiffusionSettings) -> Result<Self> {
        if model.m() % 2 != 0 {
            return Err(Error::invalid(
                "m",
                format!("diffusion operator needs an even number of steps, got {}", model.m()),
            ));
        }
        if !(settings.safety >= 1.0) {
            return Err(Error::invalid("safety", "safety factor must be at least 1"));
        }
        if !(settings.target_tol > 0.0) {
            return Err(Error::invalid("target_tol", "must be positive"));
        }
        let ops = assemble(mesh, model.kappa())?;
        let scaled = ops.scaled_operator();
        let system = ops.system_matrix();
        let inv_sqrt_mass = ops.lumped_mass().iter().map(|m| 1.0 / m.sqrt()).collect();
        let bounds = estimate_extreme_eigenvalues(&ops, settings.lanczos_steps, settings.seed);
        let p = ops.p();
        let mut op = Self {
            model: *model,
            mean_spacing: mesh.mean_spacing(),
            ops,
            scaled,
            system,
            inv_sqrt_mass,
            bounds,
            calibration: ChebyshevCalibration {
                lambda_min: bounds.lambda_min,
                lambda_max: bounds.lambda_max * settings.safety,
                n_iter: 1,
                target_tol: settings.target_tol,
                residual: f64::NAN,
            },
            coeffs: Vec::new(),
            gamma: vec![1.0; p],
            normalization_applications: 0,
            counters: Counters::default(),
        };
        match settings.fixed_iterations {
            Some(n) => {
                if n == 0 {
                    return Err(Error::invalid("fixed_iterations", "must be at least 1"));
                }
                op.set_iterations(n);
                op.calibration.residual = op.trial_residual(&normal_vector(p, settings.seed ^ 0xc0ffee));
            }
            None => op.calibrate_chebyshev(settings.target_tol, settings.max_iter, settings.seed)?,
        }
        Ok(op)
    }

    pub fn model(&self) -> &CorrelationModel {
        &self.model
    }

    pub fn m(&self) -> u32 {
        self.model.m()
    }

    pub fn p(&self) -> usize {
        self.ops.p()
    }

    pub fn operators(&self) -> &AssembledOperators {
        &self.ops
    }

    pub fn eigen_bounds(&self) -> EigenBounds {
        self.bounds
    }

    pub fn calibration(&self) -> ChebyshevCalibration {
        self.calibration
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn set_gamma(&mut self, gamma: Vec<f64>) -> Result<()> {
        check_len(&gamma, self.p())?;
        if let Some(i) = gamma.iter().position(|g| !(*g > 0.0)) {
            return Err(Error::invalid("gamma", format!("entry {i} is not positive")));
        }
        self.gamma = gamma;
        Ok(())
    }

    pub fn normalization_applications(&self) -> usize {
        self.normalization_applications
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Freeze the iteration count, recomputing the recurrence coefficients.
    pub fn set_iterations(&mut self, n: usize) {
        let n = n.max(1);
        let (theta, delta) = self.theta_delta();
        let mut coeffs = Vec::with_capacity(n.saturating_sub(1));
        let mut rho = delta / theta;
        for _ in 0..n.saturating_sub(1) {
            let denom = 2.0 * theta - rho * delta;
            let rho_next = delta / denom;
            coeffs.push((rho_next * rho, 2.0 / denom));
            rho = rho_next;
        }
        self.coeffs = coeffs;
        self.calibration.n_iter = n;
    }

    fn theta_delta(&self) -> (f64, f64) {
        let (lo, hi) = (self.calibration.lambda_min, self.calibration.lambda_max);
        (0.5 * (hi + lo), 0.5 * (hi - lo))
    }

    fn tri(&self, t: &SymTridiagonal, v: &[f64], via: Option<Tri>) -> Vec<f64> {
        Counters::add(&self.counters.tridiagonal_products, 1);
        match via {
            Some(f) => f(t, v),
            None => t.matvec(v),
        }
    }

    fn diag(&self, d: &[f64], v: &mut [f64]) {
        Counters::add(&self.counters.diagonal_products, 1);
        for (x, s) in v.iter_mut().zip(d) {
            *x *= s;
        }
    }

    /// `x = Q b`, the fixed-count Chebyshev approximation of `S⁻¹ b`,
    /// starting from `x₀ = b`.
    fn ci_forward(&self, b: &[f64], via: Option<Tri>) -> Vec<f64> {
        let (theta, _) = self.theta_delta();
        let n = self.calibration.n_iter;
        Counters::add(&self.counters.ci_iterations, n);
        let mut x = b.to_vec();
        let sb = self.tri(&self.scaled, b, via);
        let mut r: Vec<f64> = b.iter().zip(&sb).map(|(u, v)| u - v).collect();
        let mut d: Vec<f64> = r.iter().map(|v| v / theta).collect();
        for k in 0..n {
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
            if k + 1 < n {
                let sd = self.tri(&self.scaled, &d, via);
                for (ri, si) in r.iter_mut().zip(&sd) {
                    *ri -= si;
                }
                let (c1, c2) = self.coeffs[k];
                for (di, ri) in d.iter_mut().zip(&r) {
                    *di = c1 * *di + c2 * ri;
                }
            }
        }
        x
    }

    /// `b̄ = Qᵀ y`, the statement-by-statement transpose of [`Self::ci_forward`].
    fn ci_adjoint(&self, y: &[f64], via: Option<Tri>) -> Vec<f64> {
        let (theta, _) = self.theta_delta();
        let n = self.calibration.n_iter;
        Counters::add(&self.counters.ci_iterations, n);
        let p = y.len();
        let xb = y.to_vec();
        let mut rb = vec![0.0; p];
        let mut db = vec![0.0; p];
        for k in (0..n).rev() {
            if k + 1 < n {
                let (c1, c2) = self.coeffs[k];
                for (r, d) in rb.iter_mut().zip(db.iter_mut()) {
                    *r += c2 * *d;
                    *d *= c1;
                }
                let sr = self.tri(&self.scaled, &rb, via);
                for (d, s) in db.iter_mut().zip(&sr) {
                    *d -= s;
                }
            }
            for (d, x) in db.iter_mut().zip(&xb) {
                *d += x;
            }
        }
        for (r, d) in rb.iter_mut().zip(&db) {
            *r += d / theta;
        }
        let sr = self.tri(&self.scaled, &rb, via);
        (0..p).map(|i| xb[i] + rb[i] - sr[i]).collect()
    }

    fn inverse_with(&self, v: &[f64], via: Option<Tri>) -> Result<Vec<f64>> {
        check_len(v, self.p())?;
        let inv_mass: Vec<f64> = self.ops.lumped_mass().iter().map(|m| 1.0 / m).collect();
        let mut out = v.to_vec();
        for _ in 0..self.m() {
            out = self.tri(&self.system, &out, via);
            self.diag(&inv_mass, &mut out);
        }
        self.diag(self.ops.lumped_mass(), &mut out);
        Ok(out)
    }

    /// `D⁻¹ v = M̄ [M̄⁻¹(M̄+A)]^m v`, exact and non-iterative.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.inverse_with(v, None)
    }

    fn sqrt_with(&self, eta: &[f64], via: Option<Tri>) -> Result<Vec<f64>> {
        check_len(eta, self.p())?;
        let mut x = eta.to_vec();
        for _ in 0..self.m() / 2 {
            x = self.ci_forward(&x, via);
        }
        self.diag(&self.inv_sqrt_mass, &mut x);
        Ok(x)
    }

    fn sqrt_transpose_with(&self, v: &[f64], via: Option<Tri>) -> Result<Vec<f64>> {
        check_len(v, self.p())?;
        let mut x = v.to_vec();
        self.diag(&self.inv_sqrt_mass, &mut x);
        for _ in 0..self.m() / 2 {
            x = self.ci_adjoint(&x, via);
        }
        Ok(x)
    }

    /// `M̄^{-1/2} Q^{m/2} η`, a square root of `D` up to truncation.
    pub fn apply_sqrt(&self, eta: &[f64]) -> Result<Vec<f64>> {
        self.sqrt_with(eta, None)
    }

    /// `(Qᵀ)^{m/2} M̄^{-1/2} v`, the exact transpose of [`Self::apply_sqrt`].
    pub fn apply_sqrt_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.sqrt_transpose_with(v, None)
    }

    /// `D v = M̄^{-1/2} Q^{m/2} (Qᵀ)^{m/2} M̄^{-1/2} v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        Counters::add(&self.counters.diffusion_applications, 1);
        let y = self.sqrt_transpose_with(v, None)?;
        self.sqrt_with(&y, None)
    }

    /// [`Self::apply`] with every tridiagonal product computed tile by tile.
    pub fn apply_partitioned(&self, v: &[f64], part: &MeshPartition) -> Result<Vec<f64>> {
        if part.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: part.p(),
            });
        }
        Counters::add(&self.counters.diffusion_applications, 1);
        let f = |t: &SymTridiagonal, x: &[f64]| part.matvec(t, x);
        let y = self.sqrt_transpose_with(v, Some(&f))?;
        self.sqrt_with(&y, Some(&f))
    }

    /// [`Self::apply_inverse`] with tile-by-tile tridiagonal products.
    pub fn apply_inverse_partitioned(&self, v: &[f64], part: &MeshPartition) -> Result<Vec<f64>> {
        if part.p() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: part.p(),
            });
        }
        let f = |t: &SymTridiagonal, x: &[f64]| part.matvec(t, x);
        self.inverse_with(v, Some(&f))
    }

    fn trial_residual(&self, b: &[f64]) -> f64 {
        let z = self.apply(b).expect("trial vector has the operator dimension");
        let back = self.apply_inverse(&z).expect("same dimension");
        let diff: Vec<f64> = back.iter().zip(b).map(|(u, v)| u - v).collect();
        norm2(&diff) / norm2(b)
    }

    /// Smallest iteration count for which a trial application of `D` to a
    /// seeded random vector has relative residual `‖D⁻¹(D̃b) − b‖/‖b‖`
    /// below `target_tol`. The count is then frozen.
    pub fn calibrate_chebyshev(&mut self, target_tol: f64, cap: usize, seed: u64) -> Result<()> {
        let b = normal_vector(self.p(), seed ^ 0xc0ffee);
        let mut last = f64::NAN;
        for n in 1..=cap.max(1) {
            self.set_iterations(n);
            last = self.trial_residual(&b);
            if last < target_tol {
                self.calibration.target_tol = target_tol;
                self.calibration.residual = last;
                debug!(
                    "Chebyshev calibration: n_iter = {n}, residual = {last:.3e}, bounds = [{}, {}]",
                    self.calibration.lambda_min, self.calibration.lambda_max
                );
                return Ok(());
            }
        }
        Err(Error::CalibrationFailed {
            cap,
            target_tol,
            lambda_min: self.calibration.lambda_min,
            lambda_max: self.calibration.lambda_max,
            residual: last,
        })
    }

    /// Number of `D` applications the spaced-impulse method needs.
    pub fn spaced_applications(&self, spacing_factor: f64) -> usize {
        let n = (spacing_factor * self.model.rho() / self.mean_spacing).ceil();
        (n.max(1.0) as usize).min(self.p())
    }

    /// `γᵢ = 1/√Dᵢᵢ` with `Dᵢᵢ` read from applications of `D` to impulse
    /// combs. Does not modify the operator.
    pub fn compute_normalization(&self, mode: Normalization) -> Result<NormalizationReport> {
        let p = self.p();
        let n_apps = match mode {
            Normalization::None => {
                return Ok(NormalizationReport {
                    gamma: vec![1.0; p],
                    applications: 0,
                    mode,
                })
            }
            Normalization::Exact => p,
            Normalization::Spaced { spacing_factor } => {
                if !(spacing_factor > 0.0) {
                    return Err(Error::invalid("spacing_factor", "must be positive"));
                }
                self.spaced_applications(spacing_factor)
            }
        };
        let combs: Vec<Vec<(usize, f64)>> = (0..n_apps)
            .into_par_iter()
            .map(|c| {
                let mut e = vec![0.0; p];
                for i in (c..p).step_by(n_apps) {
                    e[i] = 1.0;
                }
                let y = self.apply(&e)?;
                Ok((c..p).step_by(n_apps).map(|i| (i, y[i])).collect())
            })
            .collect::<Result<_>>()?;
        let mut diag = vec![0.0; p];
        for comb in combs {
            for (i, v) in comb {
                diag[i] = v;
            }
        }
        let mut gamma = Vec::with_capacity(p);
        for (index, &value) in diag.iter().enumerate() {
            if !(value > 0.0) {
                return Err(Error::NonPositiveDiagonal { index, value });
            }
            gamma.push(1.0 / value.sqrt());
        }
        Ok(NormalizationReport {
            gamma,
            applications: n_apps,
            mode,
        })
    }

    /// `Γ D Γ v`.
    pub fn apply_normalized(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(v, self.p())?;
        let w: Vec<f64> = v.iter().zip(&self.gamma).map(|(a, g)| a * g).collect();
        let mut out = self.apply(&w)?;
        for (o, g) in out.iter_mut().zip(&self.gamma) {
            *o *= g;
        }
        Ok(out)
    }

    /// Per-node operator rows and normalisation factors as CSV.
    pub fn write_diagnostics<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "node",
            "lumped_mass",
            "stiffness_lower",
            "stiffness_diag",
            "stiffness_upper",
            "gamma",
        ])?;
        let a = self.ops.stiffness();
        let p = self.p();
        for i in 0..p {
            let lower = if i > 0 { a.off[i - 1] } else { 0.0 };
            let upper = if i + 1 < p { a.off[i] } else { 0.0 };
            wr.write_record(&[
                i.to_string(),
                self.ops.lumped_mass()[i].to_string(),
                lower.to_string(),
                a.diag[i].to_string(),
                upper.to_string(),
                self.gamma[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
