mod common;

use std::f64::consts::PI;

use common::dense;
use nalgebra::{DMatrix, SymmetricEigen};
use obscorr::kernels::{
    aligned_kernel, ar_correlation, ar_spectrum, circulant_eigenvalues, kappa_to_length_scale, length_scale_to_kappa,
};
use obscorr::{ArKernel, CirculantSpectrum, CorrelationModel};
use proptest::prelude::*;

#[test]
fn correlation_at_length_scale() {
    // Measured under κ = ρ²/(2m−1); see the README for the convention.
    for m in 1..=10u32 {
        let c = ar_correlation(&CorrelationModel::new(m, 100.0).unwrap(), 100.0);
        println!("m = {m:2}: c(rho) = {c:.4}");
        assert!(c > 0.05 && c < 0.65, "m = {m}: {c}");
    }
}

#[test]
fn order_one_is_exponential() {
    // Continuum limit of one implicit step: exp(−r/√κ).
    let model = CorrelationModel::new(1, 50.0).unwrap();
    let k = ArKernel::new(&model);
    for r in [0.0, 10.0, 50.0, 120.0] {
        let expect = (-r / model.kappa().sqrt()).exp();
        assert!((k.correlation(r) - expect).abs() < 2e-3, "r = {r}");
    }
}

#[test]
fn order_two_is_linear_times_exponential() {
    let model = CorrelationModel::new(2, 90.0).unwrap();
    let k = ArKernel::new(&model);
    let l = model.kappa().sqrt();
    for r in [0.0, 30.0, 90.0, 200.0] {
        let expect = (1.0 + r / l) * (-r / l).exp();
        assert!((k.correlation(r) - expect).abs() < 2e-3, "r = {r}");
    }
}

#[test]
fn high_order_is_quasi_gaussian() {
    let model = CorrelationModel::new(10, 450.0).unwrap();
    let k = ArKernel::new(&model);
    let rs: Vec<f64> = (0..=400).map(|i| 5.0 * i as f64).collect();
    let cs: Vec<f64> = rs.iter().map(|&r| k.correlation(r)).collect();
    let sse = |l: f64| -> f64 {
        rs.iter()
            .zip(&cs)
            .map(|(r, c)| (c - (-r * r / (2.0 * l * l)).exp()).powi(2))
            .sum()
    };
    // Golden-section search for the least-squares Gaussian length.
    let (mut a, mut b) = (50.0, 1000.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if sse(x1) < sse(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let l = 0.5 * (a + b);
    let sup = rs
        .iter()
        .zip(&cs)
        .map(|(r, c)| (c - (-r * r / (2.0 * l * l)).exp()).abs())
        .fold(0.0, f64::max);
    assert!(sup < 0.02, "sup-norm {sup} at L = {l}");
}

#[test]
fn spectrum_inverts_to_correlation() {
    for (m, rho) in [(1u32, 80.0), (2, 125.0), (4, 200.0), (10, 250.0)] {
        let model = CorrelationModel::new(m, rho).unwrap();
        let k = ArKernel::new(&model);
        let h = k.spacing();
        // Trapezoid rule over one period of the (periodic) density is exact
        // up to aliasing of the tabulated kernel.
        let n = 1 << 15;
        let dk = 2.0 * PI / (h * n as f64);
        let dens: Vec<f64> = (0..n).map(|q| k.spectral_density(q as f64 * dk)).collect();
        let mut worst: f64 = 0.0;
        for j in (0..k.lag_values().len()).step_by(7) {
            let r = j as f64 * h;
            // Integrate over [−π/h, π/h] using symmetry of the density.
            let mut s = dens[0];
            for (q, d) in dens.iter().enumerate().take(n / 2).skip(1) {
                s += 2.0 * d * (q as f64 * dk * r).cos();
            }
            s += dens[n / 2] * (PI * r / h).cos();
            let c = s * dk / (2.0 * PI);
            worst = worst.max((c - k.correlation(r)).abs());
        }
        assert!(worst < 1e-6, "m = {m}: {worst}");
    }
}

#[test]
fn spectrum_shape() {
    let ks: Vec<f64> = (0..200).map(|i| i as f64 * 5e-4).collect();
    let s2 = ar_spectrum(&CorrelationModel::new(2, 100.0).unwrap(), &ks).unwrap();
    assert!(s2.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(s2[0], s2.iter().cloned().fold(f64::MIN, f64::max));
    let s_long = ar_spectrum(&CorrelationModel::new(2, 300.0).unwrap(), &ks).unwrap();
    // Longer length scale: energy leaves large wavenumbers sooner.
    let half = |s: &[f64]| s.iter().position(|&v| v < 0.5 * s[0]).unwrap();
    assert!(half(&s_long) < half(&s2));
}

#[test]
fn doubling_order_doubles_log_slope() {
    // At a fixed diffusion coefficient the log-density is exactly −m log(1 + 4s sin²).
    let kappa = 2000.0;
    let (k1, k2) = (0.2, 0.3);
    let slope = |m: u32| {
        let model = CorrelationModel::from_kappa(m, kappa).unwrap();
        let kern = ArKernel::with_spacing(&model, 1.0).unwrap();
        (kern.spectral_density(k2).ln() - kern.spectral_density(k1).ln()) / (k2 - k1)
    };
    for m in [1u32, 2, 5] {
        let ratio = slope(2 * m) / slope(m);
        assert!(ratio >= 2.0 - 1e-9, "m = {m}: {ratio}");
    }
}

#[test]
fn eigenvalues_match_dense_eigendecomposition() {
    for (m, rho, p, h) in [(2u32, 40.0, 64usize, 10.0), (10, 60.0, 48, 12.0), (1, 20.0, 32, 5.0)] {
        let model = CorrelationModel::new(m, rho).unwrap();
        let spec = circulant_eigenvalues(&model, p, h).unwrap();
        // Same auxiliary grid; periodic images summed entry by entry.
        let kern = aligned_kernel(&model, h).unwrap();
        let refine = (h / kern.spacing()).round() as usize;
        let entry = |d: usize| -> f64 {
            (-50i64..=50)
                .map(|n| kern.at_lag((d as i64 + n * p as i64).unsigned_abs() as usize * refine))
                .sum()
        };
        let c0 = entry(0);
        let c = DMatrix::from_fn(p, p, |i, j| entry((i as isize - j as isize).unsigned_abs()) / c0);
        let mut dense_eigs: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
        let mut ours = spec.eigenvalues().to_vec();
        dense_eigs.sort_by(f64::total_cmp);
        ours.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&dense_eigs) {
            assert!((a - b.max(0.0)).abs() < 1e-8, "m = {m}: {a} vs {b}");
        }
    }
}

#[test]
fn eigenvalues_recover_first_row() {
    let model = CorrelationModel::new(4, 150.0).unwrap();
    let spec = circulant_eigenvalues(&model, 200, 20.0).unwrap();
    let back = CirculantSpectrum::from_eigenvalues(20.0, spec.eigenvalues().to_vec()).unwrap();
    for (a, b) in back.first_row().iter().zip(spec.first_row()) {
        assert!((a - b).abs() < 1e-10);
    }
    // The circulant matrix applied to an impulse is the first row.
    let fft = obscorr::linalg::CirculantFft::new(200);
    let mat = dense(200, |v| fft.multiply(spec.eigenvalues(), v));
    assert!((mat[(0, 0)] - 1.0).abs() < 1e-10);
}

#[test]
fn smallest_scale_eigenvalue_is_negligible() {
    let spec = circulant_eigenvalues(&CorrelationModel::new(10, 250.0).unwrap(), 1600, 25.0).unwrap();
    assert!(spec.eigenvalues()[800] <= 1e-12);
    assert!((spec.mean() - 1.0).abs() < 1e-10);
}

proptest! {
    #[test]
    fn kappa_round_trip(rho in 1e-3f64..1e4, m in 1u32..20) {
        let kappa = length_scale_to_kappa(rho, m).unwrap();
        let back = kappa_to_length_scale(kappa, m).unwrap();
        prop_assert!((back - rho).abs() <= 2.0 * f64::EPSILON * rho);
    }

    #[test]
    fn correlation_is_positive_and_decreasing(m in 1u32..=10, rho in 10.0f64..500.0) {
        let k = ArKernel::new(&CorrelationModel::new(m, rho).unwrap());
        prop_assert_eq!(k.correlation(0.0), 1.0);
        let mut prev = 1.0;
        for i in 1..200 {
            let c = k.correlation(0.173 * rho * i as f64);
            prop_assert!(c > 0.0 && c < prev);
            prev = c;
        }
    }

    #[test]
    fn circulant_spectra_are_valid(m in 1u32..=10, rho in 20.0f64..120.0, p in 72usize..256) {
        let spec = circulant_eigenvalues(&CorrelationModel::new(m, rho).unwrap(), p, 10.0).unwrap();
        prop_assert!(spec.eigenvalues().iter().all(|&l| l >= 0.0));
        prop_assert!((spec.mean() - 1.0).abs() < 1e-10);
        for k in 1..p {
            prop_assert_eq!(spec.eigenvalues()[k], spec.eigenvalues()[p - k]);
        }
    }
}
