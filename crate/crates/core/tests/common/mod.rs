#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use obscorr::TrackMesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Irregular mesh: spacings uniform in `[0.4 h, 1.6 h]`.
pub fn random_mesh(p: usize, h: f64, seed: u64) -> TrackMesh {
    let mut r = rng(seed);
    let mut x = 0.0;
    let mut pos = Vec::with_capacity(p);
    for _ in 0..p {
        pos.push(x);
        x += h * r.random_range(0.4..1.6);
    }
    TrackMesh::from_positions(pos).unwrap()
}

/// Dense matrix of a linear map given by its action on vectors.
pub fn dense<F: Fn(&[f64]) -> Vec<f64>>(n: usize, f: F) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = f(&e);
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    m
}

pub fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Hat function `φ_i` of a P1 mesh evaluated at `x`.
fn hat(pos: &[f64], i: usize, x: f64) -> f64 {
    if i > 0 && x >= pos[i - 1] && x <= pos[i] {
        return (x - pos[i - 1]) / (pos[i] - pos[i - 1]);
    }
    if i + 1 < pos.len() && x >= pos[i] && x <= pos[i + 1] {
        return (pos[i + 1] - x) / (pos[i + 1] - pos[i]);
    }
    0.0
}

/// Mass and stiffness matrices by 7-point Gauss-Legendre quadrature of the
/// defining integrals on every element.
pub fn quadrature_fem(mesh: &TrackMesh, kappa: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    const X: [f64; 7] = [
        -0.949_107_912_342_758_5,
        -0.741_531_185_599_394_4,
        -0.405_845_151_377_397_2,
        0.0,
        0.405_845_151_377_397_2,
        0.741_531_185_599_394_4,
        0.949_107_912_342_758_5,
    ];
    const W: [f64; 7] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
        0.381_830_050_505_118_9,
        0.279_705_391_489_276_7,
        0.129_484_966_168_869_7,
    ];
    let pos = mesh.positions();
    let p = pos.len();
    let mut m = DMatrix::zeros(p, p);
    let mut a = DMatrix::zeros(p, p);
    for e in 0..p - 1 {
        let (lo, hi) = (pos[e], pos[e + 1]);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (xq, wq) in X.iter().zip(W) {
            let x = mid + half * xq;
            let w = wq * half;
            for i in 0..p {
                let fi = hat(pos, i, x);
                // Derivatives are taken on the current element only.
                let di = elem_deriv(pos, i, e);
                for j in 0..p {
                    let fj = hat(pos, j, x);
                    let dj = elem_deriv(pos, j, e);
                    m[(i, j)] += w * fi * fj;
                    a[(i, j)] += w * kappa * di * dj;
                }
            }
        }
    }
    (m, a)
}

fn elem_deriv(pos: &[f64], i: usize, e: usize) -> f64 {
    let h = pos[e + 1] - pos[e];
    if i == e {
        -1.0 / h
    } else if i == e + 1 {
        1.0 / h
    } else {
        0.0
    }
}

/// Entries of the upper triangle within three standard errors of a
/// Gaussian sample covariance.
pub fn count_within_3se(cov: &DMatrix<f64>, truth: &DMatrix<f64>, n: usize) -> (usize, usize) {
    let p = truth.nrows();
    let mut within = 0;
    let mut total = 0;
    for i in 0..p {
        for j in i..p {
            let se = ((truth[(i, i)] * truth[(j, j)] + truth[(i, j)].powi(2)) / n as f64).sqrt();
            total += 1;
            if (cov[(i, j)] - truth[(i, j)]).abs() <= 3.0 * se {
                within += 1;
            }
        }
    }
    (within, total)
}

/// Sample covariance of `f(η)` over `n` standard normal draws of length `q`.
pub fn sample_covariance<F: Fn(&[f64]) -> Vec<f64>>(f: F, q: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    let x0 = f(&vec![0.0; q]);
    let mut acc = DMatrix::<f64>::zeros(x0.len(), x0.len());
    for _ in 0..n {
        let x = DVector::from_vec(f(&normal_vec(&mut g, q)));
        acc.ger(1.0, &x, &x, 1.0);
    }
    acc / n as f64
}
