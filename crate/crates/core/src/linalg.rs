//! Small dense-vector and tridiagonal kernels shared by the operators.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn rms(a: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (dot(a, a) / a.len() as f64).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric tridiagonal matrix stored as its diagonal and first off-diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiagonal {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i + 1`.
    pub off: Vec<f64>,
}

impl SymTridiagonal {
    pub fn zeros(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Row `i` of the product, reading neighbours from `v`.
    #[inline]
    pub fn row_dot(&self, i: usize, v: &[f64]) -> f64 {
        let mut s = self.diag[i] * v[i];
        if i > 0 {
            s += self.off[i - 1] * v[i - 1];
        }
        if i + 1 < self.diag.len() {
            s += self.off[i] * v[i + 1];
        }
        s
    }

    pub fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row_dot(i, v);
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.matvec_into(v, &mut out);
        out
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        let mut s = self.diag[i];
        if i > 0 {
            s += self.off[i - 1];
        }
        if i + 1 < self.diag.len() {
            s += self.off[i];
        }
        s
    }

    /// Largest Gershgorin disc edge, `max_i (a_ii + Σ_j |a_ij|)`.
    pub fn gershgorin_max(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let mut s = self.diag[i];
                if i > 0 {
                    s += self.off[i - 1].abs();
                }
                if i + 1 < self.len() {
                    s += self.off[i].abs();
                }
                s
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Solve `T x = b` by the Thomas algorithm. Intended for diagonally
    /// dominant systems, where no pivoting is needed.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut x = b.to_vec();
        if n == 0 {
            return x;
        }
        let mut denom = self.diag[0];
        if n > 1 {
            c[0] = self.off[0] / denom;
        }
        x[0] /= denom;
        for i in 1..n {
            denom = self.diag[i] - self.off[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = self.off[i] / denom;
            }
            x[i] = (x[i] - self.off[i - 1] * x[i - 1]) / denom;
        }
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        x
    }
}

/// Real circulant operator diagonalised by a cached FFT plan.
#[derive(Clone)]
pub struct CirculantFft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CirculantFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CirculantFft").field("n", &self.n).finish()
    }
}

impl CirculantFft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Unnormalised forward DFT, `X_k = Σ_j x_j e^{-2πi jk/n}`.
    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse DFT including the `1/n` factor.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        for z in spec.iter_mut() {
            *z *= scale;
        }
        spec
    }

    /// Multiply `x` by the circulant matrix whose eigenvalues are `symbol`.
    pub fn multiply(&self, symbol: &[f64], x: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(x);
        for (z, s) in spec.iter_mut().zip(symbol) {
            *z *= *s;
        }
        self.inverse(spec).into_iter().map(|z| z.re).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_product() {
        let t = SymTridiagonal {
            diag: vec![4.0, 5.0, 6.0, 3.0],
            off: vec![-1.0, -2.0, -0.5],
        };
        let b = [1.0, -2.0, 0.5, 3.0];
        let x = t.solve(&b);
        let back = t.matvec(&x);
        for (u, v) in back.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn circulant_multiply_identity_symbol() {
        let fft = CirculantFft::new(6);
        let x = [1.0, 2.0, 3.0, -1.0, 0.0, 0.5];
        let y = fft.multiply(&[1.0; 6], &x);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
