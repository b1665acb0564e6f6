//! Unnormalized 1D/2D FFTs on flat square buffers.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::grid::SpatialGrid;

/// Cached forward/inverse plans for one grid shape.
#[derive(Clone)]
pub struct FftEngine {
    n: usize,
    dim: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftEngine {
    pub fn new(grid: &SpatialGrid) -> Self {
        Self::with_shape(grid.n, grid.dim)
    }

    pub fn with_shape(n: usize, dim: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Self { n, dim, fwd, inv }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// In-place `sum_j f_j e^{-2 pi i jk/n}` along every axis.
    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, true);
    }

    /// In-place `sum_k F_k e^{+2 pi i jk/n}` along every axis (no 1/n factor).
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, false);
    }

    /// Inverse followed by division by the point count.
    pub fn inverse_normalized(&self, data: &mut [C64]) {
        self.run(data, false);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, data: &mut [C64], forward: bool) {
        assert_eq!(data.len(), self.len(), "buffer does not match FFT shape");
        let plan = if forward { &self.fwd } else { &self.inv };
        plan.process(data);
        if self.dim == 2 {
            transpose_square(data, self.n);
            plan.process(data);
            transpose_square(data, self.n);
        }
    }
}

fn transpose_square(data: &mut [C64], n: usize) {
    const B: usize = 32;
    for ib in (0..n).step_by(B) {
        for jb in (ib..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                let j0 = if ib == jb { i + 1 } else { jb };
                for j in j0..(jb + B).min(n) {
                    data.swap(i * n + j, j * n + i);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[C64]) -> Vec<C64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                (0..n)
                    .map(|j| x[j] * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * (j * k) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_1d() {
        let x: Vec<C64> = (0..16).map(|j| C64::new((j as f64).sin(), (j as f64 * 0.3).cos())).collect();
        let mut y = x.clone();
        FftEngine::with_shape(16, 1).forward(&mut y);
        let z = naive_dft(&x);
        for (a, b) in y.iter().zip(&z) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn two_dimensional_is_separable() {
        let n = 8;
        let row: Vec<C64> = (0..n).map(|j| C64::new(j as f64, 1.0)).collect();
        let col: Vec<C64> = (0..n).map(|j| C64::new(1.0, -(j as f64))).collect();
        let mut data: Vec<C64> = (0..n * n).map(|idx| col[idx / n] * row[idx % n]).collect();
        FftEngine::with_shape(n, 2).forward(&mut data);
        let (fr, fc) = (naive_dft(&row), naive_dft(&col));
        for idx in 0..n * n {
            assert!((data[idx] - fc[idx / n] * fr[idx % n]).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip() {
        let e = FftEngine::with_shape(32, 2);
        let x: Vec<C64> = (0..32 * 32).map(|j| C64::new((j as f64 * 0.17).sin(), 0.0)).collect();
        let mut y = x.clone();
        e.forward(&mut y);
        e.inverse_normalized(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
