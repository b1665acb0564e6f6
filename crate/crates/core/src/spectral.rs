//! Continuous-normalized Fourier transform on the periodic grid.
//!
//! `F f(xi) = (2 pi)^{-d/2} \int e^{-i x.xi} f(x) dx`, sampled at `xi_k = pi k / L`.

use num_complex::Complex64 as C64;

use crate::fft::FftEngine;
use crate::field::WaveField;
use crate::grid::SpatialGrid;

/// Fourier coefficients in FFT order (`m -> k = m` or `m - n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: SpatialGrid,
    pub comps: Vec<Vec<C64>>,
}

impl SpectralField {
    /// Squared L2 norm over the dual grid.
    pub fn mass(&self) -> f64 {
        let s: f64 = self.comps.iter().flatten().map(|v| v.norm_sqr()).sum();
        s * self.grid.dual_spacing().powi(self.grid.dim as i32)
    }
}

fn parity_sign(grid: &SpatialGrid, idx: usize) -> f64 {
    // e^{-i x_0 xi_k} with x_0 = -L gives (-1)^k per axis
    let k: i64 = if grid.dim == 1 {
        grid.signed_mode(idx)
    } else {
        grid.signed_mode(idx / grid.n) + grid.signed_mode(idx % grid.n)
    };
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn forward_spectral(field: &WaveField) -> SpectralField {
    let g = field.grid;
    let engine = FftEngine::new(&g);
    let scale = g.cell_volume() / (2.0 * std::f64::consts::PI).powf(g.dim as f64 / 2.0);
    let comps = field
        .comps
        .iter()
        .map(|c| {
            let mut buf = c.clone();
            engine.forward(&mut buf);
            for (idx, v) in buf.iter_mut().enumerate() {
                *v *= scale * parity_sign(&g, idx);
            }
            buf
        })
        .collect();
    SpectralField { grid: g, comps }
}

pub fn inverse_spectral(spec: &SpectralField) -> WaveField {
    let g = spec.grid;
    let engine = FftEngine::new(&g);
    let scale = g.dual_spacing().powi(g.dim as i32) / (2.0 * std::f64::consts::PI).powf(g.dim as f64 / 2.0);
    let comps = spec
        .comps
        .iter()
        .map(|c| {
            let mut buf: Vec<C64> =
                c.iter().enumerate().map(|(idx, v)| v * parity_sign(&g, idx)).collect();
            engine.inverse(&mut buf);
            buf.iter_mut().for_each(|v| *v *= scale);
            buf
        })
        .collect();
    WaveField { grid: g, comps }
}
