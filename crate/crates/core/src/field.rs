//! Complex wave functions sampled on a periodic grid.

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};
use crate::grid::SpatialGrid;

/// Samples of a scalar or two-component wave function.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    pub grid: SpatialGrid,
    pub comps: Vec<Vec<C64>>,
}

impl WaveField {
    pub fn zeros(grid: SpatialGrid, ncomp: usize) -> Self {
        Self { grid, comps: vec![vec![C64::new(0.0, 0.0); grid.len()]; ncomp] }
    }

    /// Scalar field from a function of the point coordinates.
    pub fn from_fn(grid: SpatialGrid, f: impl Fn([f64; 2]) -> C64) -> Self {
        let vals = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self { grid, comps: vec![vals] }
    }

    pub fn from_components(grid: SpatialGrid, comps: Vec<Vec<C64>>) -> Result<Self> {
        if comps.is_empty() || comps.len() > 2 {
            return Err(LabError::InvalidInput(format!("1 or 2 components expected, got {}", comps.len())));
        }
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(LabError::InvalidInput("component length does not match grid".into()));
        }
        Ok(Self { grid, comps })
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Pointwise `sum_c |psi_c|^2`.
    pub fn density(&self) -> Vec<f64> {
        let mut n = vec![0.0; self.grid.len()];
        for c in &self.comps {
            for (a, v) in n.iter_mut().zip(c) {
                *a += v.norm_sqr();
            }
        }
        n
    }

    /// Squared L2 norm by grid quadrature.
    pub fn mass(&self) -> f64 {
        let s: f64 = self.comps.iter().flatten().map(|v| v.norm_sqr()).sum();
        s * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.mass().sqrt()
    }

    /// L2 inner product `<self, other>` (antilinear in `self`).
    pub fn inner(&self, other: &WaveField) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                s += x.conj() * y;
            }
        }
        s * self.grid.cell_volume()
    }

    /// L2 norm of `self - other`.
    pub fn distance(&self, other: &WaveField) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                s += (x - y).norm_sqr();
            }
        }
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn scaled(&self, c: C64) -> WaveField {
        let mut out = self.clone();
        out.comps.iter_mut().flatten().for_each(|v| *v *= c);
        out
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: C64, other: &WaveField) -> WaveField {
        let mut out = self.clone();
        for (a, b) in out.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        out
    }

    pub fn conj(&self) -> WaveField {
        let mut out = self.clone();
        out.comps.iter_mut().flatten().for_each(|v| *v = v.conj());
        out
    }

    /// `x -> -x` on the periodic grid (index `j -> -j` around `x = 0`).
    pub fn reflected(&self) -> WaveField {
        let g = self.grid;
        let n = g.n;
        let mirror = |i: usize| (n - i) % n;
        let mut out = self.clone();
        for (c, src) in out.comps.iter_mut().zip(&self.comps) {
            for idx in 0..g.len() {
                let j = if g.dim == 1 { mirror(idx) } else { mirror(idx / n) * n + mirror(idx % n) };
                c[idx] = src[j];
            }
        }
        out
    }

    /// Multiply by a real function of position (e.g. a cutoff).
    pub fn multiplied(&self, f: impl Fn([f64; 2]) -> f64) -> WaveField {
        let mut out = self.clone();
        let w: Vec<f64> = (0..self.grid.len()).map(|i| f(self.grid.point(i))).collect();
        for c in out.comps.iter_mut() {
            for (v, wi) in c.iter_mut().zip(&w) {
                *v *= wi;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_matches_quadrature() {
        let g = SpatialGrid::new(1, 256, 10.0).unwrap();
        let f = WaveField::from_fn(g, |p| C64::new((-p[0] * p[0]).exp(), 0.0));
        let exact = (std::f64::consts::PI / 2.0).sqrt();
        assert!((f.mass() - exact).abs() < 1e-12);
    }

    #[test]
    fn reflection_is_involution_and_flips_sign() {
        let g = SpatialGrid::new(2, 8, 1.0).unwrap();
        let f = WaveField::from_fn(g, |p| C64::new(p[0] + 2.0 * p[1], p[0] * p[1]));
        let r = f.reflected();
        assert_eq!(r.reflected(), f);
        let idx = 3 * 8 + 5;
        let p = g.point(idx);
        let expect = C64::new(-p[0] - 2.0 * p[1], p[0] * p[1]);
        assert!((r.comps[0][idx] - expect).norm() < 1e-14);
    }
}
