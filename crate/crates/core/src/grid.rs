//! Periodic spatial grids and the semiclassical scale.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Uniform periodic grid on `[-L, L)^dim` with `n` points per axis.
///
/// Flat storage is row-major: index `i0 * n + i1` in 2D, axis 0 is `x1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub dim: usize,
    pub n: usize,
    pub half_extent: f64,
}

impl SpatialGrid {
    pub fn new(dim: usize, n: usize, half_extent: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(LabError::InvalidInput(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(LabError::InvalidInput(format!("points per axis must be a power of two, got {n}")));
        }
        if !(half_extent > 0.0) || !half_extent.is_finite() {
            return Err(LabError::InvalidInput(format!("half extent must be positive, got {half_extent}")));
        }
        Ok(Self { dim, n, half_extent })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_extent + i as f64 * self.spacing()
    }

    /// Coordinates of a flat index; unused axes are zero.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coord(idx), 0.0]
        } else {
            [self.coord(idx / self.n), self.coord(idx % self.n)]
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }

    /// Signed integer wavenumber of FFT-ordered index `m`, in `[-n/2, n/2)`.
    pub fn signed_mode(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m < n / 2 {
            m
        } else {
            m - n
        }
    }

    /// Dual variable `pi k / L` for FFT-ordered index `m`.
    pub fn xi(&self, m: usize) -> f64 {
        std::f64::consts::PI * self.signed_mode(m) as f64 / self.half_extent
    }

    pub fn dual_spacing(&self) -> f64 {
        std::f64::consts::PI / self.half_extent
    }

    /// Largest representable |xi| per axis.
    pub fn xi_max(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }

    /// Dual point of a flat FFT-ordered index.
    pub fn dual_point(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.xi(idx), 0.0]
        } else {
            [self.xi(idx / self.n), self.xi(idx % self.n)]
        }
    }

    /// `|xi|^2` for every FFT-ordered index.
    pub fn xi_sq(&self) -> Vec<f64> {
        (0..self.len())
            .map(|idx| {
                let p = self.dual_point(idx);
                p[0] * p[0] + p[1] * p[1]
            })
            .collect()
    }

    /// Nearest grid index per axis for a coordinate (wrapped periodically).
    pub fn nearest_index(&self, x: f64) -> usize {
        let h = self.spacing();
        let k = ((x + self.half_extent) / h).round() as i64;
        k.rem_euclid(self.n as i64) as usize
    }
}

/// Scaled Planck constant, `0 < eps <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalScale(f64);

impl SemiclassicalScale {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(LabError::InvalidInput(format!("epsilon must lie in (0, 1], got {eps}")));
        }
        Ok(Self(eps))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_dual_grid() {
        let g = SpatialGrid::new(1, 8, 2.0).unwrap();
        assert_eq!(g.spacing(), 0.5);
        assert_eq!(g.coord(0), -2.0);
        let ks: Vec<i64> = (0..8).map(|m| g.signed_mode(m)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        assert!((g.xi(1) - std::f64::consts::PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SpatialGrid::new(3, 8, 1.0).is_err());
        assert!(SpatialGrid::new(1, 12, 1.0).is_err());
        assert!(SpatialGrid::new(1, 8, -1.0).is_err());
        assert!(SemiclassicalScale::new(0.0).is_err());
        assert!(SemiclassicalScale::new(1.5).is_err());
    }

    #[test]
    fn point_layout_is_row_major() {
        let g = SpatialGrid::new(2, 4, 1.0).unwrap();
        assert_eq!(g.point(1), [-1.0, -0.5]);
        assert_eq!(g.point(4), [-0.5, -1.0]);
    }
}
