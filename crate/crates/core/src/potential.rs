//! Potentials used by the propagators and ray solvers.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::SpatialGrid;

/// Closed-form real potentials with derivatives (1D uses `x[0]` only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarShape {
    Zero,
    Constant { value: f64 },
    /// `omega^2 |x|^2 / 2`
    Harmonic { omega: f64 },
    /// `a2 |x|^2 / 2 + a4 |x|^4`
    Quartic { a2: f64, a4: f64 },
    /// `height * exp(-|x|^2 / width^2)`
    GaussianBarrier { height: f64, width: f64 },
}

impl ScalarShape {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let r2 = x[0] * x[0] + x[1] * x[1];
        match *self {
            ScalarShape::Zero => 0.0,
            ScalarShape::Constant { value } => value,
            ScalarShape::Harmonic { omega } => 0.5 * omega * omega * r2,
            ScalarShape::Quartic { a2, a4 } => 0.5 * a2 * r2 + a4 * r2 * r2,
            ScalarShape::GaussianBarrier { height, width } => height * (-r2 / (width * width)).exp(),
        }
    }

    /// `dV/d|x|^2 * 2`, i.e. the factor `g` with `grad V = g x`.
    fn radial_factor(&self, r2: f64) -> f64 {
        match *self {
            ScalarShape::Zero | ScalarShape::Constant { .. } => 0.0,
            ScalarShape::Harmonic { omega } => omega * omega,
            ScalarShape::Quartic { a2, a4 } => a2 + 4.0 * a4 * r2,
            ScalarShape::GaussianBarrier { height, width } => {
                -2.0 * height / (width * width) * (-r2 / (width * width)).exp()
            }
        }
    }

    /// Derivative of `radial_factor` with respect to `r2`.
    fn radial_factor_prime(&self, r2: f64) -> f64 {
        match *self {
            ScalarShape::Zero | ScalarShape::Constant { .. } | ScalarShape::Harmonic { .. } => 0.0,
            ScalarShape::Quartic { a4, .. } => 4.0 * a4,
            ScalarShape::GaussianBarrier { height, width } => {
                let w2 = width * width;
                2.0 * height / (w2 * w2) * (-r2 / w2).exp()
            }
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.radial_factor(x[0] * x[0] + x[1] * x[1]);
        [g * x[0], g * x[1]]
    }

    pub fn hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let g = self.radial_factor(r2);
        let gp = self.radial_factor_prime(r2);
        [
            [g + 2.0 * gp * x[0] * x[0], 2.0 * gp * x[0] * x[1]],
            [2.0 * gp * x[0] * x[1], g + 2.0 * gp * x[1] * x[1]],
        ]
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        (0..grid.len()).map(|i| self.value(grid.point(i))).collect()
    }
}

pub type TimeDependentFn = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;

/// Potential term of a Hamiltonian.
#[derive(Clone)]
pub enum PotentialSpec {
    /// Real samples on the propagation grid.
    Sampled(Vec<f64>),
    /// Closed-form real potential.
    Scalar(ScalarShape),
    /// `V(t, x)`, evaluated at substep midpoints.
    TimeDependent(TimeDependentFn),
    /// The fixed crossing matrix `[[x1, x2], [x2, -x1]]` acting on two components.
    MatrixCrossing,
    /// Even short-range 1D profile `U(x)`.
    EvenShortRange(ScalarShape),
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PotentialSpec::Sampled(v) => write!(f, "Sampled({} values)", v.len()),
            PotentialSpec::Scalar(s) => write!(f, "Scalar({s:?})"),
            PotentialSpec::TimeDependent(_) => write!(f, "TimeDependent(<fn>)"),
            PotentialSpec::MatrixCrossing => write!(f, "MatrixCrossing"),
            PotentialSpec::EvenShortRange(s) => write!(f, "EvenShortRange({s:?})"),
        }
    }
}

impl PotentialSpec {
    pub fn zero() -> Self {
        PotentialSpec::Scalar(ScalarShape::Zero)
    }

    pub fn is_matrix(&self) -> bool {
        matches!(self, PotentialSpec::MatrixCrossing)
    }

    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        match self {
            PotentialSpec::Sampled(v) => {
                if v.len() != grid.len() {
                    return Err(LabError::InvalidInput("sampled potential does not match grid".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(LabError::InvalidInput("sampled potential must be finite and real".into()));
                }
                Ok(())
            }
            PotentialSpec::MatrixCrossing if grid.dim != 2 => {
                Err(LabError::InvalidInput("matrix crossing potential needs a 2D grid".into()))
            }
            PotentialSpec::EvenShortRange(_) if grid.dim != 1 => {
                Err(LabError::InvalidInput("short-range scattering potential is 1D".into()))
            }
            _ => Ok(()),
        }
    }

    /// Scalar samples at time `t` (None for the matrix case).
    pub fn scalar_samples(&self, grid: &SpatialGrid, t: f64) -> Option<Vec<f64>> {
        match self {
            PotentialSpec::Sampled(v) => Some(v.clone()),
            PotentialSpec::Scalar(s) | PotentialSpec::EvenShortRange(s) => Some(s.sample(grid)),
            PotentialSpec::TimeDependent(f) => Some((0..grid.len()).map(|i| f(t, grid.point(i))).collect()),
            PotentialSpec::MatrixCrossing => None,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, PotentialSpec::TimeDependent(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let shapes = [
            ScalarShape::Harmonic { omega: 1.3 },
            ScalarShape::Quartic { a2: 1.0, a4: 0.1 },
            ScalarShape::GaussianBarrier { height: 2.0, width: 1.0 },
        ];
        let x = [0.4, -0.7];
        let h = 1e-5;
        for s in shapes {
            let g = s.gradient(x);
            let hs = s.hessian(x);
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (s.value(xp) - s.value(xm)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "{s:?}");
                let gp = s.gradient(xp);
                let gm = s.gradient(xm);
                for j in 0..2 {
                    assert!(((gp[j] - gm[j]) / (2.0 * h) - hs[j][k]).abs() < 1e-7, "{s:?}");
                }
            }
        }
    }
}
