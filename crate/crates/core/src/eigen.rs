//! Spectral data of the crossing potential `V(x) = [[x1, x2], [x2, -x1]]`.

use crate::error::{LabError, Result};

/// Below this radius the eigenframe is undefined.
pub const DEGENERATE_TOL: f64 = 1e-12;

pub type Mat2 = [[f64; 2]; 2];

/// Eigen-decomposition of the crossing potential at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenframe {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub proj_plus: Mat2,
    pub proj_minus: Mat2,
    pub e_plus: [f64; 2],
    pub e_minus: [f64; 2],
}

pub fn crossing_matrix(x: [f64; 2]) -> Mat2 {
    [[x[0], x[1]], [x[1], -x[0]]]
}

/// Projectors `(I +- V/|x|)/2`; zero matrices at the origin.
pub fn projectors(x: [f64; 2]) -> (Mat2, Mat2) {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    if r < DEGENERATE_TOL {
        return ([[0.0; 2]; 2], [[0.0; 2]; 2]);
    }
    let (c, s) = (x[0] / r, x[1] / r);
    let p = [[0.5 * (1.0 + c), 0.5 * s], [0.5 * s, 0.5 * (1.0 - c)]];
    let m = [[0.5 * (1.0 - c), -0.5 * s], [-0.5 * s, 0.5 * (1.0 + c)]];
    (p, m)
}

/// Eigenvectors with the branch cut on the ray `theta = pi` (negative `x1` axis).
pub fn eigenvectors(x: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let th = x[1].atan2(x[0]);
    let (s, c) = (0.5 * th).sin_cos();
    ([c, s], [-s, c])
}

pub fn eigenframe_at(x: [f64; 2]) -> Result<Eigenframe> {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    if r < DEGENERATE_TOL {
        return Err(LabError::DegeneratePoint(r));
    }
    let (proj_plus, proj_minus) = projectors(x);
    let (e_plus, e_minus) = eigenvectors(x);
    Ok(Eigenframe { lambda_plus: r, lambda_minus: -r, proj_plus, proj_minus, e_plus, e_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mul(a: Mat2, b: Mat2) -> Mat2 {
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    }

    #[test]
    fn axis_points() {
        let f = eigenframe_at([1.0, 0.0]).unwrap();
        assert_eq!((f.lambda_plus, f.lambda_minus), (1.0, -1.0));
        assert!((f.e_plus[0] - 1.0).abs() < 1e-15 && f.e_plus[1].abs() < 1e-15);
        assert!(f.e_minus[0].abs() < 1e-15 && (f.e_minus[1] - 1.0).abs() < 1e-15);
        let f = eigenframe_at([0.0, 1.0]).unwrap();
        let c = std::f64::consts::FRAC_PI_4.cos();
        assert!((f.e_plus[0] - c).abs() < 1e-15 && (f.e_plus[1] - c).abs() < 1e-15);
    }

    #[test]
    fn origin_is_degenerate() {
        assert!(matches!(eigenframe_at([0.0, 0.0]), Err(LabError::DegeneratePoint(_))));
    }

    #[test]
    fn eigen_equation_at_many_points() {
        // deterministic scatter of 1000 points in [-3, 3]^2
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let x = [3.0 * (0.7548776662 * k as f64).fract() * 2.0 - 3.0, 3.0 * (0.5698402910 * k as f64).fract() * 2.0 - 3.0];
            if (x[0] * x[0] + x[1] * x[1]).sqrt() < 1e-6 {
                continue;
            }
            let f = eigenframe_at(x).unwrap();
            let v = crossing_matrix(x);
            for (e, lam) in [(f.e_plus, f.lambda_plus), (f.e_minus, f.lambda_minus)] {
                for i in 0..2 {
                    worst = worst.max((v[i][0] * e[0] + v[i][1] * e[1] - lam * e[i]).abs());
                }
            }
        }
        assert!(worst <= 1e-12, "{worst:e}");
    }

    proptest! {
        #[test]
        fn projector_algebra(r in 1e-6f64..1e3, th in -3.14159f64..3.14159) {
            let x = [r * th.cos(), r * th.sin()];
            let (p, m) = projectors(x);
            let pp = mul(p, p);
            let mm = mul(m, m);
            let pm = mul(p, m);
            let v = crossing_matrix(x);
            for i in 0..2 {
                for j in 0..2 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((pp[i][j] - p[i][j]).abs() <= 1e-14);
                    prop_assert!((mm[i][j] - m[i][j]).abs() <= 1e-14);
                    prop_assert!(pm[i][j].abs() <= 1e-14);
                    prop_assert!((p[i][j] + m[i][j] - id).abs() <= 1e-14);
                    prop_assert!((r * (p[i][j] - m[i][j]) - v[i][j]).abs() <= 1e-12 * r.max(1.0));
                }
            }
            let (ep, em) = eigenvectors(x);
            prop_assert!((ep[0].hypot(ep[1]) - 1.0).abs() < 1e-15);
            prop_assert!((em[0].hypot(em[1]) - 1.0).abs() < 1e-15);
        }
    }
}
