//! Constructors for WKB data and concentrated wave packets.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::eigen::{eigenvectors, DEGENERATE_TOL};
use crate::error::{LabError, Result};
use crate::field::WaveField;
use crate::grid::SpatialGrid;

/// Profile `Phi` of a concentrated packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// `exp(-|y|^2 / (2 w^2))`
    Gaussian { width: f64 },
}

impl Profile {
    pub fn value(&self, y: [f64; 2], dim: usize) -> f64 {
        let r2 = if dim == 1 { y[0] * y[0] } else { y[0] * y[0] + y[1] * y[1] };
        match *self {
            Profile::Gaussian { width } => (-0.5 * r2 / (width * width)).exp(),
        }
    }

    /// Squared L2 norm in dimension `dim`.
    pub fn mass(&self, dim: usize) -> f64 {
        match *self {
            Profile::Gaussian { width } => (std::f64::consts::PI * width * width).powf(dim as f64 / 2.0),
        }
    }

    /// Fourier transform with the `(2 pi)^{-d/2}` normalization.
    pub fn fourier(&self, zeta: [f64; 2], dim: usize) -> f64 {
        let r2 = if dim == 1 { zeta[0] * zeta[0] } else { zeta[0] * zeta[0] + zeta[1] * zeta[1] };
        match *self {
            Profile::Gaussian { width } => width.powi(dim as i32) * (-0.5 * width * width * r2).exp(),
        }
    }

    /// Characteristic width used by the resolution check.
    pub fn width(&self) -> f64 {
        match *self {
            Profile::Gaussian { width } => width,
        }
    }
}

/// Spinor attached to a packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    /// Scalar field.
    None,
    /// `E+(x)`, cut on the negative `x1` axis.
    Plus,
    /// `E-(x)`, cut on the negative `x1` axis.
    Minus,
    /// `E+(x) e^{i theta/2}`, continuous across the cut.
    TwistedPlus,
    /// `E-(x) e^{i theta/2}`, continuous across the cut.
    TwistedMinus,
}

/// Parameters of `eps^{-beta d/2} Phi((x - x0)/eps^beta) exp(i r0 |x - eps^alpha w0|^2 / 2 eps) E(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketParams {
    pub beta: f64,
    pub center: [f64; 2],
    pub profile: Profile,
    pub r0: f64,
    pub alpha: f64,
    pub omega0: [f64; 2],
    pub polarization: Polarization,
    /// Overall complex factor `amplitude * e^{i phase}`.
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

impl PacketParams {
    /// Gaussian packet with no offset, no chirp, no polarization.
    pub fn coherent(beta: f64, center: [f64; 2], width: f64) -> Self {
        Self {
            beta,
            center,
            profile: Profile::Gaussian { width },
            r0: 0.0,
            alpha: 0.5,
            omega0: [0.0, 0.0],
            polarization: Polarization::None,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    /// `eta0 = -r0 (x0 ^ w0)`.
    pub fn eta0(&self) -> f64 {
        -self.r0 * (self.center[0] * self.omega0[1] - self.center[1] * self.omega0[0])
    }

    /// Mass `amplitude^2 ||Phi||^2`.
    pub fn mass(&self, dim: usize) -> f64 {
        self.amplitude * self.amplitude * self.profile.mass(dim)
    }
}

/// Field plus non-fatal diagnostics from a constructor.
#[derive(Debug, Clone)]
pub struct Constructed {
    pub field: WaveField,
    pub warnings: Vec<String>,
}

/// Samples `a0(x) e^{i phi0(x)/eps}`; warns when `h max|grad phi0| / eps > pi/2`.
pub fn build_wkb_data(
    grid: &SpatialGrid,
    eps: f64,
    a0: impl Fn([f64; 2]) -> C64,
    phi0: impl Fn([f64; 2]) -> f64,
) -> Result<Constructed> {
    if !(eps > 0.0) {
        return Err(LabError::InvalidInput("epsilon must be positive".into()));
    }
    let h = grid.spacing();
    let amps: Vec<C64> = (0..grid.len()).map(|i| a0(grid.point(i))).collect();
    let amax = amps.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let mut grad_max: f64 = 0.0;
    let mut vals = Vec::with_capacity(grid.len());
    for (i, a) in amps.iter().enumerate() {
        let p = grid.point(i);
        let ph = phi0(p);
        if a.norm() > 1e-8 * amax {
            // centered differences of the continuous phase
            let d = 1e-6;
            for k in 0..grid.dim {
                let mut pp = p;
                let mut pm = p;
                pp[k] += d;
                pm[k] -= d;
                grad_max = grad_max.max(((phi0(pp) - phi0(pm)) / (2.0 * d)).abs());
            }
        }
        vals.push(a * C64::from_polar(1.0, ph / eps));
    }
    let mut warnings = Vec::new();
    let ratio = h * grad_max / eps;
    if ratio > std::f64::consts::FRAC_PI_2 {
        warnings.push(format!(
            "phase under-resolved: spacing*max|grad phi0|/eps = {ratio:.3} exceeds pi/2"
        ));
    }
    Ok(Constructed { field: WaveField { grid: *grid, comps: vec![vals] }, warnings })
}

pub fn build_wave_packet(grid: &SpatialGrid, eps: f64, p: &PacketParams) -> Result<WaveField> {
    if !(p.beta > 0.0 && p.beta < 1.0) {
        return Err(LabError::InvalidInput(format!("beta must lie in (0,1), got {}", p.beta)));
    }
    if !(p.alpha > 0.0 && p.alpha <= 0.5) {
        return Err(LabError::InvalidInput(format!("alpha must lie in (0,1/2], got {}", p.alpha)));
    }
    if !(eps > 0.0) {
        return Err(LabError::InvalidInput("epsilon must be positive".into()));
    }
    let d = grid.dim;
    let scale = eps.powf(p.beta);
    let width = scale * p.profile.width();
    if width < 4.0 * grid.spacing() {
        return Err(LabError::UnderResolved(format!(
            "packet width {width:.3e} is below 4 grid spacings ({:.3e})",
            4.0 * grid.spacing()
        )));
    }
    let polarized = p.polarization != Polarization::None;
    if polarized && d != 2 {
        return Err(LabError::InvalidInput("polarized packets need a 2D grid".into()));
    }
    let norm = scale.powf(-(d as f64) / 2.0);
    let shift = eps.powf(p.alpha);
    let off = [shift * p.omega0[0], shift * p.omega0[1]];
    let global = C64::from_polar(p.amplitude, p.phase);
    let ncomp = if polarized { 2 } else { 1 };
    let mut out = WaveField::zeros(*grid, ncomp);
    for i in 0..grid.len() {
        let x = grid.point(i);
        let y = [(x[0] - p.center[0]) / scale, (x[1] - p.center[1]) / scale];
        let amp = norm * p.profile.value(y, d);
        if amp == 0.0 {
            continue;
        }
        let q = if d == 1 {
            (x[0] - off[0]).powi(2)
        } else {
            (x[0] - off[0]).powi(2) + (x[1] - off[1]).powi(2)
        };
        let v = global * amp * C64::from_polar(1.0, p.r0 * q / (2.0 * eps));
        if !polarized {
            out.comps[0][i] = v;
            continue;
        }
        if x[0].hypot(x[1]) < DEGENERATE_TOL {
            continue;
        }
        let (ep, em) = eigenvectors(x);
        let (e, twist) = match p.polarization {
            Polarization::Plus => (ep, 0.0),
            Polarization::Minus => (em, 0.0),
            Polarization::TwistedPlus => (ep, 0.5 * x[1].atan2(x[0])),
            Polarization::TwistedMinus => (em, 0.5 * x[1].atan2(x[0])),
            Polarization::None => unreachable!(),
        };
        let vt = v * C64::from_polar(1.0, twist);
        out.comps[0][i] = vt * e[0];
        out.comps[1][i] = vt * e[1];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::projectors;

    #[test]
    fn zero_phase_wkb_is_amplitude() {
        let g = SpatialGrid::new(1, 128, 8.0).unwrap();
        let c = build_wkb_data(&g, 0.1, |x| C64::new((-x[0] * x[0]).exp(), 0.0), |_| 0.0).unwrap();
        for i in 0..g.n {
            assert_eq!(c.field.comps[0][i], C64::new((-g.coord(i).powi(2)).exp(), 0.0));
        }
        assert!(c.warnings.is_empty());
    }

    #[test]
    fn wkb_norms() {
        let g = SpatialGrid::new(1, 4096, 8.0).unwrap();
        let a0 = |x: [f64; 2]| C64::new(std::f64::consts::PI.powf(-0.25) * (-0.5 * x[0] * x[0]).exp(), 0.0);
        let plain = build_wkb_data(&g, 0.01, a0, |_| 0.0).unwrap();
        let chirped = build_wkb_data(&g, 0.01, a0, |x| 0.5 * x[0] * x[0]).unwrap();
        assert!((plain.field.mass() - 1.0).abs() < 1e-8);
        assert!((chirped.field.norm() - plain.field.norm()).abs() < 1e-8);
    }

    #[test]
    fn wkb_warns_when_under_resolved() {
        let g = SpatialGrid::new(1, 64, 8.0).unwrap();
        let c = build_wkb_data(&g, 0.01, |x| C64::new((-x[0] * x[0]).exp(), 0.0), |x| x[0]).unwrap();
        assert_eq!(c.warnings.len(), 1);
    }

    #[test]
    fn coherent_state_specialization() {
        let g = SpatialGrid::new(2, 256, 2.0).unwrap();
        let eps = 0.01;
        let p = PacketParams::coherent(0.5, [0.3, -0.2], 1.0);
        let f = build_wave_packet(&g, eps, &p).unwrap();
        for i in (0..g.len()).step_by(97) {
            let x = g.point(i);
            let r2 = (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2);
            let expect = eps.powf(-0.5) * (-0.5 * r2 / eps).exp();
            assert!((f.comps[0][i] - expect).norm() <= 1e-12 * expect.max(1.0), "{} vs {expect}", f.comps[0][i]);
        }
    }

    #[test]
    fn packet_mass_is_eps_independent() {
        let g = SpatialGrid::new(2, 512, 2.0).unwrap();
        let mut masses = Vec::new();
        for eps in [1e-1, 1e-2, 1e-3] {
            let mut p = PacketParams::coherent(0.3, [0.2, 0.1], 1.0);
            p.r0 = -0.7;
            p.omega0 = [0.1, 0.4];
            p.alpha = 0.4;
            masses.push(build_wave_packet(&g, eps, &p).unwrap().mass());
        }
        let exact = std::f64::consts::PI;
        for m in &masses {
            assert!((m - exact).abs() / exact <= 1e-6, "{m}");
        }
    }

    #[test]
    fn rejects_narrow_packets() {
        let g = SpatialGrid::new(1, 64, 4.0).unwrap();
        let p = PacketParams::coherent(0.5, [0.0, 0.0], 1.0);
        assert!(matches!(build_wave_packet(&g, 1e-4, &p), Err(LabError::UnderResolved(_))));
    }

    #[test]
    fn polarized_packet_lies_in_the_mode() {
        let g = SpatialGrid::new(2, 128, 2.0).unwrap();
        let mut p = PacketParams::coherent(0.4, [1.0, 0.0], 1.0);
        p.polarization = Polarization::Plus;
        let f = build_wave_packet(&g, 0.01, &p).unwrap();
        let mut leak = 0.0;
        for i in 0..g.len() {
            let (_, m) = projectors(g.point(i));
            let (a, b) = (f.comps[0][i], f.comps[1][i]);
            leak += (m[0][0] * a + m[0][1] * b).norm_sqr() + (m[1][0] * a + m[1][1] * b).norm_sqr();
        }
        let rel = (leak * g.cell_volume()).sqrt() / f.norm();
        assert!(rel <= 1e-10, "{rel:e}");
    }
}
