//! Scalar wave-function experiments: weakly nonlinear WKB phase shift,
//! harmonic refocusing, supercritical instability, measure transport and the
//! structural invariant checks.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::WaveField;
use crate::grid::SpatialGrid;
use crate::potential::{PotentialSpec, ScalarShape};
use crate::propagate::{HamiltonianSpec, Nonlinearity, Propagator};
use crate::rays::{
    quadratic_phase, transport_measure, wkb_assemble, Dynamics, EikonalOptions, ModeLabel, ParticleEnsemble,
    PhaseObservable, WkbShift,
};
use crate::wigner::{density_moment, husimi, husimi_pairings_1d, wigner_slice, Observable1d, XSelection};
use crate::C64;

/// Steps of size close to `dt_max` covering `[0, t]` exactly.
fn uniform_steps(t: f64, dt_max: f64) -> (usize, f64) {
    let steps = (t / dt_max).ceil().max(1.0) as usize;
    (steps, t / steps as f64)
}

fn evolve(grid: &SpatialGrid, eps: f64, dt: f64, steps: usize, spec: &HamiltonianSpec, f: &mut WaveField) -> Result<()> {
    let prop = Propagator::new(grid, eps, dt, spec)?;
    prop.run(f, 0.0, steps, |_| false, |_, _, _| Ok(()))
}

/// `(pi eps)^{-1/4} exp(-(x - x0)^2 / (2 eps) + i xi0 (x - x0) / eps)` on a 1D grid.
pub fn coherent_state_1d(grid: SpatialGrid, eps: f64, x0: f64, xi0: f64) -> WaveField {
    let c = (PI * eps).powf(-0.25);
    WaveField::from_fn(grid, |x| {
        let d = x[0] - x0;
        C64::from_polar(c * (-d * d / (2.0 * eps)).exp(), xi0 * d / eps)
    })
}

fn ratios(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[0] / w[1]).collect()
}

/// Weakly nonlinear WKB run: `V = 0`, `phi0 = x^2/2`, `a0 = A exp(-x^2/2)`,
/// nonlinearity `eps f(|psi|^2) psi` with `f(rho) = c rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WkbConfig {
    pub eps: Vec<f64>,
    pub amplitude: f64,
    pub coupling: f64,
    pub t: f64,
    pub half_extent: f64,
    /// Time step as a fraction of `eps`.
    pub dt_over_eps: f64,
    /// Coupling of the comparison run for the Husimi pairings.
    pub alt_coupling: f64,
}

impl Default for WkbConfig {
    fn default() -> Self {
        Self {
            eps: vec![1e-2, 5e-3, 2.5e-3],
            amplitude: 1.0,
            coupling: 1.0,
            t: 1.0,
            half_extent: 14.0,
            dt_over_eps: 0.1,
            alt_coupling: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WkbRow {
    pub eps: f64,
    pub n: usize,
    pub with_g: f64,
    pub without_g: f64,
    /// Largest pairing difference between the `coupling` and `alt_coupling` runs.
    pub husimi_gap: f64,
    pub pairings: Vec<f64>,
    pub alt_pairings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WkbReport {
    pub rows: Vec<WkbRow>,
    /// Successive `with_g` error ratios.
    pub halving_ratios: Vec<f64>,
}

/// The five observables paired against the Husimi densities.
pub fn wkb_observables() -> Vec<Box<dyn Fn(f64, f64) -> f64 + Sync>> {
    vec![
        Box::new(|x: f64, _| (-x * x / 8.0).exp()),
        Box::new(|x: f64, _| x * (-x * x / 8.0).exp()),
        Box::new(|x: f64, xi: f64| xi * (-x * x / 8.0).exp()),
        Box::new(|x: f64, xi: f64| xi * xi * (-x * x / 8.0).exp()),
        Box::new(|x: f64, xi: f64| x.cos() * (-xi * xi).exp()),
    ]
}

pub fn wkb_phase_shift(cfg: &WkbConfig) -> Result<WkbReport> {
    if cfg.eps.is_empty() || cfg.eps.iter().any(|e| !(*e > 0.0)) || !(cfg.t > 0.0) {
        return Err(LabError::Config("wkb: eps list and t must be positive".into()));
    }
    let amp = cfg.amplitude;
    let a0 = move |y: [f64; 2]| C64::new(amp * (-0.5 * y[0] * y[0]).exp(), 0.0);
    let phi0 = quadratic_phase(1.0);
    let l = cfg.half_extent;
    // momenta stay below |x|/(1+t) on the support, about l/2 at t = 1
    let xi_max = 0.5 * l;
    let obs = wkb_observables();
    let obs_refs: Vec<Observable1d> = obs.iter().map(|b| b.as_ref() as Observable1d).collect();
    let mut rows = Vec::new();
    for &eps in &cfg.eps {
        let n = ((2.0 * l * 1.3 * xi_max / (PI * eps)).ceil() as usize).next_power_of_two();
        let grid = SpatialGrid::new(1, n, l)?;
        let init = WaveField::from_fn(grid, |x| a0(x) * C64::from_polar(1.0, phi0(x).0 / eps));
        let (steps, dt) = uniform_steps(cfg.t, cfg.dt_over_eps * eps);
        let run = |c: f64| -> Result<WaveField> {
            let spec = HamiltonianSpec {
                potential: PotentialSpec::zero(),
                nonlinearity: Some(Nonlinearity::with_strength(1.0, 1.0, c)?),
            };
            let mut f = init.clone();
            evolve(&grid, eps, dt, steps, &spec, &mut f)?;
            Ok(f)
        };
        let psi = run(cfg.coupling)?;
        let alt = run(cfg.alt_coupling)?;
        let c = cfg.coupling;
        let f = move |rho: f64| c * rho;
        let opts = EikonalOptions::for_grid(&grid);
        let shifted = wkb_assemble(&a0, &phi0, &ScalarShape::Zero, WkbShift::Nonlinear(&f), &grid, cfg.t, eps, &opts)?;
        let plain = wkb_assemble(&a0, &phi0, &ScalarShape::Zero, WkbShift::None, &grid, cfg.t, eps, &opts)?;
        let pairings = husimi_pairings_1d(&psi, eps, &obs_refs)?;
        let alt_pairings = husimi_pairings_1d(&alt, eps, &obs_refs)?;
        let husimi_gap = pairings.iter().zip(&alt_pairings).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push(WkbRow {
            eps,
            n,
            with_g: psi.distance(&shifted),
            without_g: psi.distance(&plain),
            husimi_gap,
            pairings,
            alt_pairings,
        });
    }
    let with_g: Vec<f64> = rows.iter().map(|r| r.with_g).collect();
    Ok(WkbReport { halving_ratios: ratios(&with_g), rows })
}

/// Linear harmonic oscillator over half a period, compared with the exact
/// refocused state `e^{-i pi/2} psi0(-x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefocusConfig {
    pub eps: f64,
    pub x0: f64,
    pub xi0: f64,
    pub half_extent: f64,
    pub n: usize,
    pub dt_over_eps: f64,
}

impl Default for RefocusConfig {
    fn default() -> Self {
        Self { eps: 1e-2, x0: 0.6, xi0: 0.4, half_extent: 4.0, n: 1024, dt_over_eps: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefocusReport {
    pub steps: usize,
    /// `|| |psi(pi)| - |psi0(-x)| ||_{L2}`.
    pub modulus_error: f64,
    /// `|| psi(pi) - e^{-i pi/2} psi0(-x) ||_{L2}`.
    pub full_error: f64,
    pub mass_drift: f64,
}

pub fn harmonic_refocus(cfg: &RefocusConfig) -> Result<RefocusReport> {
    let grid = SpatialGrid::new(1, cfg.n, cfg.half_extent)?;
    let psi0 = coherent_state_1d(grid, cfg.eps, cfg.x0, cfg.xi0);
    let (steps, dt) = uniform_steps(PI, cfg.dt_over_eps * cfg.eps);
    let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::Harmonic { omega: 1.0 }));
    let mut f = psi0.clone();
    evolve(&grid, cfg.eps, dt, steps, &spec, &mut f)?;
    let target = coherent_state_1d(grid, cfg.eps, -cfg.x0, -cfg.xi0).scaled(C64::from_polar(1.0, -0.5 * PI));
    let h = grid.spacing();
    let modulus_error =
        (f.comps[0].iter().zip(&target.comps[0]).map(|(a, b)| (a.norm() - b.norm()).powi(2)).sum::<f64>() * h).sqrt();
    Ok(RefocusReport {
        steps,
        modulus_error,
        full_error: f.distance(&target),
        mass_drift: (f.mass() - psi0.mass()).abs() / psi0.mass(),
    })
}

/// `u` from `a0 e^{i phi0/eps}` and `v` from `(a0 + eps^k a1) e^{i phi0/eps}`
/// under `i eps d_t u + eps^2/2 u'' = |u|^2 u`, compared up to `C eps^{1-k}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupercriticalConfig {
    pub eps: Vec<f64>,
    pub k: f64,
    pub horizon_constant: f64,
    pub half_extent: f64,
    pub n: usize,
    pub dt_over_eps: f64,
}

impl Default for SupercriticalConfig {
    fn default() -> Self {
        Self { eps: vec![4e-3, 2e-3, 1e-3], k: 0.5, horizon_constant: 1.0, half_extent: 6.0, n: 4096, dt_over_eps: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupercriticalRow {
    pub eps: f64,
    pub horizon: f64,
    pub initial_gap: f64,
    /// `sup_{t <= horizon} ||u - v||`.
    pub max_gap: f64,
    pub ratio: f64,
    pub mass_drift: f64,
}

pub fn supercritical_instability(cfg: &SupercriticalConfig) -> Result<Vec<SupercriticalRow>> {
    if !(cfg.k > 0.0 && cfg.k < 1.0) {
        return Err(LabError::Config("supercritical: k must lie in (0, 1)".into()));
    }
    let grid = SpatialGrid::new(1, cfg.n, cfg.half_extent)?;
    let spec = HamiltonianSpec {
        potential: PotentialSpec::zero(),
        nonlinearity: Some(Nonlinearity::with_strength(0.0, 1.0, 1.0)?),
    };
    cfg.eps
        .par_iter()
        .map(|&eps| {
            let a = |x: [f64; 2]| (-x[0] * x[0]).exp();
            let pert = eps.powf(cfg.k);
            let mut u = WaveField::from_fn(grid, |x| C64::new(a(x), 0.0));
            let mut v = WaveField::from_fn(grid, |x| C64::new(a(x) * (1.0 + pert), 0.0));
            let horizon = cfg.horizon_constant * eps.powf(1.0 - cfg.k);
            let (steps, dt) = uniform_steps(horizon, cfg.dt_over_eps * eps);
            let prop = Propagator::new(&grid, eps, dt, &spec)?;
            let initial_gap = u.distance(&v);
            let (mu, mv) = (u.mass(), v.mass());
            let mut max_gap = initial_gap;
            for s in 0..steps {
                let t = s as f64 * dt;
                prop.step(&mut u, t);
                prop.step(&mut v, t);
                max_gap = max_gap.max(u.distance(&v));
            }
            let mass_drift = ((u.mass() - mu).abs() / mu).max((v.mass() - mv).abs() / mv);
            Ok(SupercriticalRow { eps, horizon, initial_gap, max_gap, ratio: max_gap / initial_gap, mass_drift })
        })
        .collect()
}

/// Husimi centroid of an evolved coherent state against the mean of a
/// transported phase-space Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportCheckConfig {
    pub eps: f64,
    pub x0: f64,
    pub xi0: f64,
    pub t_max: f64,
    pub samples: usize,
    pub potentials: Vec<ScalarShape>,
    pub half_extent: f64,
    pub n: usize,
    pub dt_over_eps: f64,
    /// Quadrature nodes per phase-space axis.
    pub nodes: usize,
}

impl Default for TransportCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-2,
            x0: 1.0,
            xi0: 0.5,
            t_max: 2.0,
            samples: 9,
            potentials: vec![ScalarShape::Harmonic { omega: 1.0 }, ScalarShape::Quartic { a2: 1.0, a4: 0.25 }],
            half_extent: 4.0,
            n: 2048,
            dt_over_eps: 0.1,
            nodes: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportRow {
    pub potential: ScalarShape,
    pub times: Vec<f64>,
    pub husimi_centroid: Vec<[f64; 2]>,
    pub particle_centroid: Vec<[f64; 2]>,
    /// Largest Euclidean centroid distance over the sample times.
    pub max_deviation: f64,
}

pub fn measure_transport_check(cfg: &TransportCheckConfig) -> Result<Vec<TransportRow>> {
    if cfg.samples < 2 || !(cfg.t_max > 0.0) {
        return Err(LabError::Config("transport check: need t_max > 0 and at least two samples".into()));
    }
    let eps = cfg.eps;
    let grid = SpatialGrid::new(1, cfg.n, cfg.half_extent)?;
    let interval = cfg.t_max / (cfg.samples - 1) as f64;
    let (per, dt) = uniform_steps(interval, cfg.dt_over_eps * eps);
    let times: Vec<f64> = (0..cfg.samples).map(|i| i as f64 * interval).collect();
    let ox = |x: f64, _: f64| x;
    let oxi = |_: f64, xi: f64| xi;
    let one = |_: f64, _: f64| 1.0;
    let hobs: [Observable1d; 3] = [&ox, &oxi, &one];
    let px = |x: [f64; 2], _: [f64; 2], _: ModeLabel| x[0];
    let pxi = |_: [f64; 2], xi: [f64; 2], _: ModeLabel| xi[0];
    let pobs: [&PhaseObservable; 2] = [&px, &pxi];
    cfg.potentials
        .iter()
        .map(|shape| {
            let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(*shape));
            let prop = Propagator::new(&grid, eps, dt, &spec)?;
            let mut f = coherent_state_1d(grid, eps, cfg.x0, cfg.xi0);
            let mut husimi_centroid = Vec::with_capacity(times.len());
            for i in 0..times.len() {
                if i > 0 {
                    prop.run(&mut f, times[i - 1], per, |_| false, |_, _, _| Ok(()))?;
                }
                let p = husimi_pairings_1d(&f, eps, &hobs)?;
                husimi_centroid.push([p[0] / p[2], p[1] / p[2]]);
            }
            let ens = ParticleEnsemble::gaussian(
                1,
                [cfg.x0, 0.0],
                [cfg.xi0, 0.0],
                (eps / 2.0).sqrt(),
                cfg.nodes,
                1.0,
                ModeLabel::Scalar,
                f64::INFINITY,
            );
            let tr = transport_measure(&ens, &Dynamics::Scalar(*shape), cfg.t_max, dt, &times, &pobs)?;
            let particle_centroid: Vec<[f64; 2]> =
                tr.pairings.iter().zip(&tr.weights).map(|(p, w)| [p[0] / w, p[1] / w]).collect();
            let max_deviation = husimi_centroid
                .iter()
                .zip(&particle_centroid)
                .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
                .fold(0.0, f64::max);
            Ok(TransportRow { potential: *shape, times: times.clone(), husimi_centroid, particle_centroid, max_deviation })
        })
        .collect()
}

/// Discrete identities shared by the propagators and phase-space transforms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralReport {
    /// `max |int w dxi - |psi|^2|` for a two-bump field.
    pub moment_error: f64,
    /// Smallest Husimi value of an odd superposition.
    pub husimi_min: f64,
    /// Relative mass drift of a linear harmonic run over `10^4` steps.
    pub mass_drift_1e4: f64,
    /// Worst Husimi/particle centroid gap under the harmonic potential.
    pub harmonic_centroid_gap: f64,
    /// `max |W - exp(-(x^2 + xi^2)/eps)/(pi eps)|` for the standard coherent state.
    pub gaussian_wigner_error: f64,
}

pub fn structural_invariants() -> Result<StructuralReport> {
    let g = SpatialGrid::new(1, 256, 4.0)?;
    let bumps = WaveField::from_fn(g, |x| {
        C64::new((-(x[0] - 0.3).powi(2)).exp() + 0.5 * (-3.0 * (x[0] + 1.0).powi(2)).exp(), 0.2 * x[0] * (-x[0] * x[0]).exp())
    });
    let w = wigner_slice(&bumps, 0.1, &XSelection::All)?;
    let moment_error = density_moment(&w)
        .iter()
        .zip(bumps.density())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let odd = WaveField::from_fn(g, |x| C64::new(x[0] * (-2.0 * x[0] * x[0]).exp(), 0.0));
    let hus = husimi(&odd, 0.05)?;
    let husimi_min = hus.min();

    let eps = 0.05;
    let gw = SpatialGrid::new(1, 512, 4.0)?;
    let cs = coherent_state_1d(gw, eps, 0.0, 0.0);
    let wc = wigner_slice(&cs, eps, &XSelection::All)?;
    let mut gaussian_wigner_error: f64 = 0.0;
    for (ix, x) in wc.x.iter().enumerate() {
        for k in 0..wc.n_xi() {
            let xi = wc.xi_axis[k];
            let exact = (-(x[0] * x[0] + xi * xi) / eps).exp() / (PI * eps);
            gaussian_wigner_error = gaussian_wigner_error.max((wc.value(ix, k) - exact).abs());
        }
    }

    let gm = SpatialGrid::new(1, 512, 4.0)?;
    let mut f = coherent_state_1d(gm, 0.02, 0.5, 0.3);
    let m0 = f.mass();
    let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::Harmonic { omega: 1.0 }));
    evolve(&gm, 0.02, 1e-3, 10_000, &spec, &mut f)?;
    let mass_drift_1e4 = (f.mass() - m0).abs() / m0;

    let tc = TransportCheckConfig { potentials: vec![ScalarShape::Harmonic { omega: 1.0 }], ..Default::default() };
    let harmonic_centroid_gap = measure_transport_check(&tc)?[0].max_deviation;

    Ok(StructuralReport { moment_error, husimi_min, mass_drift_1e4, harmonic_centroid_gap, gaussian_wigner_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refocus_matches_reflected_state() {
        let r = harmonic_refocus(&RefocusConfig::default()).unwrap();
        assert!(r.modulus_error <= 1e-4, "{}", r.modulus_error);
        assert!(r.full_error <= 1e-3, "{}", r.full_error);
        assert!(r.mass_drift <= 1e-10);
    }

    #[test]
    fn supercritical_gap_grows_from_small_data() {
        let cfg = SupercriticalConfig { eps: vec![1e-2, 5e-3], n: 2048, ..Default::default() };
        let rows = supercritical_instability(&cfg).unwrap();
        assert!(rows[1].ratio > rows[0].ratio);
        for r in &rows {
            assert!(r.mass_drift <= 1e-10);
            // the initial gap is eps^k ||a1||
            let a1 = (PI / 2.0).sqrt().sqrt();
            assert!((r.initial_gap - r.eps.sqrt() * a1).abs() <= 1e-8, "{}", r.initial_gap);
        }
    }

    #[test]
    fn supercritical_rejects_bad_k() {
        let cfg = SupercriticalConfig { k: 1.0, ..Default::default() };
        assert!(supercritical_instability(&cfg).is_err());
    }

    #[test]
    fn harmonic_centroid_follows_closed_form_orbit() {
        let cfg = TransportCheckConfig {
            potentials: vec![ScalarShape::Harmonic { omega: 1.0 }],
            n: 1024,
            samples: 5,
            ..Default::default()
        };
        let row = &measure_transport_check(&cfg).unwrap()[0];
        for (t, c) in row.times.iter().zip(&row.husimi_centroid) {
            let x = cfg.x0 * t.cos() + cfg.xi0 * t.sin();
            let xi = -cfg.x0 * t.sin() + cfg.xi0 * t.cos();
            assert!((c[0] - x).abs() <= 1e-6 && (c[1] - xi).abs() <= 1e-6, "{t}: {c:?} vs {x} {xi}");
        }
        assert!(row.max_deviation <= 1e-4, "{}", row.max_deviation);
    }

    #[test]
    fn structural_suite_within_bounds() {
        let s = structural_invariants().unwrap();
        assert!(s.moment_error <= 1e-12, "{}", s.moment_error);
        assert!(s.husimi_min >= -1e-12, "{}", s.husimi_min);
        assert!(s.mass_drift_1e4 <= 1e-10, "{}", s.mass_drift_1e4);
        assert!(s.gaussian_wigner_error <= 1e-6, "{}", s.gaussian_wigner_error);
        assert!(s.harmonic_centroid_gap <= 2.0 * 0.1);
    }
}
