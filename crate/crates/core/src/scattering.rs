//! Scattering oracles: 1D potential scattering, the critical 1D NLS
//! scattering operator `S`, its first-order term `P`, and `Z = F S F^{-1}`.
//!
//! The NLS operator is computed in the lens variable: with
//! `H = -d^2/2 + x^2/2`, the profile `w(s) = e^{isH} v(s)` of the
//! lens-transformed solution satisfies
//! `w' = -i g e^{isH}(|e^{-isH} w|^4 e^{-isH} w)` on `[-pi/2, pi/2]`, and
//! `S(psi) = w(pi/2)` when `w(-pi/2) = psi`. The whole time axis is covered
//! without truncation.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft::FftEngine;
use crate::field::WaveField;
use crate::grid::SpatialGrid;
use crate::potential::{PotentialSpec, ScalarShape};
use crate::propagate::{kinetic_half_step, step_count, HamiltonianSpec, Nonlinearity, Propagator};
use crate::spectral::{forward_spectral, inverse_spectral, SpectralField};

const I: C64 = C64 { re: 0.0, im: 1.0 };

// ---------------------------------------------------------------------------
// self-dual grids and the Fourier transform on them

/// 1D grid with `L^2 = pi n / 2`, so the dual lattice `pi k / L` coincides
/// with the grid points and `F` maps grid functions to grid functions.
pub fn self_dual_grid(n: usize) -> Result<SpatialGrid> {
    SpatialGrid::new(1, n, (PI * n as f64 / 2.0).sqrt())
}

fn check_self_dual(g: &SpatialGrid) -> Result<()> {
    let target = PI * g.n as f64 / 2.0;
    if g.dim != 1 || (g.half_extent * g.half_extent - target).abs() > 1e-9 * target {
        return Err(LabError::InvalidInput("operation needs a 1D self-dual grid (L^2 = pi n / 2)".into()));
    }
    Ok(())
}

/// `F f` on a self-dual grid, returned on the same grid.
pub fn fourier_on_grid(f: &WaveField) -> Result<WaveField> {
    check_self_dual(&f.grid)?;
    let n = f.grid.n;
    let spec = forward_spectral(f);
    let comps = spec
        .comps
        .iter()
        .map(|c| (0..n).map(|j| c[(j + n / 2) % n]).collect())
        .collect();
    WaveField::from_components(f.grid, comps)
}

/// `F^{-1} f` on a self-dual grid.
pub fn inverse_fourier_on_grid(f: &WaveField) -> Result<WaveField> {
    check_self_dual(&f.grid)?;
    let n = f.grid.n;
    let comps = f.comps.iter().map(|c| (0..n).map(|m| c[(m + n / 2) % n]).collect()).collect();
    Ok(inverse_spectral(&SpectralField { grid: f.grid, comps }))
}

/// Band-limited interpolation of a 1D field at arbitrary points.
pub fn trig_interpolate(f: &WaveField, points: &[f64]) -> Vec<C64> {
    let g = f.grid;
    let engine = FftEngine::new(&g);
    let mut c = f.comps[0].clone();
    engine.forward(&mut c);
    let inv_n = 1.0 / g.n as f64;
    let modes: Vec<(f64, C64)> = (0..g.n).map(|m| (g.xi(m), c[m] * inv_n)).collect();
    points
        .par_iter()
        .map(|&x| {
            let u = x + g.half_extent;
            modes.iter().map(|(k, cm)| cm * C64::from_polar(1.0, k * u)).sum()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// harmonic flow

/// Exact `e^{-isH}` on a 1D grid for `|s| < pi`: chirp `e^{-i tan(s/2) x^2/2}`,
/// free flow over `sin s`, chirp again.
pub struct HarmonicFlow {
    grid: SpatialGrid,
    engine: FftEngine,
    x2: Vec<f64>,
    k2: Vec<f64>,
}

impl HarmonicFlow {
    pub fn new(grid: &SpatialGrid) -> Result<Self> {
        if grid.dim != 1 {
            return Err(LabError::InvalidInput("harmonic lens flow is 1D".into()));
        }
        Ok(Self {
            grid: *grid,
            engine: FftEngine::new(grid),
            x2: grid.coords().iter().map(|x| x * x).collect(),
            k2: grid.xi_sq(),
        })
    }

    pub fn apply(&self, buf: &mut [C64], s: f64) {
        let a = (0.5 * s).tan();
        self.chirp(buf, a);
        self.engine.forward(buf);
        let tau = s.sin();
        let inv_n = 1.0 / self.grid.n as f64;
        for (z, k2) in buf.iter_mut().zip(&self.k2) {
            *z *= C64::from_polar(inv_n, -0.5 * tau * k2);
        }
        self.engine.inverse(buf);
        self.chirp(buf, a);
    }

    fn chirp(&self, buf: &mut [C64], a: f64) {
        for (z, x2) in buf.iter_mut().zip(&self.x2) {
            *z *= C64::from_polar(1.0, -0.5 * a * x2);
        }
    }

    /// `-i e^{isH}(g |e^{-isH} w|^4 e^{-isH} w)`.
    fn lens_rhs(&self, s: f64, w: &[C64], g: f64) -> Vec<C64> {
        let mut v = w.to_vec();
        self.apply(&mut v, s);
        for z in v.iter_mut() {
            let r2 = z.norm_sqr();
            *z *= g * r2 * r2;
        }
        self.apply(&mut v, -s);
        for z in v.iter_mut() {
            *z *= -I;
        }
        v
    }
}

fn l2(grid: &SpatialGrid, v: &[C64]) -> f64 {
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt()
}

fn l2_diff(grid: &SpatialGrid, a: &[C64], b: &[C64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt()
}

fn axpy(a: &[C64], c: f64, b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + c * y).collect()
}

// ---------------------------------------------------------------------------
// NLS scattering

/// Options for [`nls_scattering`] (unit coupling is `i u_t + u_xx/2 = |u|^4 u`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlsScatteringOptions {
    pub coupling: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
    /// Accept when step doubling moves `S(psi) - psi` by at most this (relative).
    pub rtol: f64,
    /// Largest admissible `||psi||`.
    pub max_norm: f64,
}

impl Default for NlsScatteringOptions {
    fn default() -> Self {
        Self { coupling: 1.0, initial_steps: 64, max_steps: 1 << 16, rtol: 1e-9, max_norm: 5.0 }
    }
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    /// Step count (lens method) or window `T_max` (window method).
    pub resolution: f64,
    /// L2 change of the output against the previous level.
    pub drift: f64,
}

#[derive(Debug, Clone)]
pub struct ScatteringResult {
    pub input: WaveField,
    pub output: WaveField,
    /// `S(psi) - psi`, integrated directly so small-data differences keep full precision.
    pub deviation: WaveField,
    /// Time window; infinite for the lens method.
    pub t_max: f64,
    pub log: Vec<ConvergenceEntry>,
    /// `| ||S psi|| - ||psi|| | / ||psi||`.
    pub norm_defect: f64,
}

impl ScatteringResult {
    /// Last recorded drift (0 when nothing had to be refined).
    pub fn tolerance(&self) -> f64 {
        self.log.last().map_or(0.0, |e| e.drift)
    }
}

fn lens_rk4(flow: &HarmonicFlow, psi: &[C64], g: f64, steps: usize) -> Vec<C64> {
    let h = PI / steps as f64;
    let mut z = vec![C64::new(0.0, 0.0); psi.len()];
    for k in 0..steps {
        let s = -0.5 * PI + k as f64 * h;
        let w = |dz: &[C64]| -> Vec<C64> { psi.iter().zip(dz).map(|(p, d)| p + d).collect() };
        let k1 = flow.lens_rhs(s, &w(&z), g);
        let k2 = flow.lens_rhs(s + 0.5 * h, &w(&axpy(&z, 0.5 * h, &k1)), g);
        let k3 = flow.lens_rhs(s + 0.5 * h, &w(&axpy(&z, 0.5 * h, &k2)), g);
        let k4 = flow.lens_rhs(s + h, &w(&axpy(&z, h, &k3)), g);
        for i in 0..z.len() {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    z
}

fn check_profile(psi: &WaveField, max_norm: f64) -> Result<()> {
    if psi.grid.dim != 1 || psi.ncomp() != 1 {
        return Err(LabError::InvalidInput("nonlinear scattering is for scalar 1D profiles".into()));
    }
    if !psi.is_finite() {
        return Err(LabError::InvalidInput("profile has non-finite values".into()));
    }
    if psi.norm() > max_norm {
        return Err(LabError::InvalidInput(format!(
            "||psi|| = {} exceeds the configured bound {max_norm}",
            psi.norm()
        )));
    }
    Ok(())
}

/// `S(psi)` for `i u_t + u_xx/2 = g |u|^4 u` in 1D, by RK4 in the lens
/// variable with step doubling until the deviation `S(psi) - psi` settles.
pub fn nls_scattering(psi: &WaveField, opts: &NlsScatteringOptions) -> Result<ScatteringResult> {
    check_profile(psi, opts.max_norm)?;
    let grid = psi.grid;
    let norm = psi.norm();
    let zero = WaveField::zeros(grid, 1);
    if norm == 0.0 || opts.coupling == 0.0 {
        return Ok(ScatteringResult {
            input: psi.clone(),
            output: psi.clone(),
            deviation: zero,
            t_max: f64::INFINITY,
            log: Vec::new(),
            norm_defect: 0.0,
        });
    }
    let flow = HarmonicFlow::new(&grid)?;
    let p = &psi.comps[0];
    let mut steps = opts.initial_steps.max(2);
    let mut prev = lens_rk4(&flow, p, opts.coupling, steps);
    let mut log = Vec::new();
    loop {
        if 2 * steps > opts.max_steps {
            let drift = log.last().map_or(f64::INFINITY, |e: &ConvergenceEntry| e.drift);
            return Err(LabError::NonConvergence(format!(
                "lens integration drift {drift:e} above tolerance at {steps} steps"
            )));
        }
        steps *= 2;
        let next = lens_rk4(&flow, p, opts.coupling, steps);
        let drift = l2_diff(&grid, &prev, &next);
        log.push(ConvergenceEntry { resolution: steps as f64, drift });
        let scale = l2(&grid, &next);
        prev = next;
        if drift <= opts.rtol * scale + 1e-15 * norm {
            break;
        }
    }
    let out: Vec<C64> = p.iter().zip(&prev).map(|(a, b)| a + b).collect();
    let output = WaveField::from_components(grid, vec![out])?;
    let norm_defect = (output.norm() - norm).abs() / norm;
    Ok(ScatteringResult {
        input: psi.clone(),
        output,
        deviation: WaveField::from_components(grid, vec![prev])?,
        t_max: f64::INFINITY,
        log,
        norm_defect,
    })
}

/// Window approximation: free flow to `-t_max`, Strang NLS to `+t_max`, free flow back.
pub fn nls_scattering_window(psi: &WaveField, coupling: f64, t_max: f64, dt: f64) -> Result<WaveField> {
    check_profile(psi, f64::INFINITY)?;
    let spec = HamiltonianSpec {
        potential: PotentialSpec::zero(),
        nonlinearity: Some(Nonlinearity::with_strength(1.0, 2.0, coupling)?),
    };
    let steps = step_count(-t_max, t_max, dt)?;
    let prop = Propagator::new(&psi.grid, 1.0, dt, &spec)?;
    let mut u = kinetic_half_step(psi, 1.0, -t_max);
    prop.run(&mut u, -t_max, steps, |_| false, |_, _, _| Ok(()))?;
    Ok(kinetic_half_step(&u, 1.0, -t_max))
}

/// Window method over an increasing schedule; errors when the last doubling
/// still moves the output by more than `drift_tol`.
pub fn nls_scattering_windowed(
    psi: &WaveField,
    coupling: f64,
    schedule: &[f64],
    dt: f64,
    drift_tol: f64,
) -> Result<ScatteringResult> {
    if schedule.is_empty() {
        return Err(LabError::InvalidInput("empty window schedule".into()));
    }
    let mut log = Vec::new();
    let mut prev: Option<WaveField> = None;
    for &t in schedule {
        let out = nls_scattering_window(psi, coupling, t, dt)?;
        let drift = prev.as_ref().map_or(f64::NAN, |p| p.distance(&out));
        log.push(ConvergenceEntry { resolution: t, drift });
        prev = Some(out);
    }
    let output = prev.expect("non-empty schedule");
    let last = log.last().map_or(f64::NAN, |e| e.drift);
    if log.len() > 1 && !(last <= drift_tol) {
        return Err(LabError::NonConvergence(format!("window drift {last:e} exceeds {drift_tol:e}")));
    }
    let norm = psi.norm();
    let norm_defect = if norm > 0.0 { (output.norm() - norm).abs() / norm } else { 0.0 };
    Ok(ScatteringResult {
        input: psi.clone(),
        deviation: output.add_scaled(C64::new(-1.0, 0.0), psi),
        output,
        t_max: *schedule.last().expect("non-empty"),
        log,
        norm_defect,
    })
}

// ---------------------------------------------------------------------------
// first-order term

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[derive(Debug, Clone)]
pub struct FirstOrderResult {
    pub profile: WaveField,
    pub panels: usize,
    /// Relative change under panel doubling at acceptance.
    pub self_convergence: f64,
}

/// `P(psi) = -i \int U0(-t)(|U0(t) psi|^4 U0(t) psi) dt` evaluated in the lens
/// variable `t = tan s`, where the integrand is smooth on the closed interval.
pub fn first_order_scattering(psi: &WaveField, tol: f64) -> Result<FirstOrderResult> {
    check_profile(psi, f64::INFINITY)?;
    let grid = psi.grid;
    if psi.norm() == 0.0 {
        return Ok(FirstOrderResult { profile: WaveField::zeros(grid, 1), panels: 0, self_convergence: 0.0 });
    }
    let flow = HarmonicFlow::new(&grid)?;
    let (gx, gw) = gauss_legendre(8);
    let p = &psi.comps[0];
    let quad = |panels: usize| -> Vec<C64> {
        let h = PI / panels as f64;
        let nodes: Vec<(f64, f64)> = (0..panels)
            .flat_map(|j| {
                let a = -0.5 * PI + j as f64 * h;
                gx.iter().zip(&gw).map(move |(x, w)| (a + 0.5 * h * (x + 1.0), 0.5 * h * w)).collect::<Vec<_>>()
            })
            .collect();
        let vals: Vec<Vec<C64>> = nodes.par_iter().map(|(s, _)| flow.lens_rhs(*s, p, 1.0)).collect();
        let mut acc = vec![C64::new(0.0, 0.0); p.len()];
        for (v, (_, w)) in vals.iter().zip(&nodes) {
            for (a, z) in acc.iter_mut().zip(v) {
                *a += w * z;
            }
        }
        acc
    };
    let mut panels = 2;
    let mut prev = quad(panels);
    loop {
        panels *= 2;
        let next = quad(panels);
        let scale = l2(&grid, &next);
        let rel = l2_diff(&grid, &prev, &next) / scale.max(f64::MIN_POSITIVE);
        prev = next;
        if rel <= tol {
            return Ok(FirstOrderResult {
                profile: WaveField::from_components(grid, vec![prev])?,
                panels,
                self_convergence: rel,
            });
        }
        if panels >= 4096 {
            return Err(LabError::NonConvergence(format!("first-order quadrature stuck at {rel:e}")));
        }
    }
}

/// Remainders `||S(d psi) - d psi - d^5 P(psi)||` over a list of `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSlope {
    pub deltas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log residual` against `log d`.
    pub slope: f64,
}

pub fn first_order_expansion_slope(psi: &WaveField, deltas: &[f64], opts: &NlsScatteringOptions) -> Result<ExpansionSlope> {
    if deltas.len() < 2 || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(LabError::InvalidInput("need at least two positive amplitudes".into()));
    }
    let unit = NlsScatteringOptions { coupling: 1.0, ..*opts };
    let p = first_order_scattering(psi, 1e-10)?;
    let residuals = deltas
        .iter()
        .map(|&d| {
            let s = nls_scattering(&psi.scaled(C64::new(d, 0.0)), &unit)?;
            Ok(s.deviation.add_scaled(C64::new(-d.powi(5), 0.0), &p.profile).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let lx: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ExpansionSlope { deltas: deltas.to_vec(), residuals, slope: sxy / sxx })
}

// ---------------------------------------------------------------------------
// Z = F S F^{-1}

#[derive(Debug, Clone)]
pub struct ZetaResult {
    pub profile: WaveField,
    pub scattering: ScatteringResult,
}

/// `Z a0 = F(S(F^{-1} a0))` on a self-dual grid.
pub fn zeta_apply(a0: &WaveField, opts: &NlsScatteringOptions) -> Result<ZetaResult> {
    let psi = inverse_fourier_on_grid(a0)?;
    let scattering = nls_scattering(&psi, opts)?;
    let profile = fourier_on_grid(&scattering.output)?;
    Ok(ZetaResult { profile, scattering })
}

/// Gaussian profile `amplitude exp(-x^2 / (2 width^2)) e^{i (chirp x^2 / 2 + quartic x^4 / 4)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub amplitude: f64,
    pub width: f64,
    #[serde(default)]
    pub chirp: f64,
    #[serde(default)]
    pub quartic: f64,
}

impl Profile {
    pub fn gaussian(amplitude: f64) -> Self {
        Self { amplitude, width: 1.0, chirp: 0.0, quartic: 0.0 }
    }

    pub fn value(&self, x: f64) -> C64 {
        let env = self.amplitude * (-0.5 * x * x / (self.width * self.width)).exp();
        let x2 = x * x;
        C64::from_polar(env, 0.5 * self.chirp * x2 + 0.25 * self.quartic * x2 * x2)
    }

    pub fn sample(&self, grid: &SpatialGrid) -> WaveField {
        WaveField::from_fn(*grid, |p| self.value(p[0]))
    }
}

/// Comparison of `|Z a_{0,1}|` and `|Z a_{0,2}|` for two profiles of equal modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatedPairReport {
    /// `|| |a_{0,1}|^2 - |a_{0,2}|^2 ||_{L^2}` (zero up to rounding).
    pub input_gap: f64,
    /// `|| |Z a_{0,1}|^2 - |Z a_{0,2}|^2 ||_{L^2}`.
    pub output_gap: f64,
    /// `sup | |Z a_{0,1}| - |Z a_{0,2}| |`.
    pub sup_gap: f64,
    /// Oracle tolerance: grid doubling plus step-doubling drift.
    pub tolerance: f64,
    /// Same gap predicted by the first-order expansion `a + F P F^{-1} a` (coupling scaled in).
    pub first_order_gap: f64,
}

fn zeta_moduli(p: &Profile, n: usize, opts: &NlsScatteringOptions) -> Result<(SpatialGrid, Vec<f64>, f64)> {
    let grid = self_dual_grid(n)?;
    let z = zeta_apply(&p.sample(&grid), opts)?;
    let drift = z.scattering.tolerance();
    Ok((grid, z.profile.comps[0].iter().map(|c| c.norm_sqr()).collect(), drift))
}

/// Evaluates the pair `(a, a e^{i m x^4/4})` through `Z` at grid size `n`,
/// with a doubled grid for the tolerance estimate. Quadratic and linear
/// phases would not do: `Z` commutes with multiplication by them up to a
/// unimodular factor (free-flow and translation invariance of `S`).
pub fn modulated_pair(base: &Profile, modulation: f64, n: usize, opts: &NlsScatteringOptions) -> Result<ModulatedPairReport> {
    let second = Profile { quartic: base.quartic + modulation, ..*base };
    let (grid, d1, e1) = zeta_moduli(base, n, opts)?;
    let (_, d2, e2) = zeta_moduli(&second, n, opts)?;
    let h = grid.spacing();
    let l2r = |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * h).sqrt();
    let output_gap = l2r(&d1, &d2);
    let sup_gap = d1.iter().zip(&d2).map(|(a, b)| (a.sqrt() - b.sqrt()).abs()).fold(0.0, f64::max);
    let input_gap = {
        let a1: Vec<f64> = grid.coords().iter().map(|x| base.value(*x).norm_sqr()).collect();
        let a2: Vec<f64> = grid.coords().iter().map(|x| second.value(*x).norm_sqr()).collect();
        l2r(&a1, &a2)
    };
    // grid doubling: compare |Z a|^2 at the coarse points
    let fine = |p: &Profile| -> Result<Vec<f64>> {
        let g2 = self_dual_grid(2 * n)?;
        let z = zeta_apply(&p.sample(&g2), opts)?;
        Ok(trig_interpolate(&z.profile, &grid.coords()).iter().map(|c| c.norm_sqr()).collect())
    };
    let grid_err = l2r(&d1, &fine(base)?).max(l2r(&d2, &fine(&second)?));
    let tolerance = grid_err + e1 + e2;
    let first_order = |p: &Profile| -> Result<Vec<f64>> {
        let a = p.sample(&grid);
        let psi = inverse_fourier_on_grid(&a)?;
        let pp = first_order_scattering(&psi, 1e-10)?;
        let fp = fourier_on_grid(&pp.profile)?;
        let lin = a.add_scaled(C64::new(opts.coupling, 0.0), &fp);
        Ok(lin.comps[0].iter().map(|c| c.norm_sqr()).collect())
    };
    let first_order_gap = l2r(&first_order(base)?, &first_order(&second)?);
    Ok(ModulatedPairReport { input_gap, output_gap, sup_gap, tolerance, first_order_gap })
}

// ---------------------------------------------------------------------------
// potential scattering

/// Reflection/transmission probabilities of a 1D short-range potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCoefficients {
    pub xi0: f64,
    /// Left-outgoing mass fraction (for `xi0 > 0`).
    pub r2: f64,
    /// Right-outgoing mass fraction.
    pub t2: f64,
    /// Momentum standard deviation relative to `|xi0|`.
    pub bandwidth: f64,
    /// Radius beyond which `|U| < 1e-12`.
    pub support_radius: f64,
    pub final_time: f64,
}

impl ScatteringCoefficients {
    pub fn bookkeeping_defect(&self) -> f64 {
        (self.r2 + self.t2 - 1.0).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialScatteringOptions {
    /// Momentum standard deviation of the packet relative to `|xi0|`.
    pub bandwidth: f64,
    /// Grid and step halvings applied to the base resolution.
    pub refine: u32,
    pub dt: f64,
}

impl Default for PotentialScatteringOptions {
    fn default() -> Self {
        Self { bandwidth: 0.07, refine: 0, dt: 0.02 }
    }
}

/// Radius beyond which `|U| < 1e-12`, scanned up to 200.
pub fn support_radius(u: &ScalarShape) -> Result<f64> {
    let h = 1e-3;
    let mut last = 0.0;
    let mut x = 0.0;
    while x <= 200.0 {
        if u.value([x, 0.0]).abs() >= 1e-12 || u.value([-x, 0.0]).abs() >= 1e-12 {
            last = x;
        }
        x += h;
    }
    if last > 199.0 {
        return Err(LabError::InvalidInput("potential is not short-range (|U| >= 1e-12 at |x| = 200)".into()));
    }
    Ok(if last == 0.0 && u.value([0.0, 0.0]).abs() < 1e-12 { 0.0 } else { last + h })
}

/// Geometry shared by the packet experiments: width, start distance, box.
struct PacketSetup {
    sigma: f64,
    dist: f64,
    r_u: f64,
}

impl PacketSetup {
    fn new(u: &ScalarShape, xi0: f64, bandwidth: f64, margin: f64) -> Result<Self> {
        if !(xi0.abs() > 0.0) || !xi0.is_finite() {
            return Err(LabError::InvalidInput("xi0 must be nonzero".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(LabError::InvalidInput("bandwidth must be positive".into()));
        }
        if bandwidth > 0.1 {
            return Err(LabError::UnderResolved(format!(
                "packet bandwidth {bandwidth} exceeds 10% of xi0"
            )));
        }
        let r_u = support_radius(u)?;
        let sigma = 1.0 / (2f64.sqrt() * bandwidth * xi0.abs());
        Ok(Self { sigma, dist: r_u + margin * sigma, r_u })
    }

    fn grid(&self, xi0: f64, half_extent: f64, refine: u32) -> Result<SpatialGrid> {
        let h = (PI / (3.0 * xi0.abs())).min(0.25) / 2f64.powi(refine as i32);
        let n = ((2.0 * half_extent / h).ceil() as usize).next_power_of_two();
        SpatialGrid::new(1, n, half_extent)
    }

    fn packet(&self, grid: &SpatialGrid, center: f64, xi: f64) -> WaveField {
        let s = self.sigma;
        let c = (PI * s * s).powf(-0.25);
        WaveField::from_fn(*grid, |p| {
            let d = p[0] - center;
            C64::from_polar(c * (-0.5 * d * d / (s * s)).exp(), xi * p[0])
        })
    }
}

fn mass_where(f: &WaveField, pred: impl Fn(f64) -> bool) -> f64 {
    let g = f.grid;
    f.comps[0]
        .iter()
        .enumerate()
        .filter(|(i, _)| pred(g.coord(*i)))
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        * g.cell_volume()
}

fn check_boundary(f: &WaveField) -> Result<()> {
    let l = f.grid.half_extent;
    let edge = mass_where(f, |x| x.abs() > 0.9 * l) / f.mass();
    if edge > 1e-9 {
        return Err(LabError::UnderResolved(format!("box too small: {edge:e} of the mass near the boundary")));
    }
    Ok(())
}

/// Wave-packet scattering in the `eps = 1` frame with default options.
pub fn potential_scattering_1d(u: &ScalarShape, xi0: f64) -> Result<ScatteringCoefficients> {
    potential_scattering_1d_with(u, xi0, &PotentialScatteringOptions::default())
}

pub fn potential_scattering_1d_with(
    u: &ScalarShape,
    xi0: f64,
    opts: &PotentialScatteringOptions,
) -> Result<ScatteringCoefficients> {
    let setup = PacketSetup::new(u, xi0, opts.bandwidth, 6.0)?;
    let speed = xi0.abs();
    let grid = setup.grid(xi0, 5.0 * setup.dist, opts.refine)?;
    let dt = opts.dt / 2f64.powi(opts.refine as i32);
    let mut f = setup.packet(&grid, -xi0.signum() * setup.dist, xi0);
    let m0 = f.mass();
    let spec = HamiltonianSpec::linear(PotentialSpec::EvenShortRange(*u));
    let prop = Propagator::new(&grid, 1.0, dt, &spec)?;
    let chunk = (1.0 / dt).round().max(1.0) as usize;
    let arrive = setup.dist / speed;
    let zone = setup.r_u + 1.0;
    let mut t = 0.0;
    let mut cleared_at = None;
    while cleared_at.map_or(true, |tc| t < tc + arrive) {
        prop.run(&mut f, t, chunk, |_| false, |_, _, _| Ok(()))?;
        t += chunk as f64 * dt;
        if cleared_at.is_none() && t >= arrive && mass_where(&f, |x| x.abs() <= zone) <= 1e-6 * m0 {
            cleared_at = Some(t);
        }
        if t > 20.0 * arrive + 100.0 {
            return Err(LabError::NonConvergence("mass does not leave the interaction region".into()));
        }
    }
    check_boundary(&f)?;
    let left = mass_where(&f, |x| x < 0.0) / m0;
    let right = mass_where(&f, |x| x >= 0.0) / m0;
    let (r2, t2) = if xi0 > 0.0 { (left, right) } else { (right, left) };
    Ok(ScatteringCoefficients {
        xi0,
        r2,
        t2,
        bandwidth: opts.bandwidth,
        support_radius: setup.r_u,
        final_time: t,
    })
}

/// Stationary reflection probability at momentum `xi`: integrates
/// `u'' = 2(U - xi^2/2) u` from the transmitted wave on the right.
pub fn stationary_reflection(u: &ScalarShape, xi: f64) -> Result<f64> {
    if !(xi.abs() > 0.0) {
        return Err(LabError::InvalidInput("xi must be nonzero".into()));
    }
    let k = xi.abs();
    let x1 = support_radius(u)? + 1.0;
    let steps = ((2.0 * x1) / (1e-3f64).min(0.01 / k)).ceil() as usize;
    let h = -2.0 * x1 / steps as f64;
    let e = 0.5 * k * k;
    let rhs = |x: f64, y: [C64; 2]| [y[1], 2.0 * (u.value([x, 0.0]) - e) * y[0]];
    let mut x = x1;
    let mut y = [C64::from_polar(1.0, k * x1), I * k * C64::from_polar(1.0, k * x1)];
    for _ in 0..steps {
        let k1 = rhs(x, y);
        let k2 = rhs(x + 0.5 * h, [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = rhs(x + 0.5 * h, [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = rhs(x + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        for j in 0..2 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        x += h;
    }
    // u = A e^{ikx} + B e^{-ikx} at the left end
    let a = (I * k * y[0] + y[1]) / (2.0 * I * k) * C64::from_polar(1.0, -k * x);
    let b = (I * k * y[0] - y[1]) / (2.0 * I * k) * C64::from_polar(1.0, k * x);
    Ok(b.norm_sqr() / a.norm_sqr())
}

/// Stationary reflection averaged over the packet's momentum density.
pub fn packet_reflection(u: &ScalarShape, xi0: f64, bandwidth: f64) -> Result<f64> {
    let s = bandwidth * xi0.abs();
    let (gx, gw) = gauss_legendre(8);
    let panels = 8;
    let h = 12.0 * s / panels as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..panels {
        let a = xi0 - 6.0 * s + j as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            let xi = a + 0.5 * h * (x + 1.0);
            let rho = (-0.5 * ((xi - xi0) / s).powi(2)).exp() * 0.5 * h * w;
            num += rho * stationary_reflection(u, xi)?;
            den += rho;
        }
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// time-reversed packet pair

/// Phase-space quadrant masses, ordered
/// `[(x<0, xi<0), (x<0, xi>0), (x>0, xi<0), (x>0, xi>0)]`.
pub fn quadrant_masses(f: &WaveField) -> [f64; 4] {
    let g = f.grid;
    let engine = FftEngine::new(&g);
    let scale = g.cell_volume() / g.n as f64;
    let mut out = [0.0; 4];
    for (half, right) in [false, true].into_iter().enumerate() {
        let mut buf: Vec<C64> = f.comps[0]
            .iter()
            .enumerate()
            .map(|(i, z)| if (g.coord(i) >= 0.0) == right { *z } else { C64::new(0.0, 0.0) })
            .collect();
        engine.forward(&mut buf);
        for (m, z) in buf.iter().enumerate() {
            let w = z.norm_sqr() * scale;
            match g.signed_mode(m) {
                0 => {
                    out[2 * half] += 0.5 * w;
                    out[2 * half + 1] += 0.5 * w;
                }
                k if k < 0 => out[2 * half] += w,
                _ => out[2 * half + 1] += w,
            }
        }
    }
    out
}

fn total_variation(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    pub potential: ScalarShape,
    pub xi0: f64,
    pub bandwidth: f64,
    pub dt: f64,
    /// Random relative phases averaged for the incoherent family.
    pub phase_samples: usize,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            potential: ScalarShape::GaussianBarrier { height: 2.0, width: 1.0 },
            xi0: 2.0,
            bandwidth: 0.07,
            dt: 0.02,
            phase_samples: 1024,
            seed: 7,
        }
    }
}

/// Outcome of the time-reversed pair: `psi_breve(t, x) = conj(psi(-t, -x))`
/// against `psi_tilde = sqrt(1-R^2) P(-x0, xi0) + e^{i theta} R P(x0, -xi0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub r2: f64,
    pub t2: f64,
    pub bookkeeping_defect: f64,
    /// Stationary reflection averaged over the packet spectrum.
    pub oracle_r2: f64,
    pub breve_in: [f64; 4],
    pub breve_out: [f64; 4],
    pub tilde_in: [f64; 4],
    pub tilde_out: [f64; 4],
    /// Largest per-quadrant gap between the incoming masses.
    pub incoming_gap: f64,
    /// Total variation between the outgoing masses.
    pub outgoing_tv: f64,
    /// `((1-R^2)^2 + R^4, 2 R^2 (1-R^2))`.
    pub predicted_split: [f64; 2],
    /// Incoherent family: forward-transmitted and backward quadrants.
    pub measured_split: [f64; 2],
    /// Largest relative deviation of the measured split.
    pub split_deviation: f64,
}

fn normalized(q: [f64; 4]) -> [f64; 4] {
    let s: f64 = q.iter().sum();
    q.map(|v| v / s)
}

/// Runs the single packet, the time-reversed family and the phase-averaged
/// family; all masses are normalized to one.
pub fn packet_pair_experiment(cfg: &PairConfig) -> Result<PairReport> {
    if cfg.xi0 <= 0.0 {
        return Err(LabError::InvalidInput("pair experiment launches from the left: xi0 > 0".into()));
    }
    if cfg.phase_samples == 0 {
        return Err(LabError::InvalidInput("need at least one phase sample".into()));
    }
    let setup = PacketSetup::new(&cfg.potential, cfg.xi0, cfg.bandwidth, 8.0)?;
    let x0 = setup.dist;
    let half_time = x0 / cfg.xi0;
    let grid = setup.grid(cfg.xi0, 3.0 * x0, 0)?;
    let steps = (2.0 * half_time / cfg.dt).round() as usize;
    let spec = HamiltonianSpec::linear(PotentialSpec::EvenShortRange(cfg.potential));
    let prop = Propagator::new(&grid, 1.0, cfg.dt, &spec)?;
    let evolve = |f: &WaveField| -> Result<WaveField> {
        let mut g = f.clone();
        prop.run(&mut g, -half_time, steps, |_| false, |_, _, _| Ok(()))?;
        check_boundary(&g)?;
        Ok(g)
    };

    let incoming = setup.packet(&grid, -x0, cfg.xi0);
    let m0 = incoming.mass();
    let single = evolve(&incoming)?;
    let r2 = mass_where(&single, |x| x < 0.0) / m0;
    let t2 = mass_where(&single, |x| x >= 0.0) / m0;

    let breve0 = single.reflected().conj();
    let breve1 = evolve(&breve0)?;
    let breve_in = normalized(quadrant_masses(&breve0));
    let breve_out = normalized(quadrant_masses(&breve1));

    let r = r2.sqrt();
    let a0 = incoming.scaled(C64::new(t2.sqrt(), 0.0));
    let b0 = setup.packet(&grid, x0, -cfg.xi0).scaled(C64::new(r, 0.0));
    let a1 = evolve(&a0)?;
    let b1 = evolve(&b0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tilde_in = [0.0; 4];
    let mut tilde_out = [0.0; 4];
    for _ in 0..cfg.phase_samples {
        let ph = C64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
        let qi = normalized(quadrant_masses(&a0.add_scaled(ph, &b0)));
        let qo = normalized(quadrant_masses(&a1.add_scaled(ph, &b1)));
        for q in 0..4 {
            tilde_in[q] += qi[q] / cfg.phase_samples as f64;
            tilde_out[q] += qo[q] / cfg.phase_samples as f64;
        }
    }
    let incoming_gap = breve_in.iter().zip(&tilde_in).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let predicted_split = [(1.0 - r2).powi(2) + r2 * r2, 2.0 * r2 * (1.0 - r2)];
    let measured_split = [tilde_out[3], tilde_out[0]];
    let split_deviation = predicted_split
        .iter()
        .zip(&measured_split)
        .map(|(p, m)| (m - p).abs() / p)
        .fold(0.0, f64::max);
    Ok(PairReport {
        r2,
        t2,
        bookkeeping_defect: (r2 + t2 - 1.0).abs(),
        oracle_r2: packet_reflection(&cfg.potential, cfg.xi0, cfg.bandwidth)?,
        breve_in,
        breve_out,
        tilde_in,
        tilde_out,
        incoming_gap,
        outgoing_tv: total_variation(&breve_out, &tilde_out),
        predicted_split,
        measured_split,
        split_deviation,
    })
}

// ---------------------------------------------------------------------------
// caustic crossing

/// `i eps psi_t = -eps^2/2 psi'' + eps^2 |psi|^4 psi`, `psi(0) = a0 e^{-i x^2/(2 eps)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausticConfig {
    pub eps: f64,
    pub profile: Profile,
    pub n: usize,
    pub half_extent: f64,
    pub dt: f64,
    pub t_pre: f64,
    pub t_post: f64,
    /// Self-dual grid size for `Z a0`.
    pub zeta_n: usize,
    pub scattering: NlsScatteringOptions,
}

impl CausticConfig {
    /// Box `[-6, 6]`, Nyquist above `1.4 * 6 / eps`, `dt = eps / 20`.
    pub fn for_eps(eps: f64, profile: Profile) -> Self {
        let l = 6.0;
        let n = ((2.0 * l * 1.4 * l / eps / PI).ceil() as usize).next_power_of_two();
        Self {
            eps,
            profile,
            n,
            half_extent: l,
            dt: eps / 20.0,
            t_pre: 0.5,
            t_post: 2.0,
            zeta_n: 256,
            scattering: NlsScatteringOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausticReport {
    pub eps: f64,
    /// Relative L2 distance to the linear dilation at `t_pre`.
    pub pre_error: f64,
    /// Relative L2 distance to the dilated `Z a0` profile at `t_post`.
    pub post_error: f64,
    /// Same distance with `a0` in place of `Z a0` (what a linear focus would give).
    pub post_error_linear: f64,
    pub max_mass_drift: f64,
    pub zeta_norm_defect: f64,
}

/// Pre-focus prediction `(1-t)^{-1/2} a0(x/(1-t)) e^{i x^2/(2 eps (t-1))}`.
/// Post-focus it carries the extra factor `e^{-i pi/2}`; `amp` gets `(index, x/(1-t))`.
fn dilation(grid: &SpatialGrid, eps: f64, t: f64, amp: impl Fn(usize, f64) -> C64) -> WaveField {
    let s = (1.0 - t).abs();
    let pre = if t > 1.0 { C64::from_polar(s.powf(-0.5), -0.5 * PI) } else { C64::new(s.powf(-0.5), 0.0) };
    let comp = (0..grid.n)
        .map(|i| {
            let x = grid.coord(i);
            pre * amp(i, x / (1.0 - t)) * C64::from_polar(1.0, x * x / (2.0 * eps * (t - 1.0)))
        })
        .collect();
    WaveField { grid: *grid, comps: vec![comp] }
}

pub fn caustic_experiment(cfg: &CausticConfig) -> Result<CausticReport> {
    if !(cfg.t_pre > 0.0 && cfg.t_pre < 1.0 && cfg.t_post > 1.0) {
        return Err(LabError::InvalidInput("need 0 < t_pre < 1 < t_post".into()));
    }
    let grid = SpatialGrid::new(1, cfg.n, cfg.half_extent)?;
    let eps = cfg.eps;
    let p = cfg.profile;
    let psi0 = WaveField::from_fn(grid, |q| p.value(q[0]) * C64::from_polar(1.0, -q[0] * q[0] / (2.0 * eps)));
    let spec = HamiltonianSpec {
        potential: PotentialSpec::zero(),
        nonlinearity: Some(Nonlinearity::with_strength(2.0, 2.0, cfg.scattering.coupling)?),
    };
    let k_pre = step_count(0.0, cfg.t_pre, cfg.dt)?;
    let k_post = step_count(0.0, cfg.t_post, cfg.dt)?;
    let prop = Propagator::new(&grid, eps, cfg.dt, &spec)?;
    let m0 = psi0.mass();
    let mut f = psi0;
    let mut pre = None;
    let mut drift: f64 = 0.0;
    prop.run(
        &mut f,
        0.0,
        k_post,
        |k| k == k_pre || k % 1000 == 0,
        |k, _, g| {
            drift = drift.max((g.mass() - m0).abs() / m0);
            if k == k_pre {
                pre = Some(g.clone());
            }
            Ok(())
        },
    )?;
    let pre = pre.expect("pre-focus snapshot");
    let pre_ref = dilation(&grid, eps, cfg.t_pre, |_, y| p.value(y));
    let pre_error = pre.distance(&pre_ref) / pre_ref.norm();

    let zgrid = self_dual_grid(cfg.zeta_n)?;
    let z = zeta_apply(&p.sample(&zgrid), &cfg.scattering)?;
    let t = cfg.t_post;
    let pts: Vec<f64> = grid.coords().iter().map(|x| x / (1.0 - t)).collect();
    let zvals = trig_interpolate(&z.profile, &pts);
    let zl = zgrid.half_extent;
    let post_ref = dilation(&grid, eps, t, |i, y| if y.abs() >= zl { C64::new(0.0, 0.0) } else { zvals[i] });
    let post_error = f.distance(&post_ref) / post_ref.norm();
    let lin_ref = dilation(&grid, eps, t, |_, y| p.value(y));
    let post_error_linear = f.distance(&lin_ref) / lin_ref.norm();
    Ok(CausticReport {
        eps,
        pre_error,
        post_error,
        post_error_linear,
        max_mass_drift: drift,
        zeta_norm_defect: z.scattering.norm_defect,
    })
}
