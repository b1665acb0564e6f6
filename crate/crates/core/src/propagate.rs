//! Strang split-operator propagation of
//! `i eps d_t psi = -(eps^2/2) Lap psi + V psi + g eps^kappa |psi|^{2 sigma} psi`.

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};
use crate::fft::FftEngine;
use crate::field::WaveField;
use crate::grid::SpatialGrid;
use crate::potential::PotentialSpec;

/// Gauge-invariant power nonlinearity `strength * eps^kappa * |psi|^{2 sigma}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nonlinearity {
    pub kappa: f64,
    pub sigma: f64,
    pub strength: f64,
}

impl Nonlinearity {
    pub fn new(kappa: f64, sigma: f64) -> Result<Self> {
        Self::with_strength(kappa, sigma, 1.0)
    }

    pub fn with_strength(kappa: f64, sigma: f64, strength: f64) -> Result<Self> {
        if kappa < 0.0 || sigma <= 0.0 || !strength.is_finite() {
            return Err(LabError::InvalidInput(format!(
                "nonlinearity needs kappa >= 0 and sigma > 0 (kappa={kappa}, sigma={sigma})"
            )));
        }
        Ok(Self { kappa, sigma, strength })
    }
}

#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub potential: PotentialSpec,
    pub nonlinearity: Option<Nonlinearity>,
}

impl HamiltonianSpec {
    pub fn linear(potential: PotentialSpec) -> Self {
        Self { potential, nonlinearity: None }
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }
}

/// Free flow over a duration `dt`: multiplier `e^{-i eps |xi|^2 dt / 2}`.
pub fn kinetic_half_step(field: &WaveField, eps: f64, dt: f64) -> WaveField {
    let engine = FftEngine::new(&field.grid);
    let mult = kinetic_multiplier(&field.grid, eps, dt);
    let mut out = field.clone();
    for c in out.comps.iter_mut() {
        apply_spectral(&engine, c, &mult);
    }
    out
}

/// Pointwise `e^{-i V dt / eps}`.
pub fn potential_step_scalar(field: &WaveField, v: &[f64], eps: f64, dt: f64) -> WaveField {
    let mut out = field.clone();
    for c in out.comps.iter_mut() {
        for (z, vi) in c.iter_mut().zip(v) {
            *z *= C64::from_polar(1.0, -vi * dt / eps);
        }
    }
    out
}

/// Pointwise `cos(dt|x|/eps) I - i sin(dt|x|/eps) V(x)/|x|`.
pub fn potential_step_matrix(field: &WaveField, eps: f64, dt: f64) -> Result<WaveField> {
    if field.ncomp() != 2 || field.grid.dim != 2 {
        return Err(LabError::InvalidInput("matrix step needs a 2-component 2D field".into()));
    }
    let coeffs = matrix_coefficients(&field.grid, eps, dt);
    let mut out = field.clone();
    apply_matrix(&mut out, &coeffs);
    Ok(out)
}

/// Pointwise `e^{-i dt eps^{kappa-1} |psi|^{2 sigma}}` with unit strength.
pub fn nonlinear_step(field: &WaveField, eps: f64, dt: f64, kappa: f64, sigma: f64) -> WaveField {
    let mut out = field.clone();
    apply_nonlinear(&mut out, eps, dt, &Nonlinearity { kappa, sigma, strength: 1.0 });
    out
}

fn kinetic_multiplier(grid: &SpatialGrid, eps: f64, dt: f64) -> Vec<C64> {
    grid.xi_sq().iter().map(|k2| C64::from_polar(1.0, -0.5 * eps * k2 * dt)).collect()
}

fn apply_spectral(engine: &FftEngine, c: &mut [C64], mult: &[C64]) {
    engine.forward(c);
    let s = 1.0 / c.len() as f64;
    for (z, m) in c.iter_mut().zip(mult) {
        *z *= m * s;
    }
    engine.inverse(c);
}

/// Per point `(cos, sin(dt|x|/eps)/|x|)`.
fn matrix_coefficients(grid: &SpatialGrid, eps: f64, dt: f64) -> Vec<(f64, f64)> {
    (0..grid.len())
        .map(|i| {
            let x = grid.point(i);
            let r = x[0].hypot(x[1]);
            if r == 0.0 {
                (1.0, dt / eps)
            } else {
                let (s, c) = (dt * r / eps).sin_cos();
                (c, s / r)
            }
        })
        .collect()
}

fn apply_matrix(field: &mut WaveField, coeffs: &[(f64, f64)]) {
    let g = field.grid;
    let (first, second) = field.comps.split_at_mut(1);
    let (a, b) = (&mut first[0], &mut second[0]);
    for i in 0..g.len() {
        let x = g.point(i);
        let (c, s) = coeffs[i];
        let (u, v) = (a[i], b[i]);
        let vu = x[0] * u + x[1] * v;
        let vv = x[1] * u - x[0] * v;
        let mi = C64::new(0.0, -s);
        a[i] = c * u + mi * vu;
        b[i] = c * v + mi * vv;
    }
}

fn apply_nonlinear(field: &mut WaveField, eps: f64, dt: f64, nl: &Nonlinearity) {
    let rate = dt * nl.strength * eps.powf(nl.kappa - 1.0);
    let dens = field.density();
    let phases: Vec<C64> = dens
        .iter()
        .map(|rho| C64::from_polar(1.0, -rate * if nl.sigma == 1.0 { *rho } else { rho.powf(nl.sigma) }))
        .collect();
    for c in field.comps.iter_mut() {
        for (z, p) in c.iter_mut().zip(&phases) {
            *z *= p;
        }
    }
}

/// Options for [`strang_evolve`].
#[derive(Debug, Clone)]
pub struct EvolveOptions {
    /// Times at which value copies are stored (rounded to the nearest step).
    pub snapshot_times: Vec<f64>,
    /// Call the observer every this many steps (0 = never).
    pub observe_every: usize,
    /// Abort when the relative mass drift exceeds this.
    pub drift_abort: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { snapshot_times: Vec::new(), observe_every: 0, drift_abort: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionResult {
    pub field: WaveField,
    pub snapshots: Vec<(f64, WaveField)>,
    /// Relative mass drift `|m_k - m_0| / m_0` after every step.
    pub mass_drift: Vec<f64>,
    pub steps: usize,
}

impl EvolutionResult {
    pub fn max_drift(&self) -> f64 {
        self.mass_drift.iter().copied().fold(0.0, f64::max)
    }
}

enum PotStep {
    None,
    Scalar(Vec<C64>),
    TimeDependent,
    Matrix(Vec<(f64, f64)>),
}

/// Precomputed split-step propagator for a fixed `(grid, eps, dt)`.
pub struct Propagator {
    grid: SpatialGrid,
    eps: f64,
    dt: f64,
    spec: HamiltonianSpec,
    engine: FftEngine,
    half: Vec<C64>,
    full: Vec<C64>,
    pot: PotStep,
}

impl Propagator {
    pub fn new(grid: &SpatialGrid, eps: f64, dt: f64, spec: &HamiltonianSpec) -> Result<Self> {
        if !(eps > 0.0) || !(dt > 0.0) {
            return Err(LabError::InvalidInput("eps and dt must be positive".into()));
        }
        spec.potential.validate(grid)?;
        let pot = match &spec.potential {
            PotentialSpec::MatrixCrossing => PotStep::Matrix(matrix_coefficients(grid, eps, dt)),
            PotentialSpec::TimeDependent(_) => PotStep::TimeDependent,
            p => {
                let v = p.scalar_samples(grid, 0.0).expect("scalar potential");
                if v.iter().all(|x| *x == 0.0) {
                    PotStep::None
                } else {
                    PotStep::Scalar(v.iter().map(|vi| C64::from_polar(1.0, -vi * dt / eps)).collect())
                }
            }
        };
        Ok(Self {
            grid: *grid,
            eps,
            dt,
            spec: spec.clone(),
            engine: FftEngine::new(grid),
            half: kinetic_multiplier(grid, eps, 0.5 * dt),
            full: kinetic_multiplier(grid, eps, dt),
            pot,
        })
    }

    fn kinetic(&self, f: &mut WaveField, full: bool) {
        let m = if full { &self.full } else { &self.half };
        for c in f.comps.iter_mut() {
            apply_spectral(&self.engine, c, m);
        }
    }

    fn local(&self, f: &mut WaveField, t_mid: f64) {
        match &self.pot {
            PotStep::None => {}
            PotStep::Scalar(ph) => {
                for c in f.comps.iter_mut() {
                    for (z, p) in c.iter_mut().zip(ph) {
                        *z *= p;
                    }
                }
            }
            PotStep::TimeDependent => {
                let v = self.spec.potential.scalar_samples(&self.grid, t_mid).expect("scalar");
                for c in f.comps.iter_mut() {
                    for (z, vi) in c.iter_mut().zip(&v) {
                        *z *= C64::from_polar(1.0, -vi * self.dt / self.eps);
                    }
                }
            }
            PotStep::Matrix(coeffs) => apply_matrix(f, coeffs),
        }
        if let Some(nl) = &self.spec.nonlinearity {
            apply_nonlinear(f, self.eps, self.dt, nl);
        }
    }

    /// One Strang step `K(dt/2) L(dt) K(dt/2)` starting at time `t`.
    pub fn step(&self, f: &mut WaveField, t: f64) {
        self.kinetic(f, false);
        self.local(f, t + 0.5 * self.dt);
        self.kinetic(f, false);
    }

    /// `steps` Strang steps with fused kinetic half-steps; `observe(k, t, field)`
    /// runs after step `k` whenever `want(k)` is true and after the last step.
    pub fn run(
        &self,
        f: &mut WaveField,
        t0: f64,
        steps: usize,
        mut want: impl FnMut(usize) -> bool,
        mut observe: impl FnMut(usize, f64, &WaveField) -> Result<()>,
    ) -> Result<()> {
        if steps == 0 {
            return Ok(());
        }
        self.kinetic(f, false);
        for k in 1..=steps {
            let t = t0 + (k - 1) as f64 * self.dt;
            self.local(f, t + 0.5 * self.dt);
            let last = k == steps;
            if last || want(k) {
                self.kinetic(f, false);
                observe(k, t0 + k as f64 * self.dt, f)?;
                if !last {
                    self.kinetic(f, false);
                }
            } else {
                self.kinetic(f, true);
            }
        }
        Ok(())
    }
}

/// Number of steps of size `dt` covering `[t0, t1]`; `dt` must divide the interval.
pub fn step_count(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    let span = t1 - t0;
    if span < 0.0 || !(dt > 0.0) {
        return Err(LabError::InvalidInput("need t1 >= t0 and dt > 0".into()));
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(LabError::InvalidInput(format!("dt = {dt} does not divide the interval {span}")));
    }
    Ok(n as usize)
}

pub fn strang_evolve(
    field: &WaveField,
    spec: &HamiltonianSpec,
    eps: f64,
    t0: f64,
    t1: f64,
    dt: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    strang_evolve_observed(field, spec, eps, t0, t1, dt, opts, |_, _| Ok(()))
}

/// [`strang_evolve`] with a streaming observer called every `opts.observe_every` steps.
#[allow(clippy::too_many_arguments)]
pub fn strang_evolve_observed(
    field: &WaveField,
    spec: &HamiltonianSpec,
    eps: f64,
    t0: f64,
    t1: f64,
    dt: f64,
    opts: &EvolveOptions,
    mut observer: impl FnMut(f64, &WaveField) -> Result<()>,
) -> Result<EvolutionResult> {
    if !field.is_finite() {
        return Err(LabError::InvalidInput("field has non-finite values".into()));
    }
    if spec.potential.is_matrix() && field.ncomp() != 2 {
        return Err(LabError::InvalidInput("matrix potential needs a 2-component field".into()));
    }
    let steps = step_count(t0, t1, dt)?;
    let prop = Propagator::new(&field.grid, eps, dt, spec)?;
    let mut snap_steps: Vec<usize> =
        opts.snapshot_times.iter().map(|t| ((t - t0) / dt).round().max(0.0) as usize).collect();
    snap_steps.dedup();
    if snap_steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::InvalidInput("snapshot times must be strictly increasing".into()));
    }
    let m0 = field.mass();
    let mut f = field.clone();
    let mut snapshots = Vec::new();
    if snap_steps.first() == Some(&0) {
        snapshots.push((t0, f.clone()));
    }
    if opts.observe_every > 0 {
        observer(t0, &f)?;
    }
    let mut drift = Vec::with_capacity(steps);
    let every = opts.observe_every;
    // mass is checked every step, so every step is an observation point
    prop.run(
        &mut f,
        t0,
        steps,
        |_| true,
        |k, t, cur| {
            let m = cur.mass();
            let d = if m0 > 0.0 { (m - m0).abs() / m0 } else { m };
            drift.push(d);
            if d > opts.drift_abort {
                return Err(LabError::MassDrift { drift: d, limit: opts.drift_abort, time: t });
            }
            if snap_steps.binary_search(&k).is_ok() {
                snapshots.push((t, cur.clone()));
            }
            if every > 0 && (k % every == 0 || k == steps) {
                observer(t, cur)?;
            }
            Ok(())
        },
    )?;
    Ok(EvolutionResult { field: f, snapshots, mass_drift: drift, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::ScalarShape;
    use std::f64::consts::PI;

    fn gaussian_1d(g: SpatialGrid, eps: f64, x0: f64, p0: f64) -> WaveField {
        let c = (PI * eps).powf(-0.25);
        WaveField::from_fn(g, |x| {
            C64::from_polar(c * (-(x[0] - x0).powi(2) / (2.0 * eps)).exp(), p0 * x[0] / eps)
        })
    }

    #[test]
    fn plane_wave_phase_advance() {
        let g = SpatialGrid::new(1, 64, PI).unwrap();
        let (eps, dt) = (0.1, 0.37);
        let m = 5usize;
        let xi = g.xi(m);
        let f = WaveField::from_fn(g, |x| C64::from_polar(1.0, xi * x[0]));
        let out = kinetic_half_step(&f, eps, dt);
        let ph = C64::from_polar(1.0, -0.5 * eps * xi * xi * dt);
        for i in 0..g.n {
            assert!((out.comps[0][i] - f.comps[0][i] * ph).norm() <= 1e-14);
        }
        let same = kinetic_half_step(&f, eps, 0.0);
        assert!(same.distance(&f) <= 1e-13);
    }

    #[test]
    fn free_gaussian_spreads_by_closed_form() {
        let eps = 1e-2;
        let g = SpatialGrid::new(1, 1024, 4.0).unwrap();
        let f0 = gaussian_1d(g, eps, 0.0, 0.0);
        let spec = HamiltonianSpec::linear(PotentialSpec::zero());
        let r = strang_evolve(&f0, &spec, eps, 0.0, 1.0, eps / 20.0, &EvolveOptions::default()).unwrap();
        let z = C64::new(1.0, 1.0);
        let c = (PI * eps).powf(-0.25);
        let exact = WaveField::from_fn(g, |x| c / z.sqrt() * (-(x[0] * x[0]) / (2.0 * eps * z)).exp());
        assert!(r.field.distance(&exact) <= 1e-6, "{:e}", r.field.distance(&exact));
    }

    #[test]
    fn scalar_step_cases() {
        let g = SpatialGrid::new(1, 32, 2.0).unwrap();
        let f = gaussian_1d(g, 0.1, 0.3, 0.5);
        let zero = potential_step_scalar(&f, &vec![0.0; g.n], 0.1, 0.2);
        assert_eq!(zero, f);
        let c = potential_step_scalar(&f, &vec![1.5; g.n], 0.1, 0.2);
        let ph = C64::from_polar(1.0, -1.5 * 0.2 / 0.1);
        for i in 0..g.n {
            assert!((c.comps[0][i] - f.comps[0][i] * ph).norm() <= 1e-15);
        }
        let v: Vec<f64> = g.coords().iter().map(|x| 30.0 * x.sin()).collect();
        let w = potential_step_scalar(&f, &v, 0.1, 0.2);
        for i in 0..g.n {
            assert!((w.comps[0][i].norm() - f.comps[0][i].norm()).abs() <= 1e-15);
        }
    }

    #[test]
    fn matrix_step_cases() {
        let g = SpatialGrid::new(2, 16, 1.0).unwrap();
        let (eps, dt) = (0.05, 0.3);
        let f = WaveField::from_components(
            g,
            vec![
                (0..g.len()).map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect(),
                (0..g.len()).map(|i| C64::new((i as f64 * 0.23).cos(), (i as f64 * 0.71).sin())).collect(),
            ],
        )
        .unwrap();
        let out = potential_step_matrix(&f, eps, dt).unwrap();
        for i in 0..g.len() {
            let x = g.point(i);
            let n0 = f.comps[0][i].norm_sqr() + f.comps[1][i].norm_sqr();
            let n1 = out.comps[0][i].norm_sqr() + out.comps[1][i].norm_sqr();
            assert!((n0 - n1).abs() <= 1e-14 * n0.max(1.0));
            if x[1] == 0.0 {
                let a = f.comps[0][i] * C64::from_polar(1.0, -dt * x[0] / eps);
                let b = f.comps[1][i] * C64::from_polar(1.0, dt * x[0] / eps);
                assert!((out.comps[0][i] - a).norm() <= 1e-14);
                assert!((out.comps[1][i] - b).norm() <= 1e-14);
            }
            if x == [0.0, 0.0] {
                assert_eq!(out.comps[0][i], f.comps[0][i]);
                assert_eq!(out.comps[1][i], f.comps[1][i]);
            }
        }
        // dense 2x2 exponential via its own power series at a few points
        for &x in &[[0.3, -0.7], [-0.9, 0.2], [0.05, 0.6]] {
            let a = -dt / eps;
            let m = [[x[0], x[1]], [x[1], -x[0]]];
            let mut term = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
            let mut sum = term;
            for k in 1..80 {
                let mut next = [[C64::new(0.0, 0.0); 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        next[i][j] = (term[i][0] * m[0][j] + term[i][1] * m[1][j]) * C64::new(0.0, a) / k as f64;
                    }
                }
                term = next;
                for i in 0..2 {
                    for j in 0..2 {
                        sum[i][j] += term[i][j];
                    }
                }
            }
            let r = x[0].hypot(x[1]);
            let (s, c) = (dt * r / eps).sin_cos();
            for i in 0..2 {
                for j in 0..2 {
                    let id = if i == j { 1.0 } else { 0.0 };
                    let closed = C64::new(c * id, -s * m[i][j] / r);
                    assert!((closed - sum[i][j]).norm() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonlinear_step_cases() {
        let g = SpatialGrid::new(1, 32, 2.0).unwrap();
        let z = nonlinear_step(&WaveField::zeros(g, 1), 0.1, 0.2, 1.0, 1.0);
        assert!(z.comps[0].iter().all(|v| *v == C64::new(0.0, 0.0)));
        let m = 1.7;
        let f = WaveField::from_fn(g, |x| C64::from_polar(m, 3.0 * x[0]));
        let (eps, dt, kappa, sigma) = (0.05, 0.01, 2.0, 1.5);
        let out = nonlinear_step(&f, eps, dt, kappa, sigma);
        let ph = C64::from_polar(1.0, -dt * eps.powf(kappa - 1.0) * m.powf(2.0 * sigma));
        for i in 0..g.n {
            assert!((out.comps[0][i] - f.comps[0][i] * ph).norm() <= 1e-14);
        }
        assert!((out.mass() - f.mass()).abs() <= 1e-15 * f.mass());
    }

    #[test]
    fn harmonic_refocus() {
        let eps = 1e-2;
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        let f0 = gaussian_1d(g, eps, 0.5, 1.0).add_scaled(C64::new(0.3, 0.2), &gaussian_1d(g, eps, -0.8, -0.4));
        let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::Harmonic { omega: 1.0 }));
        let r = strang_evolve(&f0, &spec, eps, 0.0, PI, PI / (PI / (eps / 20.0)).round(), &EvolveOptions::default()).unwrap();
        let refl = f0.reflected();
        let d: f64 = (0..g.n)
            .map(|i| (r.field.comps[0][i].norm() - refl.comps[0][i].norm()).powi(2))
            .sum::<f64>()
            * g.spacing();
        assert!(d.sqrt() <= 1e-4 * f0.norm(), "{:e}", d.sqrt());
    }

    #[test]
    fn second_order_self_convergence() {
        let eps = 0.1;
        let g = SpatialGrid::new(1, 256, 6.0).unwrap();
        let f0 = gaussian_1d(g, eps, 0.4, 0.3);
        let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::Quartic { a2: 1.0, a4: 0.2 }));
        let run = |dt: f64| strang_evolve(&f0, &spec, eps, 0.0, 1.0, dt, &EvolveOptions::default()).unwrap().field;
        let (a, b, c) = (run(0.02), run(0.01), run(0.005));
        let ratio = a.distance(&b) / b.distance(&c);
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
    }

    #[test]
    fn free_fourier_mode_is_exact() {
        let g = SpatialGrid::new(2, 32, 1.0).unwrap();
        let eps = 0.2;
        let (m0, m1) = (3usize, 29usize);
        let xi = [g.xi(m0), g.xi(m1)];
        let f = WaveField::from_fn(g, |x| C64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]));
        let spec = HamiltonianSpec::linear(PotentialSpec::zero());
        let r = strang_evolve(&f, &spec, eps, 0.0, 0.5, 0.01, &EvolveOptions::default()).unwrap();
        let ph = C64::from_polar(1.0, -0.5 * eps * (xi[0] * xi[0] + xi[1] * xi[1]) * 0.5);
        let worst = (0..g.len()).map(|i| (r.field.comps[0][i] - f.comps[0][i] * ph).norm()).fold(0.0, f64::max);
        assert!(worst <= 1e-12, "{worst:e}");
    }

    #[test]
    fn time_reversal_returns_initial_field() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        let f0 = gaussian_1d(g, eps, -0.5, 0.8);
        let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::GaussianBarrier { height: 0.3, width: 0.5 }));
        let opts = EvolveOptions::default();
        let fwd = strang_evolve(&f0, &spec, eps, 0.0, 1.0, 0.005, &opts).unwrap().field;
        let back = strang_evolve(&fwd.conj(), &spec, eps, 0.0, 1.0, 0.005, &opts).unwrap().field.conj();
        assert!(back.distance(&f0) <= 1e-8, "{:e}", back.distance(&f0));
    }

    #[test]
    fn linear_mass_drift_over_many_steps() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 256, 4.0).unwrap();
        let f0 = gaussian_1d(g, eps, 0.5, 0.3);
        let spec = HamiltonianSpec::linear(PotentialSpec::Scalar(ScalarShape::Quartic { a2: 1.0, a4: 0.1 }));
        let r = strang_evolve(&f0, &spec, eps, 0.0, 10.0, 1e-3, &EvolveOptions::default()).unwrap();
        assert_eq!(r.steps, 10_000);
        assert!(r.max_drift() <= 1e-10, "{:e}", r.max_drift());
        assert!(r.mass_drift.windows(2).all(|w| (w[1] - w[0]).abs() <= 1e-12));
    }

    #[test]
    fn nonlinear_mass_conserved() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        let f0 = gaussian_1d(g, eps, 0.0, 0.0);
        let spec = HamiltonianSpec {
            potential: PotentialSpec::zero(),
            nonlinearity: Some(Nonlinearity::new(1.0, 1.0).unwrap()),
        };
        let r = strang_evolve(&f0, &spec, eps, 0.0, 1.0, 1e-3, &EvolveOptions::default()).unwrap();
        assert!(r.max_drift() <= 1e-8);
    }

    #[test]
    fn snapshots_and_guards() {
        let g = SpatialGrid::new(1, 64, 2.0).unwrap();
        let f0 = gaussian_1d(g, 0.1, 0.0, 0.0);
        let spec = HamiltonianSpec::linear(PotentialSpec::zero());
        let opts = EvolveOptions { snapshot_times: vec![0.0, 0.25, 0.5], ..Default::default() };
        let r = strang_evolve(&f0, &spec, 0.1, 0.0, 0.5, 0.05, &opts).unwrap();
        let times: Vec<f64> = r.snapshots.iter().map(|s| s.0).collect();
        assert_eq!(times.len(), 3);
        assert!((times[1] - 0.25).abs() < 1e-12 && (times[2] - 0.5).abs() < 1e-12);
        assert!(strang_evolve(&f0, &spec, 0.1, 0.0, 0.5, 0.07, &EvolveOptions::default()).is_err());
        let bad = EvolveOptions { snapshot_times: vec![0.3, 0.1], ..Default::default() };
        assert!(strang_evolve(&f0, &spec, 0.1, 0.0, 0.5, 0.05, &bad).is_err());
    }
}
