//! Landau-Zener normal form, transfer extraction, out-mass predictions and
//! full two-dimensional crossing experiments.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::WaveField;
use crate::grid::SpatialGrid;
use crate::packets::{build_wave_packet, PacketParams, Polarization, Profile};
use crate::potential::PotentialSpec;
use crate::propagate::{HamiltonianSpec, Propagator};
use crate::wigner::{mode_masses, ModeMasses};

/// Dormand-Prince 5(4) with standard step control; `f(t, y)`.
pub fn dopri5<const N: usize>(
    f: &impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t1: f64,
    y0: [f64; N],
    tol: f64,
    mut observe: impl FnMut(f64, &[f64; N]),
) -> Result<[f64; N]> {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let mut t = t0;
    let mut y = y0;
    let mut h = (t1 - t0) * 1e-6;
    let mut k0 = f(t, &y);
    observe(t, &y);
    let mut steps = 0usize;
    while t < t1 {
        if steps > 50_000_000 {
            return Err(LabError::NonConvergence("step budget exhausted".into()));
        }
        steps += 1;
        h = h.min(t1 - t);
        let mut k = [[0.0; N]; 7];
        k[0] = k0;
        for s in 1..7 {
            let mut ys = y;
            for i in 0..N {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                ys[i] += h * acc;
            }
            k[s] = f(t + C[s] * h, &ys);
        }
        // stage 7 is evaluated at the fifth-order solution
        let mut y5 = y;
        for i in 0..N {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += A[6][j] * k[j][i];
            }
            y5[i] += h * acc;
        }
        let mut err: f64 = 0.0;
        for i in 0..N {
            let mut e = 0.0;
            for j in 0..7 {
                e += E[j] * k[j][i];
            }
            let sc = tol + tol * y[i].abs().max(y5[i].abs());
            err = err.max((h * e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            y = y5;
            k0 = k[6];
            observe(t, &y);
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        if h < 1e-14 * (t1 - t0).abs() {
            return Err(LabError::NonConvergence(format!("step size collapsed at t = {t}")));
        }
    }
    Ok(y)
}

/// Integrator tolerance for the normal form.
pub const NF_TOL: f64 = 1e-12;
/// Default half window `S` in the original `s` variable.
pub const DEFAULT_WINDOW: f64 = 2.0;

/// Stripped in/out amplitudes of one normal-form run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFormState {
    pub lambda: f64,
    pub eps: f64,
    pub s_window: f64,
    pub alpha: [C64; 2],
    pub omega: [C64; 2],
    /// Relative drift of the stripped amplitudes over the averaging windows.
    pub drift: f64,
    /// `| |omega|^2 - |alpha|^2 |` from the raw endpoint states.
    pub norm_mismatch: f64,
}

fn theta(lambda: f64, s: f64) -> (f64, f64) {
    let l2 = lambda * lambda;
    (0.5 * s * s + 0.25 * l2 * (s * s + 1.0).ln(), s + 0.5 * l2 * s / (s * s + 1.0))
}

/// Superadiabatically corrected plateau variables from the stripped state.
fn corrected(lambda: f64, s: f64, v: [C64; 2]) -> [C64; 2] {
    let (th, dth) = theta(lambda, s);
    let e = C64::from_polar(1.0, 2.0 * th);
    let k = lambda / (2.0 * dth);
    [v[0] + k * e.conj() * v[1], v[1] - k * e * v[0]]
}

/// Integrates `(eps/i) u' = [[s, z1], [z1, -s]] u` on `[-S, S]` with `z1 = lambda sqrt(eps)`.
///
/// In `sigma = s/sqrt(eps)` the system reads `u' = i [[sigma, lambda], [lambda, -sigma]] u`; the
/// factors `e^{+-i theta}` with `theta = sigma^2/2 + (lambda^2/4) ln(sigma^2 + 1)` are removed
/// analytically and the plateau amplitudes are averaged over the outer tenth of each side.
pub fn solve_normal_form(lambda: f64, eps: f64, s_window: f64, alpha: [C64; 2]) -> Result<NormalFormState> {
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(LabError::InvalidInput(format!("eps must lie in (0, 0.1], got {eps}")));
    }
    let w = s_window / eps.sqrt();
    if w < 10.0 * lambda.abs().max(1.0) {
        return Err(LabError::InvalidInput(format!(
            "window S = {s_window} is below 10 max(1, lambda) sqrt(eps)"
        )));
    }
    let rhs = |s: f64, y: &[f64; 4]| -> [f64; 4] {
        let (th, dth) = theta(lambda, s);
        let v1 = C64::new(y[0], y[1]);
        let v2 = C64::new(y[2], y[3]);
        let i = C64::i();
        let e = C64::from_polar(1.0, 2.0 * th);
        let d = s - dth;
        let d1 = i * d * v1 + i * lambda * e.conj() * v2;
        let d2 = i * lambda * e * v1 - i * d * v2;
        [d1.re, d1.im, d2.re, d2.im]
    };
    let y0 = [alpha[0].re, alpha[0].im, alpha[1].re, alpha[1].im];
    let inner = 0.9 * w;
    let mut acc_in = Plateau::default();
    let mut acc_out = Plateau::default();
    let y1 = dopri5(&rhs, -w, w, y0, NF_TOL, |s, y| {
        let c = corrected(lambda, s, [C64::new(y[0], y[1]), C64::new(y[2], y[3])]);
        if s <= -inner {
            acc_in.push(s, c);
        } else if s >= inner {
            acc_out.push(s, c);
        }
    })?;
    let n0: f64 = y0.iter().map(|v| v * v).sum();
    let n1: f64 = y1.iter().map(|v| v * v).sum();
    let a = acc_in.mean();
    let o = acc_out.mean();
    let drift = acc_in.drift(&a).max(acc_out.drift(&o));
    let state = NormalFormState { lambda, eps, s_window, alpha: a, omega: o, drift, norm_mismatch: (n1 - n0).abs() };
    if drift > 0.01 {
        return Err(LabError::NonPlateau(drift));
    }
    Ok(state)
}

#[derive(Default)]
struct Plateau {
    s: Vec<f64>,
    c: Vec<[C64; 2]>,
}

impl Plateau {
    fn push(&mut self, s: f64, c: [C64; 2]) {
        self.s.push(s);
        self.c.push(c);
    }

    /// Trapezoid average over the sampled window.
    fn mean(&self) -> [C64; 2] {
        let n = self.s.len();
        if n < 2 {
            return self.c.first().copied().unwrap_or([C64::new(0.0, 0.0); 2]);
        }
        let mut m = [C64::new(0.0, 0.0); 2];
        for k in 1..n {
            let h = self.s[k] - self.s[k - 1];
            for j in 0..2 {
                m[j] += 0.5 * h * (self.c[k][j] + self.c[k - 1][j]);
            }
        }
        let len = self.s[n - 1] - self.s[0];
        [m[0] / len, m[1] / len]
    }

    fn drift(&self, mean: &[C64; 2]) -> f64 {
        let scale = (mean[0].norm_sqr() + mean[1].norm_sqr()).sqrt().max(1e-300);
        self.c
            .iter()
            .map(|c| ((c[0] - mean[0]).norm_sqr() + (c[1] - mean[1]).norm_sqr()).sqrt() / scale)
            .fold(0.0, f64::max)
    }
}

/// Measured transfer matrix at fixed `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub lambda: f64,
    /// `a(lambda)`, entry `(0,0)` after fixing the global phase.
    pub a: f64,
    /// `b(lambda)`, entry `(1,0)` after fixing the global phase.
    pub b: C64,
    pub matrix: [[C64; 2]; 2],
    /// `|| M^* M - I ||_max`.
    pub unitarity_defect: f64,
}

/// `a(lambda) = exp(-pi lambda^2 / 2)`.
pub fn a_theory(lambda: f64) -> f64 {
    (-0.5 * std::f64::consts::PI * lambda * lambda).exp()
}

/// Solves `Omega = M A` from two runs with independent in-vectors.
pub fn extract_transfer(runs: &[NormalFormState; 2]) -> Result<TransferMatrix> {
    let a = [[runs[0].alpha[0], runs[1].alpha[0]], [runs[0].alpha[1], runs[1].alpha[1]]];
    let o = [[runs[0].omega[0], runs[1].omega[0]], [runs[0].omega[1], runs[1].omega[1]]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let scale = a.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>();
    if det.norm() < 1e-3 * scale {
        return Err(LabError::IllConditioned(format!("in-vectors nearly parallel, |det| = {:.3e}", det.norm())));
    }
    let ainv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let mut m = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = o[i][0] * ainv[0][j] + o[i][1] * ainv[1][j];
        }
    }
    let ph = if m[0][0].norm() > 0.0 { m[0][0].conj() / m[0][0].norm() } else { C64::new(1.0, 0.0) };
    for row in m.iter_mut() {
        for z in row.iter_mut() {
            *z *= ph;
        }
    }
    let mut defect: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let g = m[0][i].conj() * m[0][j] + m[1][i].conj() * m[1][j];
            let id = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((g - id).norm());
        }
    }
    Ok(TransferMatrix { lambda: runs[0].lambda, a: m[0][0].re, b: m[1][0], matrix: m, unitarity_defect: defect })
}

/// Both runs with in-vectors `(1,0)` and `(0,1)`, then [`extract_transfer`].
pub fn measure_transfer(lambda: f64, eps: f64, s_window: f64) -> Result<TransferMatrix> {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let r0 = solve_normal_form(lambda, eps, s_window, [one, zero])?;
    let r1 = solve_normal_form(lambda, eps, s_window, [zero, one])?;
    extract_transfer(&[r0, r1])
}

/// `T(eta) = exp(-pi eta^2 / |xi*|^3)`, zero at infinite `eta`.
pub fn transfer_probability(eta: f64, xi_star_norm: f64) -> Result<f64> {
    if !(xi_star_norm > 0.0) {
        return Err(LabError::InvalidInput("|xi*| must be positive".into()));
    }
    Ok(crate::rays::transfer_coefficient(eta, xi_star_norm))
}


/// One row of a transfer curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub lambda: f64,
    pub eps: f64,
    pub a_meas: f64,
    pub a_theory: f64,
}

/// Transfer curve over `lambdas x epss` with the default window.
pub fn transfer_curve(lambdas: &[f64], epss: &[f64]) -> Result<Vec<TransferRow>> {
    let mut rows = Vec::new();
    for &eps in epss {
        for &lambda in lambdas {
            let m = measure_transfer(lambda, eps, DEFAULT_WINDOW)?;
            rows.push(TransferRow { lambda, eps, a_meas: m.a, a_theory: a_theory(lambda) });
        }
    }
    Ok(rows)
}

/// CSV `lambda,eps,a_meas,a_theory`.
pub fn write_transfer_csv(rows: &[TransferRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "# {}", serde_json::json!({"kind": "transfer_curve", "columns": ["lambda", "eps", "a_meas", "a_theory"], "units": "dimensionless"}))?;
    writeln!(w, "lambda,eps,a_meas,a_theory")?;
    for r in rows {
        writeln!(w, "{},{:e},{:.12e},{:.12e}", r.lambda, r.eps, r.a_meas, r.a_theory)?;
    }
    Ok(())
}

/// Regime of the out-mass table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Both scaling exponents below one half.
    NoTransfer,
    /// Only the minus packet sits at the critical scale.
    MinusCritical,
    /// Only the plus packet sits at the critical scale.
    PlusCritical,
    /// Both critical with distinct `eta0`.
    CrossTransfer,
    /// Both critical with equal `eta0`.
    Interference,
}

/// Predicted out-masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutMassPrediction {
    pub c_plus: f64,
    pub c_minus: f64,
    pub regime: Regime,
    /// `(rho0, phi0)` for the interference row.
    pub interference: Option<(f64, f64)>,
}

/// Reference geometry: both centers reach the origin at `t* = sqrt 3 - 1` with `xi* = (-1, 0)`.
pub mod reference {
    pub fn t_star() -> f64 {
        3f64.sqrt() - 1.0
    }
    pub const XI_STAR: [f64; 2] = [-1.0, 0.0];
    pub fn x0_minus() -> [f64; 2] {
        [1.0, 0.0]
    }
    pub fn r0_minus() -> f64 {
        -3f64.sqrt()
    }
    pub fn x0_plus() -> [f64; 2] {
        [2.0 * 3f64.sqrt() - 3.0, 0.0]
    }
    pub fn r0_plus() -> f64 {
        -1.0 / 3f64.sqrt()
    }
}

/// Mode packets and run controls of a two-dimensional crossing experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingExperimentConfig {
    pub eps: f64,
    pub plus: Option<PacketParams>,
    pub minus: Option<PacketParams>,
    /// Extra phase `e^{i phi}` on the minus packet.
    #[serde(default)]
    pub phi: f64,
    pub grid_n: usize,
    pub half_extent: f64,
    pub dt: f64,
    pub t1: f64,
    pub t_star: f64,
    pub xi_star: [f64; 2],
    /// Exclusion radius of the mode masses in units of `sqrt(eps)`.
    pub delta0_factor: f64,
    /// Plateau window `[t* + a, t* + b]`.
    pub plateau: [f64; 2],
    /// Mode masses are recorded every this many steps.
    pub observe_every: usize,
}

/// Packet scale exponent of the reference runs.
pub const REFERENCE_BETA: f64 = 0.25;
/// Profile width of the reference runs.
pub const REFERENCE_WIDTH: f64 = 0.65;

fn mode_packet(eps: f64, plus: bool, alpha: f64, eta0: f64, width: f64) -> PacketParams {
    let (x0, r0) = if plus { (reference::x0_plus(), reference::r0_plus()) } else { (reference::x0_minus(), reference::r0_minus()) };
    // eta0 = -r0 (x0 ^ w0) with w0 = (0, w)
    let w = -eta0 / (r0 * x0[0]);
    let _ = eps;
    PacketParams {
        beta: REFERENCE_BETA,
        center: x0,
        profile: Profile::Gaussian { width },
        r0,
        alpha,
        omega0: [0.0, w],
        polarization: if plus { Polarization::Plus } else { Polarization::Minus },
        amplitude: 1.0,
        phase: 0.0,
    }
}

impl CrossingExperimentConfig {
    /// Reference geometry with packets given as `(alpha, eta0)` pairs.
    pub fn reference(eps: f64, plus: Option<(f64, f64)>, minus: Option<(f64, f64)>) -> Self {
        let n = if eps >= 1.0 / 256.0 { 512 } else { 1024 };
        Self {
            eps,
            plus: plus.map(|(a, e)| mode_packet(eps, true, a, e, REFERENCE_WIDTH)),
            minus: minus.map(|(a, e)| mode_packet(eps, false, a, e, REFERENCE_WIDTH)),
            phi: 0.0,
            grid_n: n,
            half_extent: 1.6,
            dt: eps / 4.0,
            t1: reference::t_star() + 0.6,
            t_star: reference::t_star(),
            xi_star: reference::XI_STAR,
            delta0_factor: 3.0,
            plateau: [0.4, 0.6],
            observe_every: 8,
        }
    }

    pub fn grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(2, self.grid_n, self.half_extent)
    }

    pub fn masses_in(&self) -> (f64, f64) {
        (self.plus.map_or(0.0, |p| p.mass(2)), self.minus.map_or(0.0, |p| p.mass(2)))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !(self.dt > 0.0) || self.t1 <= self.t_star {
            return Err(LabError::Config("need eps, dt > 0 and t1 > t*".into()));
        }
        if self.t_star + self.plateau[1] > self.t1 + 1e-12 || self.plateau[0] >= self.plateau[1] {
            return Err(LabError::Config("plateau window must lie in (t*, t1]".into()));
        }
        if self.plus.is_none() && self.minus.is_none() {
            return Err(LabError::Config("at least one packet is required".into()));
        }
        for (p, want) in [(self.plus, Polarization::Plus), (self.minus, Polarization::Minus)] {
            if let Some(p) = p {
                if p.polarization != want {
                    return Err(LabError::Config("packet polarization does not match its mode".into()));
                }
            }
        }
        Ok(())
    }
}

fn alpha_eta(p: Option<PacketParams>) -> (f64, f64) {
    p.map_or((0.0, f64::INFINITY), |p| (p.alpha, p.eta0()))
}

/// Out-masses from the regime table; `interference` supplies `(rho0, phi0)` for equal `eta0`.
pub fn predict_out_masses(cfg: &CrossingExperimentConfig, interference: Option<(f64, f64)>) -> Result<OutMassPrediction> {
    let (cp, cm) = cfg.masses_in();
    let (ap, ep) = alpha_eta(cfg.plus);
    let (am, em) = alpha_eta(cfg.minus);
    let v = cfg.xi_star[0].hypot(cfg.xi_star[1]);
    for (present, a, e) in [(cfg.plus.is_some(), ap, ep), (cfg.minus.is_some(), am, em)] {
        if present && !(a > 0.0 && a <= 0.5) {
            return Err(LabError::Config(format!("alpha = {a} outside (0, 1/2]")));
        }
        if present && a == 0.5 && e == 0.0 {
            return Err(LabError::Config("eta0 must be nonzero".into()));
        }
    }
    let crit_p = cfg.plus.is_some() && ap == 0.5;
    let crit_m = cfg.minus.is_some() && am == 0.5;
    let tp = if crit_p { transfer_probability(ep, v)? } else { 0.0 };
    let tm = if crit_m { transfer_probability(em, v)? } else { 0.0 };
    let base = OutMassPrediction {
        c_plus: (1.0 - tp) * cp + tm * cm,
        c_minus: tp * cp + (1.0 - tm) * cm,
        regime: Regime::NoTransfer,
        interference: None,
    };
    Ok(match (crit_p, crit_m) {
        (false, false) => OutMassPrediction { c_plus: cp, c_minus: cm, ..base },
        (false, true) => OutMassPrediction { regime: Regime::MinusCritical, ..base },
        (true, false) => OutMassPrediction { regime: Regime::PlusCritical, ..base },
        (true, true) if (ep - em).abs() > 1e-9 * ep.abs().max(1.0) => OutMassPrediction { regime: Regime::CrossTransfer, ..base },
        (true, true) => {
            let (rho, phi0) = interference.unwrap_or((0.0, 0.0));
            let d = rho * (phi0 - cfg.phi).cos();
            OutMassPrediction {
                c_plus: base.c_plus + d,
                c_minus: base.c_minus - d,
                regime: Regime::Interference,
                interference: Some((rho, phi0)),
            }
        }
    })
}

/// Initial two-packet field with the extra phase on the minus packet.
pub fn initial_field(cfg: &CrossingExperimentConfig, with_plus: bool, with_minus: bool) -> Result<WaveField> {
    let g = cfg.grid()?;
    let mut f = WaveField::zeros(g, 2);
    if let (true, Some(p)) = (with_plus, cfg.plus) {
        f = f.add_scaled(C64::new(1.0, 0.0), &build_wave_packet(&g, cfg.eps, &p)?);
    }
    if let (true, Some(p)) = (with_minus, cfg.minus) {
        f = f.add_scaled(C64::from_polar(1.0, cfg.phi), &build_wave_packet(&g, cfg.eps, &p)?);
    }
    Ok(f)
}

/// Fraction of the mass in the outer tenth of the box.
fn boundary_fraction(f: &WaveField) -> f64 {
    let g = f.grid;
    let lim = 0.9 * g.half_extent;
    let d = f.density();
    let total: f64 = d.iter().sum();
    let edge: f64 = (0..g.len())
        .filter(|&i| {
            let x = g.point(i);
            x[0].abs() > lim || x[1].abs() > lim
        })
        .map(|i| d[i])
        .sum();
    if total > 0.0 {
        edge / total
    } else {
        0.0
    }
}

/// Result of [`run_crossing_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossingReport {
    pub eps: f64,
    /// `(t, masses)` every `observe_every` steps.
    pub series: Vec<(f64, ModeMasses)>,
    /// Plateau means.
    pub plateau: ModeMasses,
    pub measured: [f64; 2],
    pub predicted: OutMassPrediction,
    /// `|measured - predicted| / predicted` per mode (absolute when the prediction is zero).
    pub deviation: [f64; 2],
    pub mass_in: f64,
    pub max_mass_drift: f64,
    pub max_boundary_fraction: f64,
}

impl CrossingReport {
    /// Minus-mode share of the plateau mass.
    pub fn minus_fraction(&self) -> f64 {
        self.measured[1] / (self.measured[0] + self.measured[1])
    }

    /// CSV `t,m_plus,m_minus,m_core`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {}", serde_json::json!({"kind": "crossing_mode_masses", "eps": self.eps, "columns": ["t", "m_plus", "m_minus", "m_core"], "units": "mass"}))?;
        writeln!(w, "t,m_plus,m_minus,m_core")?;
        for (t, m) in &self.series {
            writeln!(w, "{t:.8},{:.10e},{:.10e},{:.10e}", m.plus, m.minus, m.core)?;
        }
        Ok(())
    }
}

fn in_plateau(cfg: &CrossingExperimentConfig, t: f64) -> bool {
    t >= cfg.t_star + cfg.plateau[0] - 1e-9 && t <= cfg.t_star + cfg.plateau[1] + 1e-9
}

fn plateau_mean(cfg: &CrossingExperimentConfig, series: &[(f64, ModeMasses)]) -> Result<ModeMasses> {
    let pts: Vec<&ModeMasses> = series.iter().filter(|(t, _)| in_plateau(cfg, *t)).map(|(_, m)| m).collect();
    if pts.is_empty() {
        return Err(LabError::Config("no observation falls in the plateau window".into()));
    }
    let n = pts.len() as f64;
    Ok(ModeMasses {
        plus: pts.iter().map(|m| m.plus).sum::<f64>() / n,
        minus: pts.iter().map(|m| m.minus).sum::<f64>() / n,
        core: pts.iter().map(|m| m.core).sum::<f64>() / n,
    })
}

/// Evolves `field` under the crossing Hamiltonian, calling `observe` every
/// `observe_every` steps; returns `(max drift, max boundary fraction)`.
fn evolve_crossing(
    cfg: &CrossingExperimentConfig,
    field: &WaveField,
    mut observe: impl FnMut(f64, &WaveField) -> Result<()>,
) -> Result<(f64, f64)> {
    let steps = (cfg.t1 / cfg.dt).round() as usize;
    let dt = cfg.t1 / steps as f64;
    let prop = Propagator::new(&field.grid, cfg.eps, dt, &HamiltonianSpec::linear(PotentialSpec::MatrixCrossing))?;
    let m0 = field.mass();
    let mut f = field.clone();
    let mut drift: f64 = 0.0;
    let mut edge = boundary_fraction(&f);
    observe(0.0, &f)?;
    let every = cfg.observe_every.max(1);
    prop.run(&mut f, 0.0, steps, |k| k % every == 0, |k, t, cur| {
        let d = (cur.mass() - m0).abs() / m0;
        drift = drift.max(d);
        if d > 1e-6 {
            return Err(LabError::MassDrift { drift: d, limit: 1e-6, time: t });
        }
        edge = edge.max(boundary_fraction(cur));
        if edge > 0.05 {
            return Err(LabError::MassLoss { lost: edge, limit: 0.05 });
        }
        if k % every == 0 || k == steps {
            observe(t, cur)?;
        }
        Ok(())
    })?;
    Ok((drift, edge))
}

/// Builds the packets, evolves them and compares plateau mode masses with the table.
pub fn run_crossing_experiment(cfg: &CrossingExperimentConfig, interference: Option<(f64, f64)>) -> Result<CrossingReport> {
    cfg.validate()?;
    let predicted = predict_out_masses(cfg, interference)?;
    let field = initial_field(cfg, true, true)?;
    let delta0 = cfg.delta0_factor * cfg.eps.sqrt();
    let mut series = Vec::new();
    let (drift, edge) = evolve_crossing(cfg, &field, |t, f| {
        series.push((t, mode_masses(f, delta0)?));
        Ok(())
    })?;
    let plateau = plateau_mean(cfg, &series)?;
    let measured = [plateau.plus, plateau.minus];
    let pred = [predicted.c_plus, predicted.c_minus];
    let deviation = [0, 1].map(|k| {
        let d = (measured[k] - pred[k]).abs();
        if pred[k] > 0.0 {
            d / pred[k]
        } else {
            d
        }
    });
    Ok(CrossingReport {
        eps: cfg.eps,
        series,
        plateau,
        measured,
        predicted,
        deviation,
        mass_in: field.mass(),
        max_mass_drift: drift,
        max_boundary_fraction: edge,
    })
}

/// `A + B cos(phi0 - phi)` least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineFit {
    pub a: f64,
    pub b: f64,
    pub phi0: f64,
    pub rms: f64,
}

pub fn fit_cosine(phis: &[f64], values: &[f64]) -> Result<CosineFit> {
    if phis.len() != values.len() || phis.len() < 4 {
        return Err(LabError::InvalidInput("need at least four samples".into()));
    }
    // linear model A + C cos(phi) + S sin(phi), normal equations
    let mut m = [[0.0; 3]; 3];
    let mut r = [0.0; 3];
    for (&p, &y) in phis.iter().zip(values) {
        let b = [1.0, p.cos(), p.sin()];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += b[i] * b[j];
            }
            r[i] += b[i] * y;
        }
    }
    let x = solve3(m, r).ok_or_else(|| LabError::IllConditioned("phase samples do not determine a cosine".into()))?;
    let (a, c, s) = (x[0], x[1], x[2]);
    let rms = (phis
        .iter()
        .zip(values)
        .map(|(&p, &y)| (y - a - c * p.cos() - s * p.sin()).powi(2))
        .sum::<f64>()
        / phis.len() as f64)
        .sqrt();
    // c cos(phi) + s sin(phi) = B cos(phi0 - phi)
    Ok(CosineFit { a, b: c.hypot(s), phi0: s.atan2(c), rms })
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-14 {
            return None;
        }
        m.swap(c, p);
        r.swap(c, p);
        for i in 0..3 {
            if i != c {
                let f = m[i][c] / m[c][c];
                for j in 0..3 {
                    m[i][j] -= f * m[c][j];
                }
                r[i] -= f * r[c];
            }
        }
    }
    Some([r[0] / m[0][0], r[1] / m[1][1], r[2] / m[2][2]])
}

/// Plus out-mass as a function of the extra phase on the minus packet.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSweep {
    pub phis: Vec<f64>,
    pub c_plus: Vec<f64>,
    pub c_minus: Vec<f64>,
    pub fit: CosineFit,
}

/// Evolves the two packets separately and superposes them with each phase,
/// which is exact for the linear flow.
pub fn phase_sweep(cfg: &CrossingExperimentConfig, phis: &[f64]) -> Result<PhaseSweep> {
    cfg.validate()?;
    let delta0 = cfg.delta0_factor * cfg.eps.sqrt();
    let mut base = *cfg;
    base.phi = 0.0;
    let evolve_part = |plus: bool| -> Result<Vec<WaveField>> {
        let f = initial_field(&base, plus, !plus)?;
        let mut snaps = Vec::new();
        evolve_crossing(&base, &f, |t, cur| {
            if in_plateau(&base, t) {
                snaps.push(cur.clone());
            }
            Ok(())
        })?;
        Ok(snaps)
    };
    let sp = evolve_part(true)?;
    let sm = evolve_part(false)?;
    if sp.is_empty() {
        return Err(LabError::Config("no observation falls in the plateau window".into()));
    }
    let mut c_plus = Vec::with_capacity(phis.len());
    let mut c_minus = Vec::with_capacity(phis.len());
    for &phi in phis {
        let (mut p, mut m) = (0.0, 0.0);
        for (a, b) in sp.iter().zip(&sm) {
            let mm = mode_masses(&a.add_scaled(C64::from_polar(1.0, phi), b), delta0)?;
            p += mm.plus;
            m += mm.minus;
        }
        c_plus.push(p / sp.len() as f64);
        c_minus.push(m / sp.len() as f64);
    }
    let fit = fit_cosine(phis, &c_plus)?;
    Ok(PhaseSweep { phis: phis.to_vec(), c_plus, c_minus, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri_matches_exponential() {
        let y = dopri5(&|_t, y: &[f64; 2]| [y[1], -y[0]], 0.0, 10.0, [1.0, 0.0], 1e-10, |_, _| {}).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn decoupled_normal_form_is_identity() {
        let m = measure_transfer(0.0, 1e-2, DEFAULT_WINDOW).unwrap();
        assert!((m.a - 1.0).abs() <= 1e-6);
        assert!(m.b.norm() <= 1e-6);
        assert!((m.matrix[1][1] - 1.0).norm() <= 1e-6);
    }

    #[test]
    fn normal_form_transfer_law() {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let r = solve_normal_form(1.0, 1e-4, DEFAULT_WINDOW, [one, zero]).unwrap();
        assert!((r.omega[0].norm_sqr() - (-std::f64::consts::PI).exp()).abs() <= 1e-2);
        assert!(r.norm_mismatch <= 1e-8, "{}", r.norm_mismatch);
        let m = measure_transfer(1.0, 1e-4, DEFAULT_WINDOW).unwrap();
        assert!((m.a - a_theory(1.0)).abs() <= 1e-2, "{}", m.a);
        assert!(m.unitarity_defect <= 1e-6, "{}", m.unitarity_defect);
    }

    #[test]
    fn transfer_error_shrinks_with_eps() {
        for lambda in [0.5, 1.0, 1.5] {
            let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&e| (measure_transfer(lambda, e, DEFAULT_WINDOW).unwrap().a - a_theory(lambda)).abs())
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2], "{lambda} {errs:?}");
        }
    }

    #[test]
    fn symmetric_in_lambda() {
        let p = measure_transfer(0.8, 1e-3, DEFAULT_WINDOW).unwrap();
        let m = measure_transfer(-0.8, 1e-3, DEFAULT_WINDOW).unwrap();
        assert!((p.a - m.a).abs() <= 1e-6);
    }

    #[test]
    fn window_doubling_is_stable() {
        let a = measure_transfer(1.0, 1e-3, DEFAULT_WINDOW).unwrap().a;
        let b = measure_transfer(1.0, 1e-3, 2.0 * DEFAULT_WINDOW).unwrap().a;
        assert!((a - b).abs() <= 1e-3, "{a} {b}");
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(solve_normal_form(1.0, 1e-2, 0.5, [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]), Err(LabError::InvalidInput(_))));
    }

    #[test]
    fn transfer_probability_values() {
        assert_eq!(transfer_probability(0.0, 1.0).unwrap(), 1.0);
        assert!((transfer_probability(1.0, 1.0).unwrap() - 0.0432139).abs() < 1e-7);
        assert_eq!(transfer_probability(f64::INFINITY, 2.0).unwrap(), 0.0);
        // T(eta) = a(lambda)^2 with lambda = eta |xi*|^{-3/2}
        for (eta, v) in [(0.3, 1.0), (0.7, 1.4), (1.2, 0.8)] {
            let l = eta * f64::powf(v, -1.5);
            assert!((transfer_probability(eta, v).unwrap() - a_theory(l).powi(2)).abs() < 1e-14);
        }
        assert!(transfer_probability(1.0, 0.0).is_err());
    }

    fn unit_mass(mut p: PacketParams) -> PacketParams {
        p.amplitude = 1.0 / p.profile.mass(2).sqrt();
        p
    }

    fn unit_cfg(plus: Option<(f64, f64)>, minus: Option<(f64, f64)>) -> CrossingExperimentConfig {
        let mut c = CrossingExperimentConfig::reference(1.0 / 256.0, plus, minus);
        c.plus = c.plus.map(unit_mass);
        c.minus = c.minus.map(unit_mass);
        c
    }

    #[test]
    fn reference_geometry_meets_at_crossing() {
        let c = CrossingExperimentConfig::reference(1e-2, Some((0.5, 0.5)), Some((0.5, 0.5)));
        for p in [c.plus.unwrap(), c.minus.unwrap()] {
            let xi0 = [p.r0 * p.center[0], p.r0 * p.center[1]];
            let sign = if p.polarization == Polarization::Plus { 1.0 } else { -1.0 };
            let tr = crate::rays::flow_mode(sign, p.center, xi0, 1e-3, 1.0).unwrap();
            let g = crate::rays::detect_crossing(&tr).unwrap();
            assert!((g.t_star - reference::t_star()).abs() < 1e-6);
            assert!((g.xi_star[0] - reference::XI_STAR[0]).abs() < 1e-6);
            assert!((p.eta0() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn table_rows() {
        let p = predict_out_masses(&unit_cfg(Some((0.3, 0.5)), Some((0.3, 0.5))), None).unwrap();
        assert_eq!(p.regime, Regime::NoTransfer);
        assert!((p.c_plus - 1.0).abs() < 1e-12 && (p.c_minus - 1.0).abs() < 1e-12);
        let eta = 0.3 * 3f64.sqrt();
        let p = predict_out_masses(&unit_cfg(Some((0.4, 1.0)), Some((0.5, eta))), None).unwrap();
        assert_eq!(p.regime, Regime::MinusCritical);
        assert!((p.c_plus - 1.428).abs() < 1e-3 && (p.c_minus - 0.572).abs() < 1e-3, "{p:?}");
        let p = predict_out_masses(&unit_cfg(Some((0.5, eta)), Some((0.4, 1.0))), None).unwrap();
        assert_eq!(p.regime, Regime::PlusCritical);
        assert!((p.c_minus - 1.428).abs() < 1e-3);
        let p = predict_out_masses(&unit_cfg(Some((0.5, eta)), Some((0.5, -0.8))), None).unwrap();
        assert_eq!(p.regime, Regime::CrossTransfer);
        let mut c = unit_cfg(Some((0.5, eta)), Some((0.5, eta)));
        c.phi = 0.3;
        let p = predict_out_masses(&c, Some((0.2, 1.0))).unwrap();
        assert_eq!(p.regime, Regime::Interference);
        let t = transfer_probability(eta, 1.0).unwrap();
        assert!((p.c_plus - (1.0 - t + t + 0.2 * 0.7f64.cos())).abs() < 1e-12);
    }

    #[test]
    fn predictions_conserve_mass() {
        for (ap, ep, am, em) in [(0.3, 1.0, 0.3, 1.0), (0.4, 1.0, 0.5, 0.5), (0.5, 0.2, 0.4, 1.0), (0.5, 0.3, 0.5, -0.7), (0.5, 0.3, 0.5, 0.3)] {
            let mut c = CrossingExperimentConfig::reference(1.0 / 256.0, Some((ap, ep)), Some((am, em)));
            c.minus.as_mut().unwrap().amplitude = 0.7;
            let p = predict_out_masses(&c, Some((0.1, 0.4))).unwrap();
            let (a, b) = c.masses_in();
            assert!((p.c_plus + p.c_minus - a - b).abs() <= 1e-12 * (a + b));
        }
    }

    #[test]
    fn invalid_rows_rejected() {
        let c = CrossingExperimentConfig::reference(1.0 / 256.0, Some((0.6, 0.5)), None);
        assert!(predict_out_masses(&c, None).is_err());
        let mut c = CrossingExperimentConfig::reference(1.0 / 256.0, Some((0.5, 0.5)), None);
        c.plus.as_mut().unwrap().omega0 = [0.0, 0.0];
        assert!(predict_out_masses(&c, None).is_err());
    }

    #[test]
    fn cosine_fit_recovers_parameters() {
        let phis: Vec<f64> = (0..8).map(|k| k as f64 * 0.785).collect();
        let v: Vec<f64> = phis.iter().map(|p| 1.5 + 0.3 * (0.9 - p).cos()).collect();
        let f = fit_cosine(&phis, &v).unwrap();
        assert!((f.a - 1.5).abs() < 1e-12 && (f.b - 0.3).abs() < 1e-12 && (f.phi0 - 0.9).abs() < 1e-12);
        assert!(f.rms < 1e-12);
    }

    #[test]
    fn coarse_single_packet_run() {
        // off-critical plus packet at a coarse scale: little transfer, tight mass budget
        let eps = 1.0 / 64.0;
        let mut c = CrossingExperimentConfig::reference(eps, Some((0.3, 1.0)), None);
        c.grid_n = 256;
        c.plus.as_mut().unwrap().profile = Profile::Gaussian { width: 0.3 };
        let r = run_crossing_experiment(&c, None).unwrap();
        assert!(r.max_mass_drift <= 1e-6);
        assert!(r.minus_fraction() <= 0.05, "{}", r.minus_fraction());
        assert_eq!(r.predicted.regime, Regime::NoTransfer);
        let dir = std::env::temp_dir().join("semiclab_crossing_csv");
        std::fs::create_dir_all(&dir).unwrap();
        r.write_csv(&dir.join("m.csv")).unwrap();
        let text = std::fs::read_to_string(dir.join("m.csv")).unwrap();
        assert!(text.starts_with("# "));
        assert_eq!(text.lines().nth(1), Some("t,m_plus,m_minus,m_core"));
    }
}
