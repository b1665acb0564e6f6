//! Hamiltonian rays, Jacobians, mode flows with crossing detection,
//! Landau-Zener branching and particle transport of limit measures.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};
use crate::field::WaveField;
use crate::grid::SpatialGrid;
use crate::potential::ScalarShape;

/// Crossing monitor radius.
pub const DELTA_STOP: f64 = 1e-3;
/// Smallest admissible crossing speed.
pub const V_MIN: f64 = 1e-2;
/// Caustic threshold on the Jacobian.
pub const J_MIN: f64 = 0.1;

type M2 = [[f64; 2]; 2];

fn det(m: &M2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn inv(m: &M2) -> M2 {
    let d = det(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn matmul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn rk4<const N: usize>(y: &[f64; N], h: f64, f: &impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
    let add = |a: &[f64; N], b: &[f64; N], s: f64| {
        let mut o = *a;
        for i in 0..N {
            o[i] += s * b[i];
        }
        o
    };
    let k1 = f(y);
    let k2 = f(&add(y, &k1, 0.5 * h));
    let k3 = f(&add(y, &k2, 0.5 * h));
    let k4 = f(&add(y, &k3, h));
    let mut o = *y;
    for i in 0..N {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Value, gradient and Hessian of an initial phase at a point.
pub type PhaseJet = std::sync::Arc<dyn Fn([f64; 2]) -> (f64, [f64; 2], M2) + Send + Sync>;

/// `c |x|^2 / 2`.
pub fn quadratic_phase(c: f64) -> PhaseJet {
    std::sync::Arc::new(move |x: [f64; 2]| (0.5 * c * (x[0] * x[0] + x[1] * x[1]), [c * x[0], c * x[1]], [[c, 0.0], [0.0, c]]))
}

/// Rays `y -> (x(t,y), xi(t,y))` with `J_t(y) = det grad_y x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBundle {
    pub dim: usize,
    pub t: f64,
    pub seeds: Vec<[f64; 2]>,
    pub x: Vec<[f64; 2]>,
    pub xi: Vec<[f64; 2]>,
    /// `grad_y x` per seed.
    pub dx: Vec<M2>,
    /// `grad_y xi` per seed.
    pub dxi: Vec<M2>,
    pub jac: Vec<f64>,
    /// `int (|xi|^2/2 - V) ds` along each ray.
    pub action: Vec<f64>,
    /// `-int rate ds` for the phase-shift rate supplied to the flow.
    pub shift: Vec<f64>,
    /// Smallest Jacobian seen along any ray.
    pub j_min_seen: f64,
    /// First time at which some Jacobian fell below [`J_MIN`].
    pub caustic_time: Option<f64>,
}

impl RayBundle {
    /// True while every Jacobian stays above [`J_MIN`].
    pub fn valid(&self) -> bool {
        self.caustic_time.is_none() && self.j_min_seen >= J_MIN
    }
}

/// Rate `r(y, x, J)` with `d shift/dt = -r` along each ray.
pub type ShiftRate<'a> = &'a (dyn Fn([f64; 2], [f64; 2], f64) -> f64 + Sync);

/// RK4 integration of `x' = xi, xi' = -grad V` and the variational system.
pub fn flow_scalar(
    v: &ScalarShape,
    dim: usize,
    seeds: &[[f64; 2]],
    phi0: &PhaseJet,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<RayBundle> {
    flow_scalar_with(v, dim, seeds, phi0, t0, t1, dt, None)
}

#[allow(clippy::too_many_arguments)]
pub fn flow_scalar_with(
    v: &ScalarShape,
    dim: usize,
    seeds: &[[f64; 2]],
    phi0: &PhaseJet,
    t0: f64,
    t1: f64,
    dt: f64,
    rate: Option<ShiftRate>,
) -> Result<RayBundle> {
    if dim != 1 && dim != 2 {
        return Err(LabError::InvalidInput("rays live in dimension 1 or 2".into()));
    }
    if t1 < t0 || !(dt > 0.0) {
        return Err(LabError::InvalidInput("need t1 >= t0 and dt > 0".into()));
    }
    let steps = ((t1 - t0) / dt).ceil().max(0.0) as usize;
    let h = if steps > 0 { (t1 - t0) / steps as f64 } else { 0.0 };
    let one_d = dim == 1;
    // state: x(2) xi(2) X(4) Xi(4) action shift
    let results: Vec<([f64; 14], f64, Option<f64>)> = seeds
        .par_iter()
        .map(|&y| {
            let y = if one_d { [y[0], 0.0] } else { y };
            let (_, g, hs) = phi0(y);
            let mut s = [0.0; 14];
            s[0] = y[0];
            s[1] = y[1];
            s[2] = g[0];
            s[3] = if one_d { 0.0 } else { g[1] };
            s[4] = 1.0;
            s[7] = 1.0;
            s[8] = hs[0][0];
            s[9] = if one_d { 0.0 } else { hs[0][1] };
            s[10] = if one_d { 0.0 } else { hs[1][0] };
            s[11] = if one_d { 0.0 } else { hs[1][1] };
            let rhs = |s: &[f64; 14]| -> [f64; 14] {
                let x = [s[0], s[1]];
                let gr = v.gradient(x);
                let hv = v.hessian(x);
                let xm = [[s[4], s[5]], [s[6], s[7]]];
                let xim = [[s[8], s[9]], [s[10], s[11]]];
                let hx = matmul(&hv, &xm);
                let mut d = [0.0; 14];
                d[0] = s[2];
                d[1] = s[3];
                d[2] = -gr[0];
                d[3] = -gr[1];
                d[4] = xim[0][0];
                d[5] = xim[0][1];
                d[6] = xim[1][0];
                d[7] = xim[1][1];
                d[8] = -hx[0][0];
                d[9] = -hx[0][1];
                d[10] = -hx[1][0];
                d[11] = -hx[1][1];
                if one_d {
                    for k in [1, 3, 5, 6, 7, 9, 10, 11] {
                        d[k] = 0.0;
                    }
                }
                d[12] = 0.5 * (s[2] * s[2] + s[3] * s[3]) - v.value(x);
                if let Some(r) = rate {
                    d[13] = -r(y, x, det(&xm));
                }
                d
            };
            let mut jmin = 1.0f64;
            let mut caustic = None;
            for k in 0..steps {
                s = rk4(&s, h, &rhs);
                let j = s[4] * s[7] - s[5] * s[6];
                jmin = jmin.min(j);
                if caustic.is_none() && j < J_MIN {
                    caustic = Some(t0 + (k + 1) as f64 * h);
                }
            }
            (s, jmin, caustic)
        })
        .collect();
    let mut b = RayBundle {
        dim,
        t: t1,
        seeds: seeds.to_vec(),
        x: Vec::with_capacity(seeds.len()),
        xi: Vec::with_capacity(seeds.len()),
        dx: Vec::with_capacity(seeds.len()),
        dxi: Vec::with_capacity(seeds.len()),
        jac: Vec::with_capacity(seeds.len()),
        action: Vec::with_capacity(seeds.len()),
        shift: Vec::with_capacity(seeds.len()),
        j_min_seen: 1.0,
        caustic_time: None,
    };
    for (s, jmin, caustic) in results {
        b.x.push([s[0], s[1]]);
        b.xi.push([s[2], s[3]]);
        let xm = [[s[4], s[5]], [s[6], s[7]]];
        b.dx.push(xm);
        b.dxi.push([[s[8], s[9]], [s[10], s[11]]]);
        b.jac.push(det(&xm));
        b.action.push(s[12]);
        b.shift.push(s[13]);
        b.j_min_seen = b.j_min_seen.min(jmin);
        if let Some(tc) = caustic {
            b.caustic_time = Some(b.caustic_time.map_or(tc, |c: f64| c.min(tc)));
        }
    }
    Ok(b)
}

/// Sample path of a mode flow `x' = xi, xi' = -sign x/|x|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTrajectory {
    pub sign: f64,
    pub times: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub xi: Vec<[f64; 2]>,
    /// True when the flow was stopped by the crossing monitor.
    pub crossed: bool,
}

fn mode_force(sign: f64, x: [f64; 2]) -> [f64; 2] {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        [0.0, 0.0]
    } else {
        [-sign * x[0] / r, -sign * x[1] / r]
    }
}

fn mode_step(sign: f64, s: &[f64; 4], h: f64) -> [f64; 4] {
    rk4(s, h, &|s: &[f64; 4]| {
        let f = mode_force(sign, [s[0], s[1]]);
        [s[2], s[3], f[0], f[1]]
    })
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Mode flow for the eigenvalue `sign |x|` from `(x0, xi0)` up to `t_max`, refined
/// near the origin and stopped once a passage within [`DELTA_STOP`] is bracketed.
pub fn flow_mode(sign: f64, x0: [f64; 2], xi0: [f64; 2], dt: f64, t_max: f64) -> Result<ModeTrajectory> {
    if norm(x0) < DELTA_STOP {
        return Err(LabError::DegeneratePoint(norm(x0)));
    }
    if sign.abs() != 1.0 || !(dt > 0.0) {
        return Err(LabError::InvalidInput("sign must be +-1 and dt > 0".into()));
    }
    let mut tr = ModeTrajectory { sign, times: vec![0.0], x: vec![x0], xi: vec![xi0], crossed: false };
    let mut s = [x0[0], x0[1], xi0[0], xi0[1]];
    let mut t = 0.0;
    let mut prev_r = norm(x0);
    let mut approaching = false;
    while t < t_max - 1e-15 {
        let r = norm([s[0], s[1]]);
        let speed = norm([s[2], s[3]]);
        let near = r < 20.0 * dt * speed.max(1.0);
        let mut h = if near { (DELTA_STOP / (10.0 * speed.max(V_MIN))).min(dt) } else { dt };
        h = h.min(t_max - t);
        s = mode_step(sign, &s, h);
        t += h;
        let rn = norm([s[0], s[1]]);
        tr.times.push(t);
        tr.x.push([s[0], s[1]]);
        tr.xi.push([s[2], s[3]]);
        if rn < prev_r {
            approaching = true;
        } else if approaching && near {
            approaching = false;
            if prev_r < DELTA_STOP {
                let v = norm([s[2], s[3]]);
                if v < V_MIN {
                    return Err(LabError::NonTransversal(v));
                }
                tr.crossed = true;
                return Ok(tr);
            }
        }
        if near && rn < DELTA_STOP && norm([s[2], s[3]]) < V_MIN {
            return Err(LabError::NonTransversal(norm([s[2], s[3]])));
        }
        prev_r = rn;
    }
    Ok(tr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingGeometry {
    pub t_star: f64,
    pub xi_star: [f64; 2],
    pub tau_star: f64,
    pub eta_scale: f64,
}

/// `(t*, xi*)` from the minimum of `|x(t)|^2` by quadratic interpolation.
pub fn detect_crossing(tr: &ModeTrajectory) -> Result<CrossingGeometry> {
    let r2: Vec<f64> = tr.x.iter().map(|x| x[0] * x[0] + x[1] * x[1]).collect();
    let k = r2
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .ok_or_else(|| LabError::InvalidInput("empty trajectory".into()))?;
    if r2[k].sqrt() > DELTA_STOP || k == 0 || k + 1 >= r2.len() {
        return Err(LabError::NoCrossing(r2[k].sqrt()));
    }
    let (t0, t1, t2) = (tr.times[k - 1], tr.times[k], tr.times[k + 1]);
    let (f0, f1, f2) = (r2[k - 1], r2[k], r2[k + 1]);
    // vertex of the parabola through three points
    let num = (t1 - t0).powi(2) * (f1 - f2) - (t1 - t2).powi(2) * (f1 - f0);
    let den = (t1 - t0) * (f1 - f2) - (t1 - t2) * (f1 - f0);
    let t_star = if den.abs() > 0.0 { t1 - 0.5 * num / den } else { t1 };
    // xi is linear in t on each side of the passage
    let j = if t_star >= t1 { k } else { k - 1 };
    let f = mode_force(tr.sign, tr.x[j]);
    let tau = t_star - tr.times[j];
    let xi_star = [tr.xi[j][0] + f[0] * tau, tr.xi[j][1] + f[1] * tau];
    let v = norm(xi_star);
    if v < V_MIN {
        return Err(LabError::NonTransversal(v));
    }
    Ok(CrossingGeometry { t_star, xi_star, tau_star: 0.5 * v * v, eta_scale: v.powf(-1.5) })
}

/// `T(eta) = exp(-pi eta^2 / |xi*|^3)`; zero for infinite `eta`.
pub fn transfer_coefficient(eta: f64, xi_star_norm: f64) -> f64 {
    if eta.is_infinite() {
        0.0
    } else {
        (-std::f64::consts::PI * eta * eta / xi_star_norm.powi(3)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeLabel {
    Scalar,
    Plus,
    Minus,
}

impl ModeLabel {
    pub fn sign(&self) -> f64 {
        match self {
            ModeLabel::Minus => -1.0,
            _ => 1.0,
        }
    }

    pub fn other(&self) -> ModeLabel {
        match self {
            ModeLabel::Plus => ModeLabel::Minus,
            ModeLabel::Minus => ModeLabel::Plus,
            ModeLabel::Scalar => ModeLabel::Scalar,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            ModeLabel::Scalar => "scalar",
            ModeLabel::Plus => "plus",
            ModeLabel::Minus => "minus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub y: [f64; 2],
    pub x: [f64; 2],
    pub xi: [f64; 2],
    pub weight: f64,
    pub mode: ModeLabel,
    /// Jacobian of the seed map when built from a ray bundle, 1 otherwise.
    pub jac: f64,
    pub action: f64,
    /// Two-scale parameter assigned at initialization (may be infinite).
    pub eta: f64,
}

impl Particle {
    pub fn new(x: [f64; 2], xi: [f64; 2], weight: f64, mode: ModeLabel, eta: f64) -> Self {
        Self { y: x, x, xi, weight, mode, jac: 1.0, action: 0.0, eta }
    }

    /// `x ^ xi / sqrt(eps)` at the current point.
    pub fn eta_now(&self, eps: f64) -> f64 {
        (self.x[0] * self.xi[1] - self.x[1] * self.xi[0]) / eps.sqrt()
    }
}

/// Splits a particle at a crossing with momentum `xi*`: the first child keeps its
/// mode with weight `(1 - T) w`, the second switches mode with weight `T w`.
pub fn lz_branch(p: &Particle, xi_star: [f64; 2]) -> (Particle, Particle) {
    let t = transfer_coefficient(p.eta, norm(xi_star));
    let mut keep = *p;
    let mut flip = *p;
    keep.x = [0.0, 0.0];
    keep.xi = xi_star;
    flip.x = [0.0, 0.0];
    flip.xi = xi_star;
    keep.weight = (1.0 - t) * p.weight;
    flip.weight = p.weight - keep.weight;
    flip.mode = p.mode.other();
    (keep, flip)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub time: f64,
}

impl ParticleEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Tensor-grid quadrature of a phase-space Gaussian with per-coordinate
    /// standard deviation `std`, `k` nodes per axis on `[-4 std, 4 std]`.
    pub fn gaussian(dim: usize, x0: [f64; 2], xi0: [f64; 2], std: f64, k: usize, mass: f64, mode: ModeLabel, eta: f64) -> Self {
        let nodes: Vec<(f64, f64)> = (0..k)
            .map(|i| {
                let u = if k == 1 { 0.0 } else { -4.0 + 8.0 * i as f64 / (k - 1) as f64 };
                (u * std, (-0.5 * u * u).exp())
            })
            .collect();
        let axes = 2 * dim;
        let mut particles = Vec::new();
        let total = k.pow(axes as u32);
        for idx in 0..total {
            let mut off = [0.0; 4];
            let mut w = mass;
            let mut r = idx;
            for a in 0..axes {
                let (o, wt) = nodes[r % k];
                r /= k;
                off[a] = o;
                w *= wt;
            }
            let (x, xi) = if dim == 1 {
                ([x0[0] + off[0], 0.0], [xi0[0] + off[1], 0.0])
            } else {
                ([x0[0] + off[0], x0[1] + off[1]], [xi0[0] + off[2], xi0[1] + off[3]])
            };
            particles.push(Particle::new(x, xi, w, mode, eta));
        }
        let s: f64 = particles.iter().map(|p| p.weight).sum();
        particles.iter_mut().for_each(|p| p.weight *= mass / s);
        Self { particles, time: 0.0 }
    }

    /// CSV with columns `y1,y2,x1,x2,xi1,xi2,weight,mode,J,eta`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {}", serde_json::json!({"kind": "particle_ensemble", "time": self.time, "particles": self.particles.len()}))?;
        writeln!(w, "y1,y2,x1,x2,xi1,xi2,weight,mode,J,eta")?;
        for p in &self.particles {
            writeln!(
                w,
                "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{},{:.10e},{:.10e}",
                p.y[0], p.y[1], p.x[0], p.x[1], p.xi[0], p.xi[1], p.weight, p.mode.as_str(), p.jac, p.eta
            )?;
        }
        Ok(())
    }
}

/// Characteristic dynamics for [`transport_measure`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Scalar(ScalarShape),
    /// Eigenvalue flows `+-|x|` with Landau-Zener branching at crossings.
    TwoMode,
}

pub type PhaseObservable = dyn Fn([f64; 2], [f64; 2], ModeLabel) -> f64 + Sync;

#[derive(Debug, Clone)]
pub struct TransportResult {
    pub times: Vec<f64>,
    /// `pairings[i][k]` is observable `k` at `times[i]`.
    pub pairings: Vec<Vec<f64>>,
    /// Total weight at each requested time.
    pub weights: Vec<f64>,
    pub final_ensemble: ParticleEnsemble,
    pub crossings: usize,
}

fn particle_step(dynamics: &Dynamics, p: &mut Particle, h: f64) {
    match dynamics {
        Dynamics::Scalar(v) => {
            let s = [p.x[0], p.x[1], p.xi[0], p.xi[1], p.action];
            let n = rk4(&s, h, &|s: &[f64; 5]| {
                let x = [s[0], s[1]];
                let g = v.gradient(x);
                [s[2], s[3], -g[0], -g[1], 0.5 * (s[2] * s[2] + s[3] * s[3]) - v.value(x)]
            });
            p.x = [n[0], n[1]];
            p.xi = [n[2], n[3]];
            p.action = n[4];
        }
        Dynamics::TwoMode => {
            let sign = p.mode.sign();
            let s = [p.x[0], p.x[1], p.xi[0], p.xi[1], p.action];
            let n = rk4(&s, h, &|s: &[f64; 5]| {
                let x = [s[0], s[1]];
                let f = mode_force(sign, x);
                [s[2], s[3], f[0], f[1], 0.5 * (s[2] * s[2] + s[3] * s[3]) - sign * norm(x)]
            });
            p.x = [n[0], n[1]];
            p.xi = [n[2], n[3]];
            p.action = n[4];
        }
    }
}

/// Continues a particle that passed the origin at `t*` with momentum `xi*` to time
/// `t*` + `tau` under its own mode flow (exact for the straight passage).
fn restart_after_crossing(p: &mut Particle, xi_star: [f64; 2], tau: f64) {
    let v = norm(xi_star);
    let dir = [xi_star[0] / v, xi_star[1] / v];
    let f = [-p.mode.sign() * dir[0], -p.mode.sign() * dir[1]];
    p.x = [xi_star[0] * tau + 0.5 * f[0] * tau * tau, xi_star[1] * tau + 0.5 * f[1] * tau * tau];
    p.xi = [xi_star[0] + f[0] * tau, xi_star[1] + f[1] * tau];
}

/// Advects the ensemble to `t1` and reports observable pairings at `times`.
pub fn transport_measure(
    ens: &ParticleEnsemble,
    dynamics: &Dynamics,
    t1: f64,
    dt: f64,
    times: &[f64],
    observables: &[&PhaseObservable],
) -> Result<TransportResult> {
    if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|t| *t < ens.time || *t > t1) {
        return Err(LabError::InvalidInput("pairing times must increase within [t0, t1]".into()));
    }
    let nt = times.len();
    let nobs = observables.len();
    let t0 = ens.time;
    let two_mode = matches!(dynamics, Dynamics::TwoMode);
    let per: Vec<(Vec<f64>, Vec<f64>, Vec<Particle>, usize)> = ens
        .particles
        .par_iter()
        .map(|start| {
            let mut pair = vec![0.0; nt * nobs];
            let mut wsum = vec![0.0; nt];
            let mut finals = Vec::new();
            let mut crossings = 0usize;
            let mut stack = vec![(*start, t0)];
            while let Some((mut p, mut t)) = stack.pop() {
                let mut next_obs = times.iter().position(|&s| s >= t - 1e-12).unwrap_or(nt);
                let mut prev_r = norm(p.x);
                let mut approaching = false;
                let mut last = (p, t);
                loop {
                    while next_obs < nt && (times[next_obs] - t).abs() <= 1e-12 {
                        for (k, a) in observables.iter().enumerate() {
                            pair[next_obs * nobs + k] += p.weight * a(p.x, p.xi, p.mode);
                        }
                        wsum[next_obs] += p.weight;
                        next_obs += 1;
                    }
                    if t >= t1 - 1e-12 {
                        finals.push(p);
                        break;
                    }
                    let target = if next_obs < nt { times[next_obs] } else { t1 };
                    let speed = norm(p.xi);
                    let near = two_mode && prev_r < 20.0 * dt * speed.max(1.0);
                    let mut h = if near { (DELTA_STOP / (10.0 * speed.max(V_MIN))).min(dt) } else { dt };
                    h = h.min(target - t);
                    let before = (p, t);
                    particle_step(dynamics, &mut p, h);
                    t += h;
                    let r = norm(p.x);
                    if two_mode {
                        if r < prev_r {
                            approaching = true;
                        } else if approaching && near {
                            approaching = false;
                            if prev_r < DELTA_STOP {
                                // three samples around the passage
                                let tr = ModeTrajectory {
                                    sign: p.mode.sign(),
                                    times: vec![last.1, before.1, t],
                                    x: vec![last.0.x, before.0.x, p.x],
                                    xi: vec![last.0.xi, before.0.xi, p.xi],
                                    crossed: true,
                                };
                                if let Ok(geo) = detect_crossing(&tr) {
                                    crossings += 1;
                                    let (mut keep, mut flip) = lz_branch(&before.0, geo.xi_star);
                                    let tau = t - geo.t_star;
                                    restart_after_crossing(&mut keep, geo.xi_star, tau);
                                    restart_after_crossing(&mut flip, geo.xi_star, tau);
                                    // observations between t* and t are taken after the restart
                                    if flip.weight > 0.0 {
                                        stack.push((flip, t));
                                    }
                                    p = keep;
                                }
                            }
                        }
                    }
                    last = before;
                    prev_r = r;
                }
            }
            (pair, wsum, finals, crossings)
        })
        .collect();
    let mut pairings = vec![vec![0.0; nobs]; nt];
    let mut weights = vec![0.0; nt];
    let mut finals = Vec::new();
    let mut crossings = 0;
    for (pair, ws, f, c) in per {
        for i in 0..nt {
            for k in 0..nobs {
                pairings[i][k] += pair[i * nobs + k];
            }
            weights[i] += ws[i];
        }
        finals.extend(f);
        crossings += c;
    }
    Ok(TransportResult {
        times: times.to_vec(),
        pairings,
        weights,
        final_ensemble: ParticleEnsemble { particles: finals, time: t1 },
        crossings,
    })
}

/// Seeding and step controls for [`solve_eikonal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EikonalOptions {
    /// Seed lattice spacing in `y`.
    pub seed_spacing: f64,
    /// Seeds cover `[-extent, extent]^dim`.
    pub seed_extent: f64,
    pub dt: f64,
}

impl EikonalOptions {
    pub fn for_grid(grid: &SpatialGrid) -> Self {
        let seed_spacing = if grid.dim == 1 { 5e-3 } else { 2e-2 };
        Self { seed_spacing, seed_extent: grid.half_extent, dt: 1e-3 }
    }
}

/// Eikonal phase and ray-map inverse sampled on a grid.
#[derive(Debug, Clone)]
pub struct EikonalSolution {
    pub grid: SpatialGrid,
    pub t: f64,
    /// `NaN` where no ray lands.
    pub phi: Vec<f64>,
    pub y: Vec<[f64; 2]>,
    pub jac: Vec<f64>,
    pub shift: Vec<f64>,
    pub covered: Vec<bool>,
    pub bundle: RayBundle,
}

fn seed_lattice(dim: usize, spacing: f64, extent: f64) -> (Vec<[f64; 2]>, usize) {
    let m = (2.0 * extent / spacing).ceil() as usize + 1;
    let c = |i: usize| -extent + 2.0 * extent * i as f64 / (m - 1) as f64;
    let seeds = if dim == 1 {
        (0..m).map(|i| [c(i), 0.0]).collect()
    } else {
        (0..m * m).map(|k| [c(k / m), c(k % m)]).collect()
    };
    (seeds, m)
}

/// Eikonal phase `phi(t, x)` by ray tracing and triangulated inversion of the ray map.
pub fn solve_eikonal(phi0: &PhaseJet, v: &ScalarShape, grid: &SpatialGrid, t: f64) -> Result<EikonalSolution> {
    solve_eikonal_with(phi0, v, grid, t, &EikonalOptions::for_grid(grid), None)
}

pub fn solve_eikonal_with(
    phi0: &PhaseJet,
    v: &ScalarShape,
    grid: &SpatialGrid,
    t: f64,
    opts: &EikonalOptions,
    rate: Option<ShiftRate>,
) -> Result<EikonalSolution> {
    let dim = grid.dim;
    let (seeds, m) = seed_lattice(dim, opts.seed_spacing, opts.seed_extent);
    let b = flow_scalar_with(v, dim, &seeds, phi0, 0.0, t, opts.dt, rate)?;
    if b.j_min_seen < J_MIN {
        return Err(LabError::Caustic(format!("min J = {:.3e} below {J_MIN} before t = {t}", b.j_min_seen)));
    }
    // per-seed second-order data in the landing variable
    let hx: Vec<M2> = (0..seeds.len())
        .map(|k| {
            let xinv = inv(&b.dx[k]);
            if dim == 1 {
                [[xinv[0][0], 0.0], [0.0, 0.0]]
            } else {
                xinv
            }
        })
        .collect();
    let hphi: Vec<M2> = (0..seeds.len()).map(|k| matmul(&b.dxi[k], &hx[k])).collect();
    let phase: Vec<f64> = (0..seeds.len()).map(|k| phi0(seeds[k]).0 + b.action[k]).collect();
    let npts = grid.len();
    let mut sol = EikonalSolution {
        grid: *grid,
        t,
        phi: vec![f64::NAN; npts],
        y: vec![[f64::NAN; 2]; npts],
        jac: vec![f64::NAN; npts],
        shift: vec![f64::NAN; npts],
        covered: vec![false; npts],
        bundle: b.clone(),
    };
    let h = grid.spacing();
    let lo_idx = |a: f64| (((a + grid.half_extent) / h - 1e-9).ceil().max(0.0)) as usize;
    let hi_idx = |a: f64| {
        let f = ((a + grid.half_extent) / h + 1e-9).floor();
        if f < 0.0 {
            None
        } else {
            Some((f as usize).min(grid.n - 1))
        }
    };
    let mut assign = |idx: usize, verts: &[(usize, f64)]| {
        if sol.covered[idx] {
            return;
        }
        let x = grid.point(idx);
        let (mut p, mut j, mut g) = (0.0, 0.0, 0.0);
        let mut y = [0.0; 2];
        for &(k, lam) in verts {
            let d = [x[0] - b.x[k][0], x[1] - b.x[k][1]];
            let hd = [hphi[k][0][0] * d[0] + hphi[k][0][1] * d[1], hphi[k][1][0] * d[0] + hphi[k][1][1] * d[1]];
            p += lam * (phase[k] + b.xi[k][0] * d[0] + b.xi[k][1] * d[1] + 0.5 * (d[0] * hd[0] + d[1] * hd[1]));
            y[0] += lam * (seeds[k][0] + hx[k][0][0] * d[0] + hx[k][0][1] * d[1]);
            y[1] += lam * (seeds[k][1] + hx[k][1][0] * d[0] + hx[k][1][1] * d[1]);
            j += lam * b.jac[k];
            g += lam * b.shift[k];
        }
        sol.phi[idx] = p;
        sol.y[idx] = y;
        sol.jac[idx] = j;
        sol.shift[idx] = g;
        sol.covered[idx] = true;
    };
    if dim == 1 {
        for k in 0..m - 1 {
            let (a, c) = (b.x[k][0], b.x[k + 1][0]);
            let (lo, hi) = (a.min(c), a.max(c));
            let Some(ih) = hi_idx(hi) else { continue };
            for i in lo_idx(lo)..=ih {
                let x = grid.coord(i);
                let lam = if c != a { (x - a) / (c - a) } else { 0.0 };
                if (-1e-12..=1.0 + 1e-12).contains(&lam) {
                    assign(i, &[(k, 1.0 - lam), (k + 1, lam)]);
                }
            }
        }
    } else {
        for i in 0..m - 1 {
            for jj in 0..m - 1 {
                let q = [i * m + jj, (i + 1) * m + jj, (i + 1) * m + jj + 1, i * m + jj + 1];
                for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
                    let p: Vec<[f64; 2]> = tri.iter().map(|&k| b.x[k]).collect();
                    let xmin = p.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
                    let xmax = p.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
                    let ymin = p.iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
                    let ymax = p.iter().map(|v| v[1]).fold(f64::NEG_INFINITY, f64::max);
                    let (Some(i1), Some(j1)) = (hi_idx(xmax), hi_idx(ymax)) else { continue };
                    let d = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                    if d == 0.0 {
                        continue;
                    }
                    for a in lo_idx(xmin)..=i1 {
                        for c in lo_idx(ymin)..=j1 {
                            let x = [grid.coord(a), grid.coord(c)];
                            let l1 = ((x[0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (x[1] - p[0][1])) / d;
                            let l2 = ((p[1][0] - p[0][0]) * (x[1] - p[0][1]) - (x[0] - p[0][0]) * (p[1][1] - p[0][1])) / d;
                            let l0 = 1.0 - l1 - l2;
                            if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                                assign(a * grid.n + c, &[(tri[0], l0), (tri[1], l1), (tri[2], l2)]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sol)
}

/// Phase correction in [`wkb_assemble`].
#[derive(Clone, Copy)]
pub enum WkbShift<'a> {
    None,
    /// `G = -int f(J^-1 |a0(y)|^2) ds`.
    Nonlinear(&'a (dyn Fn(f64) -> f64 + Sync)),
    /// `G = -int F0(x(s)) ds`.
    Linear(&'a (dyn Fn([f64; 2]) -> f64 + Sync)),
}

/// Amplitude profile for [`wkb_assemble`].
pub type Amplitude<'a> = &'a (dyn Fn([f64; 2]) -> C64 + Sync);

/// `a(t,x) e^{iG(t,x)} e^{i phi(t,x)/eps}` with `a = J^{-1/2} a0(y(t,x))`.
#[allow(clippy::too_many_arguments)]
pub fn wkb_assemble(
    a0: Amplitude,
    phi0: &PhaseJet,
    v: &ScalarShape,
    shift: WkbShift,
    grid: &SpatialGrid,
    t: f64,
    eps: f64,
    opts: &EikonalOptions,
) -> Result<WaveField> {
    if t == 0.0 {
        return Ok(WaveField::from_fn(*grid, |x| a0(x) * C64::from_polar(1.0, phi0(x).0 / eps)));
    }
    let nl = |y: [f64; 2], _: [f64; 2], j: f64| match shift {
        WkbShift::Nonlinear(f) => f(a0(y).norm_sqr() / j),
        _ => 0.0,
    };
    let lin = |_: [f64; 2], x: [f64; 2], _: f64| match shift {
        WkbShift::Linear(f0) => f0(x),
        _ => 0.0,
    };
    let rate: Option<ShiftRate> = match shift {
        WkbShift::None => None,
        WkbShift::Nonlinear(_) => Some(&nl),
        WkbShift::Linear(_) => Some(&lin),
    };
    let sol = solve_eikonal_with(phi0, v, grid, t, opts, rate)?;
    let vals = (0..grid.len())
        .map(|i| {
            if !sol.covered[i] {
                return C64::new(0.0, 0.0);
            }
            let amp = a0(sol.y[i]) / sol.jac[i].sqrt();
            let g = if rate.is_some() { sol.shift[i] } else { 0.0 };
            amp * C64::from_polar(1.0, g + sol.phi[i] / eps)
        })
        .collect();
    WaveField::from_components(*grid, vec![vals])
}
