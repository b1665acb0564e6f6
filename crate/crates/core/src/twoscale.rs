//! Two-scale statistics of `eta = (x - c) ^ xi / sqrt(eps)` from streamed
//! coherent-state overlaps.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fft::FftEngine;
use crate::field::WaveField;
use crate::packets::Profile;
use crate::wigner::project_mode;

/// Gaussian coherent-state window `g(y - x) e^{i xi.y/eps}` with
/// `|g(d)|^2 ~ exp(-(d_par^2 + d_perp^2/s^2)/eps)` and phase `chirp |d|^2 / (2 eps)`,
/// where `par` is the direction of `x - origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HusimiWindow {
    pub stretch: f64,
    pub chirp: f64,
    pub origin: [f64; 2],
}

impl HusimiWindow {
    pub fn isotropic() -> Self {
        Self { stretch: 1.0, chirp: 0.0, origin: [0.0, 0.0] }
    }

    /// Window stretched by `eps^{-1/4}` along the angular direction, which keeps the
    /// blur of `eta` at order `eps^{1/4}`; `chirp` should match the local `xi ~ r x`.
    pub fn two_scale(eps: f64, chirp: f64, origin: [f64; 2]) -> Self {
        Self { stretch: eps.powf(-0.25), chirp, origin }
    }
}

/// Uniform `eta` bins on `[-eta_max, eta_max]` plus two overflow bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaBins {
    pub eta_max: f64,
    pub nbins: usize,
}

impl Default for EtaBins {
    fn default() -> Self {
        Self { eta_max: 6.0, nbins: 101 }
    }
}

impl EtaBins {
    pub fn width(&self) -> f64 {
        2.0 * self.eta_max / self.nbins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        -self.eta_max + (k as f64 + 0.5) * self.width()
    }

    pub fn edge(&self, k: usize) -> f64 {
        -self.eta_max + k as f64 * self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelect {
    Total,
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoScaleHistogram {
    pub eps: f64,
    pub bins: EtaBins,
    pub weights: Vec<f64>,
    pub underflow: f64,
    pub overflow: f64,
    /// Squared norm of the (projected) field that was binned.
    pub field_mass: f64,
    pub warnings: Vec<String>,
}

impl TwoScaleHistogram {
    fn empty(eps: f64, bins: EtaBins) -> Self {
        Self { eps, bins, weights: vec![0.0; bins.nbins], underflow: 0.0, overflow: 0.0, field_mass: 0.0, warnings: Vec::new() }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.underflow + self.overflow
    }

    pub fn overflow_fraction(&self) -> f64 {
        let t = self.total();
        if t == 0.0 {
            0.0
        } else {
            (self.underflow + self.overflow) / t
        }
    }

    /// Probabilities `(underflow, bins..., overflow)` normalized to the total.
    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total();
        let mut p = Vec::with_capacity(self.weights.len() + 2);
        p.push(self.underflow);
        p.extend_from_slice(&self.weights);
        p.push(self.overflow);
        if t > 0.0 {
            p.iter_mut().for_each(|v| *v /= t);
        }
        p
    }

    /// L1 distance between normalized histograms laid out as in [`probabilities`].
    pub fn l1_distance(&self, reference: &[f64]) -> f64 {
        self.probabilities().iter().zip(reference).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Center of the heaviest in-range bin.
    pub fn peak_eta(&self) -> f64 {
        let k = self
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.bins.center(k)
    }

    /// Mean of `eta` over the in-range bins.
    pub fn mean_eta(&self) -> f64 {
        let w: f64 = self.weights.iter().sum();
        if w == 0.0 {
            return 0.0;
        }
        self.weights.iter().enumerate().map(|(k, v)| v * self.bins.center(k)).sum::<f64>() / w
    }

    /// Histogram of an accumulated sum (both must share bins and scale).
    pub fn merge(mut self, other: &TwoScaleHistogram) -> Self {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        self.field_mass += other.field_mass;
        self
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "two_scale_histogram",
            "eps": self.eps,
            "eta_max": self.bins.eta_max,
            "nbins": self.bins.nbins,
            "underflow": self.underflow,
            "overflow": self.overflow,
            "field_mass": self.field_mass,
            "columns": ["eta_lo", "eta_hi", "weight"],
        });
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {meta}")?;
        writeln!(w, "eta_lo,eta_hi,weight")?;
        writeln!(w, "-inf,{:.10e},{:.10e}", -self.bins.eta_max, self.underflow)?;
        for (k, v) in self.weights.iter().enumerate() {
            writeln!(w, "{:.10e},{:.10e},{:.10e}", self.bins.edge(k), self.bins.edge(k + 1), v)?;
        }
        writeln!(w, "{:.10e},inf,{:.10e}", self.bins.eta_max, self.overflow)?;
        Ok(())
    }

    /// Deposit `mass` spread as the sum of two centered uniforms of widths `a`, `b`.
    fn deposit(&mut self, center: f64, a: f64, b: f64, mass: f64) {
        let (a, b) = if a >= b { (a, b) } else { (b, a) };
        let half = 0.5 * (a + b);
        let (lo, hi) = (center - half, center + half);
        if a <= 1e-14 * (1.0 + center.abs()) {
            self.deposit_point(center, mass);
            return;
        }
        let cdf = |t: f64| -> f64 {
            let u = (t - lo).clamp(0.0, a + b);
            if b <= 1e-12 * a {
                return u / a;
            }
            if u <= b {
                u * u / (2.0 * a * b)
            } else if u <= a {
                b / (2.0 * a) + (u - b) / a
            } else {
                1.0 - (a + b - u).powi(2) / (2.0 * a * b)
            }
        };
        let em = self.bins.eta_max;
        if lo < -em {
            self.underflow += mass * cdf(-em);
        }
        if hi > em {
            self.overflow += mass * (1.0 - cdf(em));
        }
        let w = self.bins.width();
        let n = self.bins.nbins;
        let k0 = (((lo.max(-em) + em) / w).floor() as isize).clamp(0, n as isize - 1) as usize;
        let k1 = (((hi.min(em) + em) / w).floor() as isize).clamp(0, n as isize - 1) as usize;
        if lo >= em || hi <= -em {
            return;
        }
        let mut prev = cdf(self.bins.edge(k0).max(lo));
        for k in k0..=k1 {
            let next = cdf(self.bins.edge(k + 1).min(hi));
            self.weights[k] += mass * (next - prev);
            prev = next;
        }
    }

    fn deposit_point(&mut self, eta: f64, mass: f64) {
        let em = self.bins.eta_max;
        if eta < -em {
            self.underflow += mass;
        } else if eta >= em {
            self.overflow += mass;
        } else {
            let k = (((eta + em) / self.bins.width()).floor() as usize).min(self.bins.nbins - 1);
            self.weights[k] += mass;
        }
    }
}

/// One x sample of a streamed Husimi transform: phase-space cell masses on a
/// `p x p` xi lattice `xi = eps * 2 pi q / (p h)`, FFT-ordered.
pub struct HusimiSample<'a> {
    pub x: [f64; 2],
    pub p: usize,
    pub dxi: f64,
    pub masses: &'a [f64],
}

impl HusimiSample<'_> {
    pub fn xi(&self, q: usize) -> [f64; 2] {
        let s = |m: usize| if m < self.p / 2 { m as f64 } else { m as f64 - self.p as f64 };
        [self.dxi * s(q / self.p), self.dxi * s(q % self.p)]
    }
}

/// Streams the windowed Husimi transform of a 2D field over an x lattice of
/// spacing at most the window's narrow standard deviation. Each lattice point
/// sees only the part of the field inside its window and the field support.
/// Lattice points per parallel work unit in [`husimi_stream`].
const STREAM_CHUNK: usize = 64;

pub fn husimi_stream<A: Send>(
    field: &WaveField,
    eps: f64,
    window: &HusimiWindow,
    init: impl Fn() -> A + Sync + Send,
    accumulate: impl Fn(&mut A, &HusimiSample) + Sync + Send,
    merge: impl Fn(A, A) -> A + Sync + Send,
) -> Result<A> {
    let g = field.grid;
    if g.dim != 2 {
        return Err(LabError::InvalidInput("streamed Husimi transform is 2D".into()));
    }
    if !(window.stretch > 0.0) {
        return Err(LabError::InvalidInput("window stretch must be positive".into()));
    }
    let (n, h) = (g.n, g.spacing());
    let dens = field.density();
    let dmax = dens.iter().copied().fold(0.0, f64::max);
    if dmax == 0.0 {
        return Ok(init());
    }
    // support bounding box
    let (mut lo, mut hi) = ([n, n], [0usize, 0usize]);
    for (i, v) in dens.iter().enumerate() {
        if *v > 1e-14 * dmax {
            let ij = [i / n, i % n];
            for a in 0..2 {
                lo[a] = lo[a].min(ij[a]);
                hi[a] = hi[a].max(ij[a]);
            }
        }
    }
    let s = window.stretch;
    let reach = s.max(1.0) * (37.0 * eps).sqrt();
    let narrow = s.min(1.0) * (eps / 2.0).sqrt();
    let stride = ((narrow / h).floor() as usize).clamp(1, n);
    let dx = stride as f64 * h;
    let rk = (reach / h).ceil() as usize;
    // lattice on grid-aligned coordinates, allowed to extend past the box
    let mut axes: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
    for a in 0..2 {
        let st = stride as i64;
        let from = (lo[a] as i64 - rk as i64).div_euclid(st) * st;
        let to = hi[a] as i64 + rk as i64;
        axes[a] = (from..=to).step_by(stride).collect();
    }
    let samples: Vec<[i64; 2]> = axes[0].iter().flat_map(|&i| axes[1].iter().map(move |&j| [i, j])).collect();
    let m = (0..2).map(|a| (hi[a] - lo[a] + 1).min(2 * rk + 1)).max().unwrap();
    let p = (3 * m / 2).next_power_of_two().max(8);
    let engine = FftEngine::with_shape(p, 2);
    let norm = (std::f64::consts::PI * eps * s).powf(-0.5);
    let cell = h * h * dx * dx / (p * p) as f64;
    let dxi = 2.0 * std::f64::consts::PI * eps / (p as f64 * h);
    let total_mass = field.mass();

    // fixed chunks merged in order keep the summation order independent of
    // the worker count
    let partials: Vec<A> = samples
        .par_chunks(STREAM_CHUNK)
        .map(|chunk| {
            let mut acc = init();
            let mut buf = vec![C64::new(0.0, 0.0); p * p];
            let mut masses = vec![0.0; p * p];
            for ij in chunk {
                let x = [-g.half_extent + ij[0] as f64 * h, -g.half_extent + ij[1] as f64 * h];
                let xb = [x[0] - window.origin[0], x[1] - window.origin[1]];
                let r = xb[0].hypot(xb[1]);
                let (ep, en) = if r > 1e-12 { ([xb[0] / r, xb[1] / r], [-xb[1] / r, xb[0] / r]) } else { ([1.0, 0.0], [0.0, 1.0]) };
                let rk = rk as i64;
                let c0 = [(lo[0] as i64).max(ij[0] - rk), (lo[1] as i64).max(ij[1] - rk)];
                let c1 = [(hi[0] as i64).min(ij[0] + rk), (hi[1] as i64).min(ij[1] + rk)];
                if c0[0] > c1[0] || c0[1] > c1[1] {
                    continue;
                }
                let (c0, c1) = ([c0[0] as usize, c0[1] as usize], [c1[0] as usize, c1[1] as usize]);
                masses.iter_mut().for_each(|v| *v = 0.0);
                let mut any = false;
                for comp in &field.comps {
                    let mut seen = 0.0;
                    buf.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                    for i0 in c0[0]..=c1[0] {
                        let d0 = g.coord(i0) - x[0];
                        for i1 in c0[1]..=c1[1] {
                            let v = comp[i0 * n + i1];
                            if v.re == 0.0 && v.im == 0.0 {
                                continue;
                            }
                            let d1 = g.coord(i1) - x[1];
                            let dp = d0 * ep[0] + d1 * ep[1];
                            let dn = d0 * en[0] + d1 * en[1];
                            let q = dp * dp + dn * dn / (s * s);
                            let amp = norm * (-0.5 * q / eps).exp();
                            let w = v * C64::from_polar(amp, -window.chirp * (d0 * d0 + d1 * d1) / (2.0 * eps));
                            seen += w.norm_sqr();
                            buf[(i0 - c0[0]) * p + (i1 - c0[1])] = w;
                        }
                    }
                    // windows that see a negligible part of the field are dropped
                    if seen * h * h * dx * dx <= 1e-14 * total_mass {
                        continue;
                    }
                    any = true;
                    engine.forward(&mut buf);
                    for (m, b) in masses.iter_mut().zip(&buf) {
                        *m += cell * b.norm_sqr();
                    }
                }
                if any {
                    accumulate(&mut acc, &HusimiSample { x, p, dxi, masses: &masses });
                }
            }
            acc
        })
        .collect();
    let result = partials.into_iter().fold(init(), &merge);
    Ok(result)
}

/// Husimi mass binned by `eta = (x - origin) ^ xi / sqrt(eps)`, after projecting
/// on the selected mode. Each phase-space cell is spread over the `eta` range it spans.
pub fn two_scale_histogram(
    field: &WaveField,
    eps: f64,
    mode: ModeSelect,
    bins: &EtaBins,
    window: &HusimiWindow,
) -> Result<TwoScaleHistogram> {
    if field.grid.dim != 2 {
        return Err(LabError::InvalidInput("two-scale histogram needs a 2D field".into()));
    }
    if bins.nbins == 0 || !(bins.eta_max > 0.0) {
        return Err(LabError::InvalidInput("bins need nbins > 0 and eta_max > 0".into()));
    }
    let projected;
    let f = match mode {
        ModeSelect::Total => field,
        ModeSelect::Plus | ModeSelect::Minus => {
            projected = project_mode(field, mode == ModeSelect::Plus)?;
            &projected
        }
    };
    let se = eps.sqrt();
    let origin = window.origin;
    let mut hist = husimi_stream(
        f,
        eps,
        window,
        || TwoScaleHistogram::empty(eps, *bins),
        |acc, smp| {
            let xb = [smp.x[0] - origin[0], smp.x[1] - origin[1]];
            let a = xb[0].abs() * smp.dxi / se;
            let b = xb[1].abs() * smp.dxi / se;
            let cut = 1e-20 * smp.masses.iter().copied().fold(0.0, f64::max);
            for (q, &m) in smp.masses.iter().enumerate() {
                if m <= cut {
                    continue;
                }
                let xi = smp.xi(q);
                acc.deposit((xb[0] * xi[1] - xb[1] * xi[0]) / se, a, b, m);
            }
        },
        |a, b| a.merge(&b),
    )?;
    hist.field_mass = f.mass();
    let of = hist.overflow_fraction();
    if of > 0.5 {
        hist.warnings.push(format!(
            "{:.1}% of the mass is in the overflow bins; concentration at eta = +-infinity",
            100.0 * of
        ));
    }
    Ok(hist)
}

/// `gamma(eta) = (2pi)^{-2} int |F Phi(r x0 + eta x0_perp)|^2 dr` with `x0_perp = (-x0_2, x0_1)`.
pub fn gamma_reference(profile: &Profile, x0: [f64; 2], eta: f64) -> f64 {
    let r0 = x0[0].hypot(x0[1]);
    let span = 14.0 / (profile.width() * r0);
    let k = 4000;
    let dr = 2.0 * span / k as f64;
    let mut s = 0.0;
    for i in 0..=k {
        let r = -span + i as f64 * dr;
        let z = [r * x0[0] - eta * x0[1], r * x0[1] + eta * x0[0]];
        let wgt = if i == 0 || i == k { 0.5 } else { 1.0 };
        s += wgt * profile.fourier(z, 2).powi(2);
    }
    s * dr / (2.0 * std::f64::consts::PI).powi(2)
}

/// Normalized bin probabilities of `gamma`, laid out as `(underflow, bins..., overflow)`.
pub fn gamma_bin_probabilities(profile: &Profile, x0: [f64; 2], bins: &EtaBins) -> Vec<f64> {
    let sub = 16;
    let simpson = |a: f64, b: f64| -> f64 {
        let hh = (b - a) / sub as f64;
        let mut s = gamma_reference(profile, x0, a) + gamma_reference(profile, x0, b);
        for i in 1..sub {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * gamma_reference(profile, x0, a + i as f64 * hh);
        }
        s * hh / 3.0
    };
    let r0 = x0[0].hypot(x0[1]);
    let far = bins.eta_max.max(14.0 / (profile.width() * r0)) * 1.5;
    let mut p = Vec::with_capacity(bins.nbins + 2);
    let tails = 64;
    let tail = |a: f64, b: f64| -> f64 {
        (0..tails).map(|i| {
            let t0 = a + (b - a) * i as f64 / tails as f64;
            simpson(t0, t0 + (b - a) / tails as f64)
        })
        .sum()
    };
    p.push(tail(-far, -bins.eta_max));
    for k in 0..bins.nbins {
        p.push(simpson(bins.edge(k), bins.edge(k + 1)));
    }
    p.push(tail(bins.eta_max, far));
    let t: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= t);
    p
}

/// Families `eps^{-beta} Phi((x - x0)/eps^beta)` sharing one Gaussian `Phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub eps: f64,
    pub betas: Vec<f64>,
    pub center: [f64; 2],
    pub width: f64,
    pub bins: EtaBins,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self { eps: 1e-3, betas: vec![0.3, 0.5, 0.7], center: [1.0, 0.0], width: 0.5, bins: EtaBins::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeRow {
    pub beta: f64,
    pub n: usize,
    pub half_extent: f64,
    /// Share of the mass in bins with `|eta| <= eta_max / 10`.
    pub central_fraction: f64,
    pub overflow_fraction: f64,
    /// L1 distance to the binned `gamma` reference.
    pub gamma_l1: f64,
    pub histogram: TwoScaleHistogram,
}

/// Two-scale histograms of the three concentration families on grids sized
/// to resolve both the packet (4 points per width) and the coherent window.
pub fn concentration_regimes(cfg: &RegimeConfig) -> Result<Vec<RegimeRow>> {
    let eps = cfg.eps;
    let x0 = cfg.center;
    let r0 = x0[0].hypot(x0[1]);
    let profile = Profile::Gaussian { width: cfg.width };
    let reference = gamma_bin_probabilities(&profile, x0, &cfg.bins);
    let window = HusimiWindow::two_scale(eps, 0.0, [0.0, 0.0]);
    cfg.betas
        .iter()
        .map(|&beta| {
            let w = eps.powf(beta) * cfg.width;
            let l = r0 + (10.0 * w).max(0.1);
            let h = (w / 4.5).min((eps / 2.0).sqrt() / 2.0);
            let n = ((2.0 * l / h).ceil() as usize).next_power_of_two();
            let grid = crate::grid::SpatialGrid::new(2, n, l)?;
            let params = crate::packets::PacketParams::coherent(beta, x0, cfg.width);
            let field = crate::packets::build_wave_packet(&grid, eps, &params)?;
            let hist = two_scale_histogram(&field, eps, ModeSelect::Total, &cfg.bins, &window)?;
            let cut = 0.1 * cfg.bins.eta_max;
            let central: f64 = (0..cfg.bins.nbins)
                .filter(|k| cfg.bins.center(*k).abs() <= cut)
                .map(|k| hist.weights[k])
                .sum();
            Ok(RegimeRow {
                beta,
                n,
                half_extent: l,
                central_fraction: central / hist.total(),
                overflow_fraction: hist.overflow_fraction(),
                gamma_l1: hist.l1_distance(&reference),
                histogram: hist,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::packets::{build_wave_packet, PacketParams, Polarization};
    use std::f64::consts::PI;

    #[test]
    fn gamma_gaussian_closed_form() {
        // |x0| = 1: gamma is proportional to exp(-w^2 eta^2)
        for w in [0.5, 1.0, 2.0] {
            let prof = Profile::Gaussian { width: w };
            let x0 = [0.6, 0.8];
            let g0 = gamma_reference(&prof, x0, 0.0);
            for eta in [0.3, 1.0, 1.7] {
                let ratio = gamma_reference(&prof, x0, eta) / g0;
                assert!((ratio - (-w * w * eta * eta).exp()).abs() <= 1e-10);
            }
            // (2pi)^{-2} w^4 sqrt(pi)/w at eta = 0
            assert!((g0 - w.powi(3) * PI.sqrt() / (4.0 * PI * PI)).abs() <= 1e-10 * g0);
            let p = gamma_bin_probabilities(&prof, x0, &EtaBins::default());
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deposit_conserves_mass() {
        let mut h = TwoScaleHistogram::empty(0.01, EtaBins { eta_max: 1.0, nbins: 10 });
        h.deposit(0.95, 0.3, 0.1, 2.0);
        h.deposit(-0.3, 0.05, 0.2, 1.0);
        h.deposit(0.0, 0.0, 0.0, 0.5);
        h.deposit(-1.0, 0.4, 0.4, 1.5);
        assert!((h.total() - 5.0).abs() < 1e-13);
        assert!(h.overflow > 0.0 && h.underflow > 0.0);
        assert!(h.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn isotropic_stream_preserves_mass() {
        let eps = 0.01;
        let g = SpatialGrid::new(2, 128, 1.5).unwrap();
        let f = WaveField::from_fn(g, |x| {
            let r2 = (x[0] - 0.9).powi(2) + x[1] * x[1];
            C64::from_polar((-r2 / 0.02).exp(), (2.0 * x[0] + x[1] * x[1]) / 0.3)
        });
        let h = two_scale_histogram(&f, eps, ModeSelect::Total, &EtaBins::default(), &HusimiWindow::isotropic()).unwrap();
        assert!((h.total() - f.mass()).abs() <= 1e-8 * f.mass(), "{} vs {}", h.total(), f.mass());
        let tw = HusimiWindow::two_scale(eps, 0.0, [0.0, 0.0]);
        let h2 = two_scale_histogram(&f, eps, ModeSelect::Total, &EtaBins::default(), &tw).unwrap();
        assert!((h2.total() - f.mass()).abs() <= 1e-3 * f.mass(), "{} vs {}", h2.total(), f.mass());
    }

    #[test]
    fn offset_packet_peaks_near_eta0() {
        let eps = 1e-3;
        let g = SpatialGrid::new(2, 512, 1.5).unwrap();
        let mut p = PacketParams::coherent(0.5, [1.0, 0.0], 1.0);
        p.r0 = -0.8;
        p.omega0 = [0.0, 1.5];
        p.alpha = 0.5;
        let f = build_wave_packet(&g, eps, &p).unwrap();
        let bins = EtaBins::default();
        let h = two_scale_histogram(&f, eps, ModeSelect::Total, &bins, &HusimiWindow::two_scale(eps, p.r0, [0.0, 0.0])).unwrap();
        assert!((h.peak_eta() - p.eta0()).abs() <= 3.0 * bins.width(), "peak {} eta0 {}", h.peak_eta(), p.eta0());
    }

    #[test]
    fn mode_selection_projects_first() {
        let eps = 1e-2;
        let g = SpatialGrid::new(2, 256, 2.0).unwrap();
        let mut p = PacketParams::coherent(0.5, [1.0, 0.2], 1.0);
        p.polarization = Polarization::Plus;
        let f = build_wave_packet(&g, eps, &p).unwrap();
        let w = HusimiWindow::isotropic();
        let minus = two_scale_histogram(&f, eps, ModeSelect::Minus, &EtaBins::default(), &w).unwrap();
        let plus = two_scale_histogram(&f, eps, ModeSelect::Plus, &EtaBins::default(), &w).unwrap();
        assert!(minus.total() <= 1e-10);
        assert!((plus.total() - f.mass()).abs() <= 1e-8 * f.mass());
    }
}
