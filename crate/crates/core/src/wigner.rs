//! Wigner and Husimi transforms, moments and mode masses.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::projectors;
use crate::error::{LabError, Result};
use crate::fft::FftEngine;
use crate::field::WaveField;
use crate::grid::SpatialGrid;

/// Largest number of phase-space samples a dense density may hold.
pub const MAX_DENSE_SAMPLES: usize = 1 << 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Wigner,
    Husimi,
}

/// Samples `values[ix * n_xi + k]` at `x[ix]` and the `k`-th point of the
/// tensor `xi_axis` grid (ascending, row-major in 2D).
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceDensity {
    pub kind: DensityKind,
    pub eps: f64,
    pub dim: usize,
    pub x: Vec<[f64; 2]>,
    /// Quadrature weight of one x sample.
    pub x_cell: f64,
    pub xi_axis: Vec<f64>,
    /// Quadrature weight of one xi sample.
    pub xi_cell: f64,
    pub values: Vec<f64>,
}

#[derive(Serialize)]
struct DensityMeta<'a> {
    kind: DensityKind,
    eps: f64,
    dim: usize,
    x_samples: usize,
    x_cell: f64,
    xi_samples_per_axis: usize,
    xi_min: f64,
    xi_max: f64,
    xi_cell: f64,
    columns: &'a [&'a str],
}

impl PhaseSpaceDensity {
    pub fn n_xi(&self) -> usize {
        self.xi_axis.len().pow(self.dim as u32)
    }

    pub fn xi_point(&self, k: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.xi_axis[k], 0.0]
        } else {
            let m = self.xi_axis.len();
            [self.xi_axis[k / m], self.xi_axis[k % m]]
        }
    }

    pub fn value(&self, ix: usize, k: usize) -> f64 {
        self.values[ix * self.n_xi() + k]
    }

    /// Phase-space integral of the samples.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.x_cell * self.xi_cell
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV with a `#`-prefixed JSON metadata line.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let cols: Vec<&str> = if self.dim == 1 { vec!["x", "xi", "value"] } else { vec!["x1", "x2", "xi1", "xi2", "value"] };
        let meta = DensityMeta {
            kind: self.kind,
            eps: self.eps,
            dim: self.dim,
            x_samples: self.x.len(),
            x_cell: self.x_cell,
            xi_samples_per_axis: self.xi_axis.len(),
            xi_min: self.xi_axis.first().copied().unwrap_or(0.0),
            xi_max: self.xi_axis.last().copied().unwrap_or(0.0),
            xi_cell: self.xi_cell,
            columns: &cols,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# {}", serde_json::to_string(&meta).map_err(|e| LabError::Io(e.to_string()))?)?;
        writeln!(w, "{}", cols.join(","))?;
        for (ix, x) in self.x.iter().enumerate() {
            for k in 0..self.n_xi() {
                let xi = self.xi_point(k);
                let v = self.value(ix, k);
                if self.dim == 1 {
                    writeln!(w, "{:.10e},{:.10e},{:.10e}", x[0], xi[0], v)?;
                } else {
                    writeln!(w, "{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}", x[0], x[1], xi[0], xi[1], v)?;
                }
            }
        }
        Ok(())
    }
}

/// Which x points a Wigner slice covers.
#[derive(Debug, Clone, PartialEq)]
pub enum XSelection {
    All,
    Indices(Vec<usize>),
}

impl XSelection {
    fn indices(&self, grid: &SpatialGrid) -> Result<Vec<usize>> {
        match self {
            XSelection::All => Ok((0..grid.len()).collect()),
            XSelection::Indices(v) => {
                if v.iter().any(|&i| i >= grid.len()) {
                    return Err(LabError::InvalidInput("x selection index outside the grid".into()));
                }
                Ok(v.clone())
            }
        }
    }
}

fn signed(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Fraction of spectral mass with some axis wavenumber above half the Nyquist limit.
fn upper_band_fraction(field: &WaveField) -> f64 {
    let g = field.grid;
    let engine = FftEngine::new(&g);
    let (mut hi, mut all) = (0.0, 0.0);
    for c in &field.comps {
        let mut b = c.clone();
        engine.forward(&mut b);
        for (idx, v) in b.iter().enumerate() {
            let p = v.norm_sqr();
            all += p;
            let ks = if g.dim == 1 { [signed(idx, g.n), 0] } else { [signed(idx / g.n, g.n), signed(idx % g.n, g.n)] };
            if ks.iter().any(|k| k.unsigned_abs() as usize > g.n / 4) {
                hi += p;
            }
        }
    }
    if all == 0.0 {
        0.0
    } else {
        hi / all
    }
}

/// Wigner transform `(2pi)^{-d} int f(x - eps y/2) conj f(x + eps y/2) e^{i y.xi} dy`
/// at the selected grid points, traced over components, with the field
/// extended by zero outside the box.
///
/// The xi grid has spacing `pi eps / (2L)` and `n` points per axis.
pub fn wigner_slice(field: &WaveField, eps: f64, sel: &XSelection) -> Result<PhaseSpaceDensity> {
    let g = field.grid;
    let idx = sel.indices(&g)?;
    let nxi = g.len();
    if idx.len().saturating_mul(nxi) > MAX_DENSE_SAMPLES {
        return Err(LabError::InvalidInput(format!(
            "dense Wigner of {} x {} samples exceeds the memory guard; select fewer x points",
            idx.len(),
            nxi
        )));
    }
    let frac = upper_band_fraction(field);
    if frac > 1e-8 {
        return Err(LabError::UnderResolved(format!(
            "spectral mass fraction {frac:.2e} above half Nyquist aliases the Wigner kernel"
        )));
    }
    let (n, h, d) = (g.n, g.spacing(), g.dim as i32);
    let engine = FftEngine::new(&g);
    let pref = (2.0 / eps * h / (2.0 * std::f64::consts::PI)).powi(d);
    // zero extension outside the box, so periodic images do not interfere
    let inside = |i: i64| i >= 0 && i < n as i64;
    let zero = C64::new(0.0, 0.0);
    let mut values = vec![0.0; idx.len() * nxi];
    let mut buf = vec![C64::new(0.0, 0.0); nxi];
    let mut acc = vec![0.0; nxi];
    for (row, &p) in idx.iter().enumerate() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let (p0, p1) = if g.dim == 1 { (p as i64, 0) } else { ((p / n) as i64, (p % n) as i64) };
        for c in &field.comps {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = if g.dim == 1 {
                    let s = signed(j, n);
                    let (a, b) = (p0 - s, p0 + s);
                    if inside(a) && inside(b) {
                        c[a as usize] * c[b as usize].conj()
                    } else {
                        zero
                    }
                } else {
                    let (s0, s1) = (signed(j / n, n), signed(j % n, n));
                    let (a0, a1, b0, b1) = (p0 - s0, p1 - s1, p0 + s0, p1 + s1);
                    if inside(a0) && inside(a1) && inside(b0) && inside(b1) {
                        c[a0 as usize * n + a1 as usize] * c[b0 as usize * n + b1 as usize].conj()
                    } else {
                        zero
                    }
                };
            }
            engine.inverse(&mut buf);
            for (k, a) in acc.iter_mut().enumerate() {
                // reorder FFT output to ascending xi
                let src = if g.dim == 1 {
                    (k + n / 2) % n
                } else {
                    ((k / n + n / 2) % n) * n + (k % n + n / 2) % n
                };
                *a += buf[src].re;
            }
        }
        values[row * nxi..(row + 1) * nxi].iter_mut().zip(&acc).for_each(|(v, a)| *v = pref * a);
    }
    let dxi = std::f64::consts::PI * eps / (2.0 * g.half_extent);
    let xi_axis = (0..n).map(|k| dxi * (k as f64 - (n / 2) as f64)).collect();
    Ok(PhaseSpaceDensity {
        kind: DensityKind::Wigner,
        eps,
        dim: g.dim,
        x: idx.iter().map(|&i| g.point(i)).collect(),
        x_cell: g.cell_volume(),
        xi_axis,
        xi_cell: dxi.powi(d),
        values,
    })
}

/// Position density `int w dxi` at each x sample.
pub fn density_moment(d: &PhaseSpaceDensity) -> Vec<f64> {
    let m = d.n_xi();
    d.values.chunks(m).map(|row| row.iter().sum::<f64>() * d.xi_cell).collect()
}

/// Position density computed directly from a field.
pub fn field_density(field: &WaveField) -> Vec<f64> {
    field.density()
}

/// Coherent-state (Husimi) density on the grid points, subsampled so the
/// x spacing stays below `sqrt(eps/2)`, with xi on `eps` times the dual grid.
pub fn husimi(field: &WaveField, eps: f64) -> Result<PhaseSpaceDensity> {
    let g = field.grid;
    let (n, h, d) = (g.n, g.spacing(), g.dim);
    // power-of-two stride keeps the samples on a sub-lattice of the grid
    let bound = (((eps / 2.0).sqrt() / h).floor() as usize).clamp(1, n);
    let stride = 1usize << (usize::BITS - 1 - bound.leading_zeros());
    let xs: Vec<usize> = (0..n).step_by(stride).collect();
    let samples: Vec<[usize; 2]> = if d == 1 {
        xs.iter().map(|&i| [i, 0]).collect()
    } else {
        xs.iter().flat_map(|&i| xs.iter().map(move |&j| [i, j])).collect()
    };
    let nxi = g.len();
    if samples.len().saturating_mul(nxi) > MAX_DENSE_SAMPLES {
        return Err(LabError::InvalidInput("dense Husimi exceeds the memory guard; use the streamed histogram".into()));
    }
    let engine = FftEngine::new(&g);
    let l2 = 2.0 * g.half_extent;
    let norm = (std::f64::consts::PI * eps).powf(-(d as f64) / 4.0);
    let pref = (h / (2.0 * std::f64::consts::PI * eps).sqrt()).powi(2 * d as i32);
    let minimg = |v: f64| v - l2 * (v / l2).round();
    let mut values = vec![0.0; samples.len() * nxi];
    let mut buf = vec![C64::new(0.0, 0.0); nxi];
    let mut x_out = Vec::with_capacity(samples.len());
    for (row, s) in samples.iter().enumerate() {
        let x = if d == 1 { [g.coord(s[0]), 0.0] } else { [g.coord(s[0]), g.coord(s[1])] };
        x_out.push(x);
        let out = &mut values[row * nxi..(row + 1) * nxi];
        for c in &field.comps {
            for (j, b) in buf.iter_mut().enumerate() {
                let y = g.point(j);
                let mut r2 = minimg(y[0] - x[0]).powi(2);
                if d == 2 {
                    r2 += minimg(y[1] - x[1]).powi(2);
                }
                *b = c[j] * (norm * (-0.5 * r2 / eps).exp());
            }
            engine.forward(&mut buf);
            for (k, o) in out.iter_mut().enumerate() {
                let src = if d == 1 { (k + n / 2) % n } else { ((k / n + n / 2) % n) * n + (k % n + n / 2) % n };
                *o += pref * buf[src].norm_sqr();
            }
        }
    }
    let dxi = eps * g.dual_spacing();
    Ok(PhaseSpaceDensity {
        kind: DensityKind::Husimi,
        eps,
        dim: d,
        x: x_out,
        x_cell: (stride as f64 * h).powi(d as i32),
        xi_axis: (0..n).map(|k| dxi * (k as f64 - (n / 2) as f64)).collect(),
        xi_cell: dxi.powi(d as i32),
        values,
    })
}

/// Phase-space quadrature of `density * a`.
pub fn pair_observable(d: &PhaseSpaceDensity, a: impl Fn([f64; 2], [f64; 2]) -> f64) -> f64 {
    let m = d.n_xi();
    let xis: Vec<[f64; 2]> = (0..m).map(|k| d.xi_point(k)).collect();
    let mut s = 0.0;
    for (ix, x) in d.x.iter().enumerate() {
        let row = &d.values[ix * m..(ix + 1) * m];
        s += row.iter().zip(&xis).map(|(v, xi)| v * a(*x, *xi)).sum::<f64>();
    }
    s * d.x_cell * d.xi_cell
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillatoryFraction {
    pub fraction: f64,
    /// True when `R/eps` lies beyond the dual grid and the fraction was set to 0.
    pub beyond_grid: bool,
}

/// `int_{|k| >= R/eps} |F(phi psi)|^2 / ||phi psi||^2`.
pub fn eps_oscillatory_fraction(
    field: &WaveField,
    eps: f64,
    cutoff: impl Fn([f64; 2]) -> f64,
    radius: f64,
) -> OscillatoryFraction {
    let g = field.grid;
    let kc = radius / eps;
    if kc > g.xi_max() * if g.dim == 2 { std::f64::consts::SQRT_2 } else { 1.0 } {
        return OscillatoryFraction { fraction: 0.0, beyond_grid: true };
    }
    let cut = field.multiplied(cutoff);
    let engine = FftEngine::new(&g);
    let k2 = g.xi_sq();
    let (mut hi, mut all) = (0.0, 0.0);
    for c in &cut.comps {
        let mut b = c.clone();
        engine.forward(&mut b);
        for (v, k) in b.iter().zip(&k2) {
            let p = v.norm_sqr();
            all += p;
            if k.sqrt() >= kc {
                hi += p;
            }
        }
    }
    let fraction = if all == 0.0 { 0.0 } else { hi / all };
    OscillatoryFraction { fraction, beyond_grid: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMasses {
    pub plus: f64,
    pub minus: f64,
    pub core: f64,
}

impl ModeMasses {
    pub fn total(&self) -> f64 {
        self.plus + self.minus + self.core
    }
}

/// Masses of `Pi+ psi` and `Pi- psi` outside `|x| <= delta0`, plus the mass inside.
pub fn mode_masses(field: &WaveField, delta0: f64) -> Result<ModeMasses> {
    if field.ncomp() != 2 || field.grid.dim != 2 {
        return Err(LabError::InvalidInput("mode masses need a 2-component 2D field".into()));
    }
    let g = field.grid;
    let (mut p, mut m, mut core) = (0.0, 0.0, 0.0);
    for i in 0..g.len() {
        let x = g.point(i);
        let (a, b) = (field.comps[0][i], field.comps[1][i]);
        if x[0].hypot(x[1]) <= delta0 {
            core += a.norm_sqr() + b.norm_sqr();
            continue;
        }
        let (pp, _) = projectors(x);
        let pa = a * pp[0][0] + b * pp[0][1];
        let pb = a * pp[1][0] + b * pp[1][1];
        let plus = pa.norm_sqr() + pb.norm_sqr();
        p += plus;
        // Pi- = I - Pi+ and the two ranges are orthogonal
        m += (a - pa).norm_sqr() + (b - pb).norm_sqr();
    }
    let v = g.cell_volume();
    Ok(ModeMasses { plus: p * v, minus: m * v, core: core * v })
}

/// Pointwise `Pi+ psi` or `Pi- psi` (zero at the degenerate point).
pub fn project_mode(field: &WaveField, plus: bool) -> Result<WaveField> {
    if field.ncomp() != 2 || field.grid.dim != 2 {
        return Err(LabError::InvalidInput("mode projection needs a 2-component 2D field".into()));
    }
    let g = field.grid;
    let mut out = field.clone();
    for i in 0..g.len() {
        let (pp, pm) = projectors(g.point(i));
        let p = if plus { pp } else { pm };
        let (a, b) = (field.comps[0][i], field.comps[1][i]);
        out.comps[0][i] = a * p[0][0] + b * p[0][1];
        out.comps[1][i] = a * p[1][0] + b * p[1][1];
    }
    Ok(out)
}

/// 1D phase-space observable `a(x, xi)` for [`husimi_pairings_1d`].
pub type Observable1d<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);

/// Husimi pairings `\int\int H(x, xi) a_k(x, xi)` of a scalar 1D field,
/// streamed over x samples of spacing at most `sqrt(eps/2)`; each sample
/// transforms only the window patch, so large grids stay cheap.
pub fn husimi_pairings_1d(field: &WaveField, eps: f64, observables: &[Observable1d]) -> Result<Vec<f64>> {
    let g = field.grid;
    if g.dim != 1 || field.ncomp() != 1 {
        return Err(LabError::InvalidInput("streamed 1D pairings need a scalar 1D field".into()));
    }
    let (n, h) = (g.n, g.spacing());
    let dens = field.density();
    let dmax = dens.iter().copied().fold(0.0, f64::max);
    if dmax == 0.0 {
        return Ok(vec![0.0; observables.len()]);
    }
    let lo = dens.iter().position(|v| *v > 1e-14 * dmax).unwrap_or(0);
    let hi = dens.iter().rposition(|v| *v > 1e-14 * dmax).unwrap_or(n - 1);
    let reach = ((37.0 * eps).sqrt() / h).ceil() as i64;
    let stride = (((eps / 2.0).sqrt() / h).floor() as i64).max(1);
    let p = ((2 * reach + 1) as usize).next_power_of_two().min(n);
    let half = (p / 2) as i64;
    let engine = FftEngine::with_shape(p, 1);
    let norm = (std::f64::consts::PI * eps).powf(-0.25);
    let pref = h * h / (2.0 * std::f64::consts::PI * eps);
    let dxi = 2.0 * std::f64::consts::PI * eps / (p as f64 * h);
    let dx = stride as f64 * h;
    let from = (lo as i64 - reach).div_euclid(stride) * stride;
    let rows: Vec<i64> = (from..=hi as i64 + reach).step_by(stride as usize).collect();
    let c = &field.comps[0];
    let l2 = 2.0 * g.half_extent;
    let per_row: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| {
            let x = g.coord(0) + i as f64 * h;
            let mut buf = vec![C64::new(0.0, 0.0); p];
            for (q, b) in buf.iter_mut().enumerate() {
                let j = i - half + q as i64;
                let y = g.coord(0) + j as f64 * h;
                let d = y - x;
                let jj = j.rem_euclid(n as i64) as usize;
                // periodic field: the window patch never wraps past half the box
                if d.abs() <= 0.5 * l2 {
                    *b = c[jj] * (norm * (-0.5 * d * d / eps).exp());
                }
            }
            engine.forward(&mut buf);
            let mut out = vec![0.0; observables.len()];
            for (m, b) in buf.iter().enumerate() {
                let k = if m < p / 2 { m as f64 } else { m as f64 - p as f64 };
                let hval = pref * b.norm_sqr();
                for (o, a) in out.iter_mut().zip(observables) {
                    *o += hval * a(x, k * dxi);
                }
            }
            out
        })
        .collect();
    let mut total = vec![0.0; observables.len()];
    for row in &per_row {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|v| v * dx * dxi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packets::{build_wave_packet, PacketParams, Polarization};
    use std::f64::consts::PI;

    fn coherent_1d(g: SpatialGrid, eps: f64, x0: f64, p0: f64) -> WaveField {
        let c = (PI * eps).powf(-0.25);
        WaveField::from_fn(g, |x| C64::from_polar(c * (-(x[0] - x0).powi(2) / (2.0 * eps)).exp(), p0 * x[0] / eps))
    }

    #[test]
    fn coherent_state_wigner_closed_form() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        let f = coherent_1d(g, eps, 0.0, 0.0);
        let w = wigner_slice(&f, eps, &XSelection::All).unwrap();
        let mut err: f64 = 0.0;
        for (ix, x) in w.x.iter().enumerate() {
            for k in 0..w.n_xi() {
                let xi = w.xi_axis[k];
                let exact = (-(x[0] * x[0] + xi * xi) / eps).exp() / (PI * eps);
                err = err.max((w.value(ix, k) - exact).abs());
            }
        }
        assert!(err <= 1e-6, "{err:e}");
        assert!((w.total() - f.mass()).abs() <= 1e-10);
    }

    #[test]
    fn odd_function_has_negative_wigner_at_origin() {
        let g = SpatialGrid::new(1, 256, 10.0).unwrap();
        let f = WaveField::from_fn(g, |x| C64::new(x[0] * (-0.5 * x[0] * x[0]).exp(), 0.0));
        let i0 = g.nearest_index(0.0);
        let w = wigner_slice(&f, 1.0, &XSelection::Indices(vec![i0])).unwrap();
        let k0 = w.xi_axis.iter().position(|v| *v == 0.0).unwrap();
        // exact value is -1/pi * ||f||^2 / ... ; only the sign matters here
        assert!(w.value(0, k0) < 0.0);
        assert!((w.value(0, k0) + f.mass() / PI).abs() < 1e-8);
    }

    #[test]
    fn moment_identity_and_even_in_xi() {
        let eps = 0.1;
        let g = SpatialGrid::new(1, 256, 4.0).unwrap();
        let f = WaveField::from_fn(g, |x| C64::new((-(x[0] - 0.3).powi(2)).exp() + 0.5 * (-(x[0] + 1.0).powi(2) * 3.0).exp(), 0.0));
        let w = wigner_slice(&f, eps, &XSelection::All).unwrap();
        let n = density_moment(&w);
        let dens = f.density();
        for (a, b) in n.iter().zip(&dens) {
            assert!((a - b).abs() <= 1e-12);
        }
        let m = w.xi_axis.len();
        for ix in 0..w.x.len() {
            for k in 1..m {
                assert!((w.value(ix, k) - w.value(ix, m - k)).abs() <= 1e-12);
            }
        }
        let zero = wigner_slice(&WaveField::zeros(g, 1), eps, &XSelection::All).unwrap();
        assert!(density_moment(&zero).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coherent_density_moment_normalized() {
        let eps = 0.02;
        let g = SpatialGrid::new(1, 1024, 4.0).unwrap();
        let w = wigner_slice(&coherent_1d(g, eps, 0.4, 0.5), eps, &XSelection::All).unwrap();
        let total: f64 = density_moment(&w).iter().sum::<f64>() * g.spacing();
        assert!((total - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn two_dimensional_slice_moment() {
        let eps = 0.1;
        let g = SpatialGrid::new(2, 32, 3.0).unwrap();
        let f = WaveField::from_fn(g, |x| C64::from_polar((-(x[0] * x[0] + 2.0 * x[1] * x[1])).exp(), 0.3 * x[0]));
        let sel = XSelection::Indices(vec![0, 17 * 32 + 5, 16 * 32 + 16]);
        let w = wigner_slice(&f, eps, &sel).unwrap();
        let n = density_moment(&w);
        let dens = f.density();
        for (row, &i) in [0usize, 17 * 32 + 5, 16 * 32 + 16].iter().enumerate() {
            assert!((n[row] - dens[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn under_resolved_selection_rejected() {
        let g = SpatialGrid::new(1, 64, 1.0).unwrap();
        let f = WaveField::from_fn(g, |x| C64::from_polar(1.0, g.xi(24) * x[0]));
        assert!(matches!(wigner_slice(&f, 0.1, &XSelection::All), Err(LabError::UnderResolved(_))));
    }

    #[test]
    fn coherent_state_husimi() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 256, 3.0).unwrap();
        let (x0, p0) = (0.4, 0.0);
        let f = coherent_1d(g, eps, x0, p0);
        let h = husimi(&f, eps).unwrap();
        let mut err: f64 = 0.0;
        for (ix, x) in h.x.iter().enumerate() {
            for k in 0..h.n_xi() {
                let xi = h.xi_axis[k];
                let exact = (-((x[0] - x0).powi(2) + (xi - p0).powi(2)) / (2.0 * eps)).exp() / (2.0 * PI * eps);
                err = err.max((h.value(ix, k) - exact).abs());
            }
        }
        assert!(err <= 1e-8, "{err:e}");
        assert!((h.total() - f.mass()).abs() <= 1e-8, "{}", h.total());
    }

    #[test]
    fn husimi_is_nonnegative_and_mass_preserving() {
        let eps = 0.05;
        let g = SpatialGrid::new(2, 64, 2.0).unwrap();
        let f = WaveField::from_fn(g, |x| {
            let s = (3.1 * x[0]).sin() * (1.7 * x[1] + 0.4).cos();
            C64::new(s, (2.3 * x[0] * x[1]).sin()) * (-(x[0] * x[0] + x[1] * x[1])).exp()
        });
        let h = husimi(&f, eps).unwrap();
        assert!(h.min() >= -1e-12);
        assert!((h.total() - f.mass()).abs() <= 1e-8 * f.mass().max(1.0), "{} vs {}", h.total(), f.mass());
    }

    #[test]
    fn streamed_pairings_match_dense_husimi() {
        let eps = 0.01;
        let g = SpatialGrid::new(1, 2048, 4.0).unwrap();
        let f = coherent_1d(g, eps, 0.3, -0.6).add_scaled(C64::new(0.0, 0.7), &coherent_1d(g, eps, -0.9, 0.2));
        let dense = husimi(&f, eps).unwrap();
        let obs: [(Observable1d, fn([f64; 2], [f64; 2]) -> f64); 3] = [
            (&|_, _| 1.0, |_, _| 1.0),
            (&|x, xi| x * (-xi * xi).exp(), |x, xi| x[0] * (-xi[0] * xi[0]).exp()),
            (&|x, xi| (2.0 * x + xi).cos(), |x, xi| (2.0 * x[0] + xi[0]).cos()),
        ];
        let streamed = husimi_pairings_1d(&f, eps, &obs.iter().map(|o| o.0).collect::<Vec<_>>()).unwrap();
        for ((_, d), s) in obs.iter().zip(&streamed) {
            let v = pair_observable(&dense, d);
            assert!((v - s).abs() <= 1e-8, "{v} vs {s}");
        }
        assert!((streamed[0] - f.mass()).abs() <= 1e-8);
    }

    #[test]
    fn pairing_properties() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        let f = coherent_1d(g, eps, -0.5, 0.8);
        let w = wigner_slice(&f, eps, &XSelection::All).unwrap();
        assert!((pair_observable(&w, |_, _| 1.0) - f.mass()).abs() <= 1e-10);
        let up = |_: [f64; 2], xi: [f64; 2]| 0.5 * (1.0 + (xi[0] / 0.05).tanh());
        assert!(pair_observable(&w, up) >= 0.99);
        let a = |x: [f64; 2], xi: [f64; 2]| (-x[0] * x[0] - xi[0] * xi[0]).exp();
        let b = |x: [f64; 2], xi: [f64; 2]| x[0] * (-xi[0] * xi[0]).exp();
        let lhs = pair_observable(&w, |x, xi| 2.0 * a(x, xi) - 3.0 * b(x, xi));
        let rhs = 2.0 * pair_observable(&w, a) - 3.0 * pair_observable(&w, b);
        assert!((lhs - rhs).abs() <= 1e-14);
    }

    #[test]
    fn wigner_and_husimi_pairings_agree_to_order_eps() {
        let g = SpatialGrid::new(1, 512, 4.0).unwrap();
        // a = exp(-(x^2 + xi^2)/2): max |second derivative| is 1
        let a = |x: [f64; 2], xi: [f64; 2]| (-0.5 * (x[0] * x[0] + xi[0] * xi[0])).exp();
        for eps in [0.05, 0.02] {
            let f = coherent_1d(g, eps, 0.3, -0.6).add_scaled(C64::new(0.0, 0.7), &coherent_1d(g, eps, -0.9, 0.2));
            let w = wigner_slice(&f, eps, &XSelection::All).unwrap();
            let h = husimi(&f, eps).unwrap();
            let diff = (pair_observable(&w, a) - pair_observable(&h, a)).abs();
            assert!(diff <= 5.0 * eps * f.mass(), "eps {eps}: {diff:e}");
        }
    }

    #[test]
    fn oscillatory_fraction_cases() {
        let eps = 0.05;
        let g = SpatialGrid::new(1, 1024, 8.0).unwrap();
        let fixed = WaveField::from_fn(g, |x| C64::new((-x[0] * x[0]).exp(), 0.0));
        let bump = |x: [f64; 2]| (-x[0] * x[0] / 4.0).exp();
        assert!(eps_oscillatory_fraction(&fixed, eps, bump, 4.0).fraction <= 1e-8);
        let wkb = WaveField::from_fn(g, |x| C64::from_polar((-x[0] * x[0]).exp(), 0.5 * x[0] * x[0] / eps));
        // |grad phi0| = |x| <= 2 on the cutoff support
        let support = |x: [f64; 2]| if x[0].abs() < 2.0 { (1.0 - (x[0] / 2.0).powi(2)).powi(3) } else { 0.0 };
        let r = eps_oscillatory_fraction(&wkb, eps, support, 10.0 * 2.0);
        assert!(r.beyond_grid || r.fraction <= 1e-4);
        let near = eps_oscillatory_fraction(&wkb, eps, support, 2.5);
        assert!(!near.beyond_grid && near.fraction <= 1e-4, "{:?}", near);
        let zero = eps_oscillatory_fraction(&WaveField::zeros(g, 1), eps, bump, 1.0);
        assert_eq!(zero.fraction, 0.0);
        let far = eps_oscillatory_fraction(&fixed, eps, bump, 1e3);
        assert!(far.beyond_grid && far.fraction == 0.0);
    }

    #[test]
    fn mode_mass_cases() {
        let g = SpatialGrid::new(2, 256, 2.0).unwrap();
        let eps = 1e-2;
        let mut p = PacketParams::coherent(0.5, [1.0, 0.3], 1.0);
        p.polarization = Polarization::Plus;
        let f = build_wave_packet(&g, eps, &p).unwrap();
        let m = mode_masses(&f, 0.1).unwrap();
        assert!((m.plus - PI).abs() <= 1e-8 && m.minus <= 1e-8 && m.core <= 1e-8, "{m:?}");
        assert!((m.total() - f.mass()).abs() <= 1e-12 * f.mass());
        let swapped = mode_masses(&project_mode(&f, false).unwrap(), 0.1).unwrap();
        assert!(swapped.plus <= 1e-12);
        let mut q = PacketParams::coherent(0.5, [-0.6, -1.0], 1.0);
        q.polarization = Polarization::Minus;
        let f2 = build_wave_packet(&g, eps, &q).unwrap();
        let both = mode_masses(&f.add_scaled(C64::new(1.0, 0.0), &f2), 0.1).unwrap();
        let m2 = mode_masses(&f2, 0.1).unwrap();
        assert!((both.plus - m.plus - m2.plus).abs() <= 1e-8);
        assert!((both.minus - m.minus - m2.minus).abs() <= 1e-8);
    }
}
