//! Bayesian estimation of the split-line frequencies `(ω, Δω)`.
//!
//! The data vector is projected onto an orthonormalized version of the basis
//! functions `g_m(t)`; the marginal log-likelihood (amplitudes and noise level
//! integrated out) depends on the data only through the projection energy:
//!
//! ```text
//! L(ω, Δω) = (m − N)/2 · log10(1 − m⟨h²⟩ / (N⟨d²⟩))
//! ```
//!
//! with `m` basis functions and `N` samples.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::DataTrace;
use crate::optim::{nelder_mead, Bounds, NelderMeadConfig};
use crate::signal::{single_frequency_design, DesignMatrix, SignalParams, SPLIT_BASIS};

/// The basis is degenerate when `min α_m < DEGENERACY_RATIO · max α_m`.
pub const DEGENERACY_RATIO: f64 = 1e-10;
/// Floor applied to the argument of `log10`.
pub const LOG10_FLOOR: f64 = 1e-300;
/// A residual fraction at or below this counts as a perfect fit.
pub const SATURATION_LEVEL: f64 = 1e-12;

/// Projection of the data onto the orthonormalized basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoProjection {
    /// `h = H d` with `H = V G`.
    pub h: Vec<f64>,
    /// Least-squares amplitudes `a = hᵀ V`.
    pub amplitudes: Vec<f64>,
    /// Eigenvalues `α_m` of `G Gᵀ`, ascending.
    pub basis_eigenvalues: Vec<f64>,
    /// `min α / max α`.
    pub condition_ratio: f64,
    pub samples: usize,
    /// `Σ d_n²`.
    pub data_energy: f64,
}

impl OrthoProjection {
    pub fn basis_count(&self) -> usize {
        self.h.len()
    }

    /// `⟨h²⟩ = (1/m) Σ h_m²`.
    pub fn mean_h2(&self) -> f64 {
        self.h_energy() / self.basis_count() as f64
    }

    /// `⟨d²⟩ = (1/N) Σ d_n²`.
    pub fn mean_d2(&self) -> f64 {
        self.data_energy / self.samples as f64
    }

    fn h_energy(&self) -> f64 {
        self.h.iter().map(|x| x * x).sum()
    }

    /// Residual sum of squares of the least-squares fit.
    pub fn residual_energy(&self) -> f64 {
        (self.data_energy - self.h_energy()).max(0.0)
    }

    pub fn log_likelihood(&self) -> LogLikelihood {
        let m = self.basis_count() as f64;
        let n = self.samples as f64;
        if self.data_energy == 0.0 {
            return LogLikelihood {
                value: 0.0,
                saturated: false,
            };
        }
        let arg = 1.0 - m * self.mean_h2() / (n * self.mean_d2());
        LogLikelihood {
            value: 0.5 * (m - n) * arg.max(LOG10_FLOOR).log10(),
            saturated: arg <= SATURATION_LEVEL,
        }
    }
}

/// A `log10` likelihood value; `saturated` marks a fit that explains all of the
/// data energy, where the value is set by the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    pub saturated: bool,
}

/// Projects `data` onto the rows of `rows` (each of length `N`).
fn project_rows(rows: &[&[f64]], data: &[f64]) -> Result<OrthoProjection> {
    let m = rows.len();
    let n = data.len();
    if n <= m {
        return Err(Error::InsufficientData { needed: m + 1, got: n });
    }
    let gram = DMatrix::from_fn(m, m, |i, j| dot(rows[i], rows[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let alpha: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let (lo, hi) = (alpha[0], alpha[m - 1]);
    let ratio = if hi > 0.0 { lo / hi } else { 0.0 };
    if !(ratio >= DEGENERACY_RATIO) {
        return Err(Error::DegenerateBasis { ratio });
    }
    // V = diag(α^{-1/2}) Eᵀ; row k of V is e_k / √α_k
    let v = DMatrix::from_fn(m, m, |k, j| eig.eigenvectors[(j, order[k])] / alpha[k].sqrt());
    // h = (V G) d = V (G d)
    let gd = DVector::from_iterator(m, rows.iter().map(|r| dot(r, data)));
    let h = &v * gd;
    let a = v.transpose() * &h;
    Ok(OrthoProjection {
        h: h.iter().copied().collect(),
        amplitudes: a.iter().copied().collect(),
        basis_eigenvalues: alpha,
        condition_ratio: ratio,
        samples: n,
        data_energy: dot(data, data),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn orthonormal_projection(g: &DesignMatrix, trace: &DataTrace) -> Result<OrthoProjection> {
    project_values(g, &trace.frequencies())
}

/// [`orthonormal_projection`] for an arbitrary real data vector.
pub fn project_values(g: &DesignMatrix, data: &[f64]) -> Result<OrthoProjection> {
    if g.times().len() != data.len() {
        return Err(Error::invalid(format!(
            "design matrix has {} columns but the data has {} points",
            g.times().len(),
            data.len()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..g.basis_count()).map(|m| g.row(m)).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    project_rows(&refs, data)
}

/// Split-line model rows at `(ω, Δω)`.
fn split_rows(omega: f64, delta_omega: f64, times: &[f64]) -> [Vec<f64>; 4] {
    let lo = omega - delta_omega;
    let hi = omega + delta_omega;
    [
        vec![1.0; times.len()],
        times.iter().map(|t| (lo * t).cos()).collect(),
        times.iter().map(|t| (hi * t).cos()).collect(),
        times.iter().map(|t| (2.0 * omega * t).cos()).collect(),
    ]
}

fn split_projection(omega: f64, delta_omega: f64, times: &[f64], data: &[f64]) -> Result<OrthoProjection> {
    let rows = split_rows(omega, delta_omega, times);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    project_rows(&refs, data)
}

/// Least-squares line amplitudes `(a0, a1, a2, a3)` at fixed `(ω, Δω)`.
pub fn fit_amplitudes(omega: f64, delta_omega: f64, trace: &DataTrace) -> Result<[f64; 4]> {
    let p = split_projection(omega, delta_omega, &trace.times(), &trace.frequencies())?;
    let mut a = [0.0; 4];
    a.copy_from_slice(&p.amplitudes);
    Ok(a)
}

/// `log10` likelihood of the split-line model at `(ω, Δω)`.
pub fn log_likelihood(omega: f64, delta_omega: f64, trace: &DataTrace) -> Result<LogLikelihood> {
    Ok(split_projection(omega, delta_omega, &trace.times(), &trace.frequencies())?.log_likelihood())
}

/// `log10` likelihood of the unsplit model `{1, cos ωt, cos 2ωt}`.
pub fn single_frequency_log_likelihood(omega: f64, trace: &DataTrace) -> Result<LogLikelihood> {
    let g = single_frequency_design(omega, &trace.times())?;
    Ok(orthonormal_projection(&g, trace)?.log_likelihood())
}

/// `count` evenly spaced values from `start` to `end` inclusive.
pub fn linspace(start: f64, end: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..count)
            .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

fn check_axis(axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if axis.iter().any(|x| !x.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid axis must be finite and strictly increasing"));
    }
    Ok(())
}

/// Log-likelihood on an `ω × Δω` grid; cells with a degenerate basis are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSurface {
    pub omega: Vec<f64>,
    pub delta_omega: Vec<f64>,
    /// Row-major in `ω`: cell `(i, j)` is at `i · delta_omega.len() + j`.
    pub values: Vec<Option<f64>>,
}

impl LikelihoodSurface {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.delta_omega.len() + j]
    }

    pub fn finite_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }

    /// Cells in row-major order as `(ω, Δω, value)`.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, Option<f64>)> + '_ {
        let nd = self.delta_omega.len();
        self.values
            .iter()
            .enumerate()
            .map(move |(k, v)| (self.omega[k / nd], self.delta_omega[k % nd], *v))
    }
}

/// Evaluates the split-line log-likelihood on every grid cell.
///
/// `cos((ω ∓ Δω)t)` is assembled from per-axis sine/cosine tables by angle
/// addition, so each cell costs a handful of multiplications per sample.
pub fn likelihood_surface(trace: &DataTrace, omega_grid: &[f64], delta_grid: &[f64]) -> Result<LikelihoodSurface> {
    check_axis(omega_grid)?;
    check_axis(delta_grid)?;
    let times = trace.times();
    let data = trace.frequencies();
    let n = times.len();
    if n <= SPLIT_BASIS {
        return Err(Error::InsufficientData { needed: SPLIT_BASIS + 1, got: n });
    }
    let table = |f: f64| -> (Vec<f64>, Vec<f64>) { times.iter().map(|t| (f * t).sin_cos()).unzip() };
    let delta_tables: Vec<(Vec<f64>, Vec<f64>)> = delta_grid.iter().map(|&d| table(d)).collect();

    let values: Vec<Option<f64>> = omega_grid
        .par_iter()
        .flat_map_iter(|&w| {
            let (sw, cw) = table(w);
            let ones = vec![1.0; n];
            let c2: Vec<f64> = cw.iter().zip(&sw).map(|(c, s)| c * c - s * s).collect();
            let mut lo = vec![0.0; n];
            let mut hi = vec![0.0; n];
            delta_tables
                .iter()
                .map(|(sd, cd)| {
                    for k in 0..n {
                        let cc = cw[k] * cd[k];
                        let ss = sw[k] * sd[k];
                        lo[k] = cc + ss;
                        hi[k] = cc - ss;
                    }
                    let rows: [&[f64]; 4] = [&ones, &lo, &hi, &c2];
                    project_rows(&rows, &data).ok().map(|p| p.log_likelihood().value)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    Ok(LikelihoodSurface {
        omega: omega_grid.to_vec(),
        delta_omega: delta_grid.to_vec(),
        values,
    })
}

/// The grid maximum of a surface, polished by one Newton step on the local
/// quadratic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub delta_omega: f64,
    /// Surface value at the grid maximum.
    pub value: f64,
    pub grid_index: (usize, usize),
    /// Second-difference Hessian in `(ω, Δω)`; zero where a neighbour is missing.
    pub curvature: [[f64; 2]; 2],
    /// Peak value minus the median of all finite cells.
    pub margin: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Grid argmax (ties go to the lowest `(ω, Δω)` index), then a quadratic polish
/// bounded to the neighbouring cells.
pub fn find_peak(surface: &LikelihoodSurface) -> Result<Peak> {
    let (nw, nd) = (surface.omega.len(), surface.delta_omega.len());
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..nw {
        for j in 0..nd {
            if let Some(v) = surface.get(i, j) {
                if best.is_none_or(|(_, _, b)| v > b) {
                    best = Some((i, j, v));
                }
            }
        }
    }
    let (i, j, value) = best.ok_or(Error::AllDegenerate)?;
    let mut finite: Vec<f64> = surface.finite_values().collect();
    let margin = (value - median(&mut finite)).max(0.0);

    let at = |a: isize, b: isize| -> Option<f64> {
        if a < 0 || b < 0 || a as usize >= nw || b as usize >= nd {
            return None;
        }
        surface.get(a as usize, b as usize)
    };
    let (ii, jj) = (i as isize, j as isize);

    // second differences on a stencil shifted inward at the edges
    let axis_second = |len: usize, idx: isize, get: &dyn Fn(isize) -> Option<f64>, step: f64| -> Option<f64> {
        if len < 3 {
            return None;
        }
        let c = idx.clamp(1, len as isize - 2);
        Some((get(c + 1)? - 2.0 * get(c)? + get(c - 1)?) / (step * step))
    };
    let hw = if nw >= 2 { surface.omega[1.min(nw - 1)] - surface.omega[0] } else { 0.0 };
    let hd = if nd >= 2 { surface.delta_omega[1.min(nd - 1)] - surface.delta_omega[0] } else { 0.0 };
    let step_w = |a: isize| if nw >= 3 { spacing(&surface.omega, a.clamp(1, nw as isize - 2) as usize) } else { hw };
    let step_d = |b: isize| if nd >= 3 { spacing(&surface.delta_omega, b.clamp(1, nd as isize - 2) as usize) } else { hd };

    let d_ww = axis_second(nw, ii, &|a| at(a, jj), step_w(ii));
    let d_dd = axis_second(nd, jj, &|b| at(ii, b), step_d(jj));
    let d_wd = if nw >= 3 && nd >= 3 {
        let a = ii.clamp(1, nw as isize - 2);
        let b = jj.clamp(1, nd as isize - 2);
        (|| Some((at(a + 1, b + 1)? - at(a + 1, b - 1)? - at(a - 1, b + 1)? + at(a - 1, b - 1)?) / (4.0 * step_w(ii) * step_d(jj))))()
    } else {
        None
    };
    let curvature = [
        [d_ww.unwrap_or(0.0), d_wd.unwrap_or(0.0)],
        [d_wd.unwrap_or(0.0), d_dd.unwrap_or(0.0)],
    ];

    let mut omega = surface.omega[i];
    let mut delta_omega = surface.delta_omega[j];
    let interior = i >= 1 && i + 1 < nw && j >= 1 && j + 1 < nd;
    if interior {
        if let (Some(hww), Some(hdd), Some(hwd), Some(gw), Some(gd)) = (
            d_ww,
            d_dd,
            d_wd,
            (|| Some((at(ii + 1, jj)? - at(ii - 1, jj)?) / (2.0 * step_w(ii))))(),
            (|| Some((at(ii, jj + 1)? - at(ii, jj - 1)?) / (2.0 * step_d(jj))))(),
        ) {
            let det = hww * hdd - hwd * hwd;
            if hww < 0.0 && det > 0.0 {
                let sw = -(hdd * gw - hwd * gd) / det;
                let sd = -(-hwd * gw + hww * gd) / det;
                let (lw, ld) = (step_w(ii), step_d(jj));
                if sw.abs() <= 2.0 * lw && sd.abs() <= 2.0 * ld {
                    omega += sw;
                    delta_omega += sd;
                }
            }
        }
    }

    Ok(Peak {
        omega,
        delta_omega,
        value,
        grid_index: (i, j),
        curvature,
        margin,
    })
}

fn spacing(axis: &[f64], centre: usize) -> f64 {
    0.5 * (axis[centre + 1] - axis[centre - 1])
}

/// Estimated split-line signal at the likelihood maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub omega: f64,
    pub delta_omega: f64,
    pub amplitudes: [f64; 4],
    pub log_likelihood: f64,
    pub saturated: bool,
    pub curvature: [[f64; 2]; 2],
    pub margin: f64,
}

impl Estimate {
    pub fn signal(&self) -> SignalParams {
        SignalParams {
            amplitudes: self.amplitudes,
            omega: self.omega,
            delta_omega: self.delta_omega,
        }
    }
}

/// Grid layout and polish settings for [`estimate_spectral`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub omega_points: usize,
    pub delta_points: usize,
    /// `ω` axis as multiples of the periodogram peak frequency.
    pub omega_span: (f64, f64),
    /// Upper end of the `Δω` axis as a fraction of the `ω` axis centre.
    pub delta_fraction: f64,
    /// Explicit `ω` axis bounds, overriding `omega_span`.
    pub omega_range: Option<(f64, f64)>,
    /// Explicit `Δω` axis bounds, overriding `delta_fraction`.
    pub delta_range: Option<(f64, f64)>,
    /// Run a simplex search on the exact likelihood after the grid polish.
    pub polish: bool,
    pub periodogram_points: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            omega_points: 200,
            delta_points: 200,
            omega_span: (0.5, 1.5),
            delta_fraction: 0.25,
            omega_range: None,
            delta_range: None,
            polish: true,
            periodogram_points: 4000,
        }
    }
}

impl SpectralConfig {
    pub fn axes(&self, trace: &DataTrace) -> Result<(Vec<f64>, Vec<f64>)> {
        let (w0, w1) = match self.omega_range {
            Some(r) => r,
            None => {
                let f = dominant_frequency(trace, self.periodogram_points)?;
                (self.omega_span.0 * f, self.omega_span.1 * f)
            }
        };
        let (d0, d1) = self
            .delta_range
            .unwrap_or((0.0, self.delta_fraction * 0.5 * (w0 + w1)));
        Ok((
            linspace(w0, w1, self.omega_points),
            linspace(d0, d1, self.delta_points),
        ))
    }
}

/// Surface scan, peak search and amplitude fit.
pub fn estimate_spectral(trace: &DataTrace, cfg: &SpectralConfig) -> Result<(Estimate, LikelihoodSurface)> {
    let (wg, dg) = cfg.axes(trace)?;
    let surface = likelihood_surface(trace, &wg, &dg)?;
    let peak = find_peak(&surface)?;
    let times = trace.times();
    let data = trace.frequencies();

    let grid_point = (surface.omega[peak.grid_index.0], surface.delta_omega[peak.grid_index.1]);
    let mut candidates = vec![(peak.omega, peak.delta_omega), grid_point];

    if cfg.polish {
        let cell_w = if wg.len() > 1 { wg[1] - wg[0] } else { 0.01 * peak.omega.abs().max(1e-3) };
        let cell_d = if dg.len() > 1 { dg[1] - dg[0] } else { 0.01 * peak.omega.abs().max(1e-3) };
        let bounds = Bounds {
            lower: vec![grid_point.0 - 2.0 * cell_w, (grid_point.1 - 2.0 * cell_d).max(0.0)],
            upper: vec![grid_point.0 + 2.0 * cell_w, grid_point.1 + 2.0 * cell_d],
        };
        let nm = NelderMeadConfig {
            max_evals: 400,
            diameter_tol: 1e-10 * (1.0 + peak.omega.abs()),
            initial_step: vec![0.5 * cell_w, 0.5 * cell_d],
        };
        let neg = |x: &[f64]| match split_projection(x[0], x[1], &times, &data) {
            Ok(p) => -p.log_likelihood().value,
            Err(_) => f64::INFINITY,
        };
        let m = nelder_mead(neg, &[peak.omega, peak.delta_omega], &bounds, &nm);
        candidates.insert(0, (m.x[0], m.x[1]));
    }

    // the first candidate that projects cleanly and is at least as good as the grid maximum
    let mut chosen = None;
    for (w, d) in candidates {
        if let Ok(p) = split_projection(w, d, &times, &data) {
            let ll = p.log_likelihood();
            if ll.value >= peak.value || (w, d) == grid_point {
                chosen = Some((w, d, p, ll));
                break;
            }
        }
    }
    let (omega, delta_omega, proj, ll) = chosen.ok_or(Error::AllDegenerate)?;
    let mut amplitudes = [0.0; 4];
    amplitudes.copy_from_slice(&proj.amplitudes);
    Ok((
        Estimate {
            omega,
            delta_omega,
            amplitudes,
            log_likelihood: ll.value,
            saturated: ll.saturated,
            curvature: peak.curvature,
            margin: peak.margin,
        },
        surface,
    ))
}

/// `P(ν) = |Σ_n (d_n − d̄) e^{−iνt_n}|² / N` on a non-uniform sample set.
pub fn periodogram(trace: &DataTrace, freqs: &[f64]) -> Vec<f64> {
    let times = trace.times();
    let data = trace.frequencies();
    let n = data.len();
    if n == 0 {
        return vec![0.0; freqs.len()];
    }
    let mean = data.iter().sum::<f64>() / n as f64;
    freqs
        .iter()
        .map(|&nu| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, d) in times.iter().zip(&data) {
                let (s, c) = (nu * t).sin_cos();
                re += (d - mean) * c;
                im -= (d - mean) * s;
            }
            (re * re + im * im) / n as f64
        })
        .collect()
}

/// Frequency grid from `π/T` to the mean-spacing Nyquist frequency `πN/T`.
pub fn default_frequency_grid(trace: &DataTrace, points: usize) -> Result<Vec<f64>> {
    let times = trace.times();
    if times.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: times.len() });
    }
    let span = times[times.len() - 1] - times[0];
    if span <= 0.0 {
        return Err(Error::EmptyRange { start: times[0], end: times[0] });
    }
    let lo = std::f64::consts::PI / span;
    let hi = std::f64::consts::PI * times.len() as f64 / span;
    Ok(linspace(lo, hi, points.max(2)))
}

/// Location of the periodogram maximum on the default frequency grid.
pub fn dominant_frequency(trace: &DataTrace, points: usize) -> Result<f64> {
    let freqs = default_frequency_grid(trace, points)?;
    let p = periodogram(trace, &freqs);
    let k = p
        .iter()
        .enumerate()
        .fold(0, |best, (k, &v)| if v > p[best] { k } else { best });
    Ok(freqs[k])
}

/// Local maxima of `spectrum` inside `[band.0, band.1]` that reach half of the
/// largest value in the band.
pub fn peaks_above_half_max(spectrum: &[f64], freqs: &[f64], band: (f64, f64)) -> usize {
    let inside: Vec<usize> = (0..freqs.len())
        .filter(|&k| freqs[k] >= band.0 && freqs[k] <= band.1)
        .collect();
    let Some(top) = inside.iter().map(|&k| spectrum[k]).reduce(f64::max) else {
        return 0;
    };
    inside
        .iter()
        .filter(|&&k| {
            let left = if k > 0 { spectrum[k - 1] } else { f64::NEG_INFINITY };
            let right = spectrum.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
            spectrum[k] > left && spectrum[k] >= right && spectrum[k] >= 0.5 * top
        })
        .count()
}

/// Split-line model against the best unsplit model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub split: f64,
    pub single: f64,
    pub single_omega: f64,
    /// `split − single` in decades; positive favours a split line.
    pub difference: f64,
}

/// Compares the split-line peak with the unsplit model, whose frequency is
/// optimized over `[0.5, 1.5]·ω_est`.
pub fn model_compare(trace: &DataTrace, est: &Estimate) -> Result<ModelComparison> {
    let grid = linspace(0.5 * est.omega, 1.5 * est.omega, 401);
    let times = trace.times();
    let data = trace.frequencies();
    let single_at = |w: f64| -> Option<f64> {
        let g = single_frequency_design(w, &times).ok()?;
        let rows: Vec<Vec<f64>> = (0..g.basis_count()).map(|m| g.row(m)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        project_rows(&refs, &data).ok().map(|p| p.log_likelihood().value)
    };
    let values: Vec<Option<f64>> = grid.par_iter().map(|&w| single_at(w)).collect();
    let (k, best) = values
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .fold(None, |acc: Option<(usize, f64)>, (k, v)| match acc {
            Some((_, b)) if b >= v => acc,
            _ => Some((k, v)),
        })
        .ok_or(Error::AllDegenerate)?;
    let cell = grid[1] - grid[0];
    let bounds = Bounds {
        lower: vec![grid[k] - cell],
        upper: vec![grid[k] + cell],
    };
    let nm = NelderMeadConfig {
        max_evals: 200,
        diameter_tol: 1e-10 * (1.0 + est.omega.abs()),
        initial_step: vec![0.5 * cell],
    };
    let m = nelder_mead(|x| single_at(x[0]).map_or(f64::INFINITY, |v| -v), &[grid[k]], &bounds, &nm);
    let (single_omega, single) = if -m.value > best { (m.x[0], -m.value) } else { (grid[k], best) };
    Ok(ModelComparison {
        split: est.log_likelihood,
        single,
        single_omega,
        difference: est.log_likelihood - single,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{low_discrepancy_times, simulate_trace, TimeRange, TracePoint};
    use crate::quantum::{build_hamiltonian, CouplingParams, Hamiltonian3};
    use crate::signal::{design_matrix, signal_from_hamiltonian};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, SQRT_2};

    fn reference_h() -> Hamiltonian3 {
        build_hamiltonian(&CouplingParams::embedded_qubit(1.0, SQRT_2, 2.0).unwrap()).unwrap()
    }

    fn times100() -> Vec<f64> {
        low_discrepancy_times(100, TimeRange::new(0.0, 20.0).unwrap()).unwrap()
    }

    /// Near-noiseless trace: counts out of 10^15 shots.
    fn exact_trace(times: &[f64], f: impl Fn(f64) -> f64) -> DataTrace {
        let shots = 1_000_000_000_000_000u64;
        DataTrace::from_points(
            times
                .iter()
                .map(|&t| TracePoint::new(t, (f(t) * shots as f64).round() as u64, shots))
                .collect(),
        )
        .unwrap()
    }

    /// Normal-equation least squares, solved by Gaussian elimination.
    fn normal_equations(g: &DesignMatrix, d: &[f64]) -> Vec<f64> {
        let m = g.basis_count();
        let gm = g.matrix();
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m {
            for j in 0..m {
                a[i][j] = (0..d.len()).map(|n| gm[(i, n)] * gm[(j, n)]).sum();
            }
            a[i][m] = (0..d.len()).map(|n| gm[(i, n)] * d[n]).sum();
        }
        for c in 0..m {
            let p = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, p);
            for r in 0..m {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=m {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..m).map(|i| a[i][m] / a[i][i]).collect()
    }

    #[test]
    fn exact_basis_member_is_recovered() {
        let t = times100();
        let g = design_matrix(2.0, 0.3, &t).unwrap();
        let p = project_values(&g, &g.row(1)).unwrap();
        for (a, e) in p.amplitudes.iter().zip([0.0, 1.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-8);
        }
    }

    #[test]
    fn constant_data_has_zero_residual() {
        let t: Vec<f64> = (0..64).map(|n| n as f64 * 20.0 / 64.0).collect();
        let w = 2.0 * PI / 20.0 * 5.0;
        let g = design_matrix(w, 2.0 * PI / 20.0, &t).unwrap();
        let p = project_values(&g, &vec![0.3; 64]).unwrap();
        for (a, e) in p.amplitudes.iter().zip([0.3, 0.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(p.residual_energy(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_reference_signal_amplitudes() {
        let sp = signal_from_hamiltonian(&reference_h()).unwrap();
        let t = times100();
        let d: Vec<f64> = t.iter().map(|&x| sp.eval(x)).collect();
        let g = design_matrix(sp.omega, sp.delta_omega, &t).unwrap();
        let p = project_values(&g, &d).unwrap();
        for m in 0..4 {
            assert_abs_diff_eq!(p.amplitudes[m], sp.amplitudes[m], epsilon = 1e-6);
        }
        for (a, e) in p.amplitudes.iter().zip([0.5253, 0.4157, 0.0396, 0.0195]) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-4);
        }
        assert!(p.log_likelihood().saturated);
        let m = p.basis_count() as f64;
        let n = p.samples as f64;
        assert_abs_diff_eq!(m * p.mean_h2() / (n * p.mean_d2()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn wrong_frequencies_score_near_zero() {
        let sp = signal_from_hamiltonian(&reference_h()).unwrap();
        let t = times100();
        let tr = simulate_trace(&reference_h(), &t, 100, 1).unwrap();
        let peak = log_likelihood(sp.omega, sp.delta_omega, &tr).unwrap().value;
        let off = log_likelihood(7.3, 0.61, &tr).unwrap().value;
        assert!(peak > 0.0);
        // off-peak cells only keep the constant term's share of ⟨d²⟩
        assert!(off > 0.0 && off < 0.3 * peak, "off {off} peak {peak}");
    }

    #[test]
    fn degenerate_basis_is_reported() {
        let tr = simulate_trace(&reference_h(), &times100(), 100, 1).unwrap();
        assert!(matches!(log_likelihood(2.0, 0.0, &tr), Err(Error::DegenerateBasis { .. })));
        // conditioning worsens as Δω shrinks, and fails below the threshold
        let t = tr.times();
        let mut last = f64::INFINITY;
        for d in [0.3, 0.1, 0.03, 0.01] {
            let p = project_values(&design_matrix(2.0, d, &t).unwrap(), &tr.frequencies()).unwrap();
            assert!(p.condition_ratio < last);
            last = p.condition_ratio;
        }
        assert!(log_likelihood(2.0, 1e-9, &tr).is_err());
    }

    #[test]
    fn too_few_points() {
        let tr = exact_trace(&[1.0, 2.0, 3.0, 4.0], |_| 0.5);
        assert!(matches!(log_likelihood(2.0, 0.2, &tr), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn likelihood_is_monotone_in_projection_energy() {
        let base = OrthoProjection {
            h: vec![1.0, 0.0, 0.0, 0.0],
            amplitudes: vec![0.0; 4],
            basis_eigenvalues: vec![1.0; 4],
            condition_ratio: 1.0,
            samples: 100,
            data_energy: 10.0,
        };
        let mut last = f64::NEG_INFINITY;
        for k in 1..30 {
            let mut p = base.clone();
            p.h[1] = k as f64 * 0.1;
            let v = p.log_likelihood().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn projection_is_idempotent_and_matches_least_squares() {
        let tr = simulate_trace(&reference_h(), &times100(), 100, 9).unwrap();
        let t = tr.times();
        let g = design_matrix(2.05, 0.19, &t).unwrap();
        let p = orthonormal_projection(&g, &tr).unwrap();
        let ls = normal_equations(&g, &tr.frequencies());
        for m in 0..4 {
            assert_abs_diff_eq!(p.amplitudes[m], ls[m], epsilon = 1e-8);
        }
        let fitted: Vec<f64> = (0..t.len())
            .map(|n| (0..4).map(|m| p.amplitudes[m] * g.matrix()[(m, n)]).sum())
            .collect();
        let q = project_values(&g, &fitted).unwrap();
        for m in 0..4 {
            assert_abs_diff_eq!(q.amplitudes[m], p.amplitudes[m], epsilon = 1e-10);
        }
        // residual orthogonal to every basis row
        let d = tr.frequencies();
        for m in 0..4 {
            let r: f64 = (0..t.len()).map(|n| (d[n] - fitted[n]) * g.matrix()[(m, n)]).sum();
            assert!(r.abs() < 1e-8);
        }
    }

    #[test]
    fn surface_cells_match_pointwise_likelihood() {
        let tr = simulate_trace(&reference_h(), &times100(), 100, 3).unwrap();
        let s = likelihood_surface(&tr, &[2.0], &[0.2]).unwrap();
        assert_eq!(s.values.len(), 1);
        let direct = log_likelihood(2.0, 0.2, &tr).unwrap().value;
        assert_abs_diff_eq!(s.values[0].unwrap(), direct, epsilon = 1e-9);

        let wg = linspace(1.8, 2.3, 7);
        let dg = linspace(0.0, 0.3, 5);
        let s = likelihood_surface(&tr, &wg, &dg).unwrap();
        for (k, (w, d, v)) in s.cells().enumerate() {
            assert_eq!(s.values[k], v);
            match log_likelihood(w, d, &tr) {
                Ok(ll) => assert_abs_diff_eq!(v.unwrap(), ll.value, epsilon = 1e-8),
                Err(_) => assert!(v.is_none()),
            }
        }
        assert!(s.get(0, 0).is_none());
        assert!(likelihood_surface(&tr, &[], &[0.1]).is_err());
        assert!(likelihood_surface(&tr, &[2.0, 1.0], &[0.1]).is_err());
    }

    #[test]
    fn likelihood_is_even_in_splitting() {
        let tr = simulate_trace(&reference_h(), &times100(), 100, 4).unwrap();
        for d in [0.05, 0.2, 0.4] {
            let a = log_likelihood(2.0, d, &tr).unwrap().value;
            let b = log_likelihood(2.0, -d, &tr).unwrap().value;
            assert_abs_diff_eq!(a, b, epsilon = 1e-9 * a.abs().max(1.0));
        }
    }

    fn synthetic(wg: &[f64], dg: &[f64], f: impl Fn(f64, f64) -> f64) -> LikelihoodSurface {
        LikelihoodSurface {
            omega: wg.to_vec(),
            delta_omega: dg.to_vec(),
            values: wg.iter().flat_map(|&w| dg.iter().map(move |&d| (w, d))).map(|(w, d)| Some(f(w, d))).collect(),
        }
    }

    #[test]
    fn quadratic_surface_vertex() {
        let (w0, d0) = (2.0137, 0.1219);
        let wg = linspace(1.5, 2.5, 41);
        let dg = linspace(0.0, 0.3, 31);
        let s = synthetic(&wg, &dg, |w, d| {
            5.0 - 30.0 * (w - w0).powi(2) - 4.0 * (d - d0).powi(2) - 6.0 * (w - w0) * (d - d0)
        });
        let p = find_peak(&s).unwrap();
        assert_abs_diff_eq!(p.omega, w0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.delta_omega, d0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.curvature[0][0], -60.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.curvature[1][1], -8.0, epsilon = 1e-6);
        assert_abs_diff_eq!(p.curvature[0][1], -6.0, epsilon = 1e-6);
        assert!(p.margin > 0.0);
    }

    #[test]
    fn peak_tie_break_and_unique_max() {
        let wg = linspace(0.0, 1.0, 3);
        let dg = linspace(0.0, 1.0, 3);
        let mut s = synthetic(&wg, &dg, |_, _| 0.0);
        s.values[4] = Some(2.0);
        assert_eq!(find_peak(&s).unwrap().grid_index, (1, 1));
        s.values[2] = Some(3.0);
        s.values[7] = Some(3.0);
        assert_eq!(find_peak(&s).unwrap().grid_index, (0, 2));
        let empty = LikelihoodSurface { omega: wg.clone(), delta_omega: dg.clone(), values: vec![None; 9] };
        assert!(matches!(find_peak(&empty), Err(Error::AllDegenerate)));
    }

    #[test]
    fn periodogram_basics() {
        let t: Vec<f64> = (0..400).map(|n| n as f64 * 0.05).collect();
        let flat = exact_trace(&t, |_| 0.4);
        assert!(periodogram(&flat, &linspace(0.1, 10.0, 50)).iter().all(|&p| p < 1e-20));

        let freqs = linspace(0.5, 5.0, 91);
        let nu = freqs[40];
        let tr = exact_trace(&t, |x| 0.5 + 0.4 * (nu * x).cos());
        let p = periodogram(&tr, &freqs);
        let k = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(k, 40);
        assert_eq!(peaks_above_half_max(&p, &freqs, (0.5, 5.0)), 1);
    }

    #[test]
    fn split_beats_single_on_noiseless_data() {
        let sp = signal_from_hamiltonian(&reference_h()).unwrap();
        let tr = exact_trace(&times100(), |x| sp.eval(x));
        let cfg = SpectralConfig { omega_points: 60, delta_points: 60, ..Default::default() };
        let (est, _) = estimate_spectral(&tr, &cfg).unwrap();
        assert_abs_diff_eq!(est.omega, sp.omega, epsilon = 1e-4);
        assert_abs_diff_eq!(est.delta_omega, sp.delta_omega, epsilon = 1e-4);
        let mc = model_compare(&tr, &est).unwrap();
        assert!(mc.difference > 0.0, "{mc:?}");
    }
}
