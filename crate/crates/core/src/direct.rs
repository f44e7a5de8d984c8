//! Direct maximum likelihood over `(Ω, α, ε)` against the raw trace.
//!
//! With the noise level marginalized, the likelihood of the residual sum of
//! squares `S = Σ_j w_j (d_j − p11(t_j))²` is `S^{−N/2}`, so
//! `ln P = −(N/2) ln S` and the maximum coincides with weighted least squares.
//! The weight `w_j = shots_j / mean(shots)` follows the binomial variance and
//! is exactly one when every point has the same number of shots.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::DataTrace;
use crate::optim::{nelder_mead, Bounds, NelderMeadConfig};
use crate::quantum::{build_hamiltonian, polar_to_couplings, spectral_decompose, PolarParams};
use crate::spectral::linspace;

/// Added to the residual sum so a perfect fit stays finite.
pub const RSS_FLOOR: f64 = 1e-300;

/// Shot-weighted residual sum of squares between the trace and the model
/// survival probability.
pub fn residual_sum_of_squares(p: &PolarParams, trace: &DataTrace) -> Result<f64> {
    let h = build_hamiltonian(&polar_to_couplings(p)?)?;
    let sd = spectral_decompose(&h);
    let mean_shots = trace.total_shots() as f64 / trace.len().max(1) as f64;
    Ok(trace
        .points()
        .iter()
        .map(|pt| {
            let w = pt.shots as f64 / mean_shots;
            w * (pt.frequency() - sd.survival(pt.time())).powi(2)
        })
        .sum())
}

/// `−(N/2) ln(S + floor)`.
pub fn direct_log_likelihood(p: &PolarParams, trace: &DataTrace) -> Result<f64> {
    let rss = residual_sum_of_squares(p, trace)?;
    Ok(-0.5 * trace.len() as f64 * (rss + RSS_FLOOR).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start, self.end, self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid3Spec {
    pub omega_cap: Axis,
    pub alpha: Axis,
    pub epsilon: Axis,
}

impl Default for Grid3Spec {
    fn default() -> Self {
        Grid3Spec {
            omega_cap: Axis { start: 0.1, end: 4.0, points: 32 },
            alpha: Axis { start: 0.0, end: FRAC_PI_2, points: 32 },
            epsilon: Axis { start: -1.25, end: 1.25, points: 32 },
        }
    }
}

/// Log-likelihood on a `Ω × α × ε` grid, row-major with `ε` fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub omega_cap: Vec<f64>,
    pub alpha: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub values: Vec<f64>,
}

impl Grid3 {
    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.alpha.len() + j) * self.epsilon.len() + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.flat(i, j, k)]
    }

    fn unflat(&self, idx: usize) -> (usize, usize, usize) {
        let ne = self.epsilon.len();
        let na = self.alpha.len();
        (idx / (na * ne), (idx / ne) % na, idx % ne)
    }

    pub fn params(&self, (i, j, k): (usize, usize, usize)) -> PolarParams {
        PolarParams {
            omega_cap: self.omega_cap[i],
            alpha: self.alpha[j],
            epsilon: self.epsilon[k],
        }
    }

    /// Grid maximum; ties go to the lowest index triple.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let idx = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.values[best] { i } else { best });
        self.unflat(idx)
    }

    /// Up to `count` grid cells that are local maxima over their 26 neighbours,
    /// best first.
    pub fn local_maxima(&self, count: usize) -> Vec<(usize, usize, usize)> {
        let dims = [self.omega_cap.len(), self.alpha.len(), self.epsilon.len()];
        let mut found: Vec<(usize, f64)> = (0..self.values.len())
            .filter(|&idx| {
                let (i, j, k) = self.unflat(idx);
                let v = self.values[idx];
                let c = [i as isize, j as isize, k as isize];
                for di in -1..=1isize {
                    for dj in -1..=1isize {
                        for dk in -1..=1isize {
                            if (di, dj, dk) == (0, 0, 0) {
                                continue;
                            }
                            let n = [c[0] + di, c[1] + dj, c[2] + dk];
                            if n.iter().zip(dims).any(|(&x, d)| x < 0 || x >= d as isize) {
                                continue;
                            }
                            let w = self.get(n[0] as usize, n[1] as usize, n[2] as usize);
                            if w > v {
                                return false;
                            }
                        }
                    }
                }
                true
            })
            .map(|idx| (idx, self.values[idx]))
            .collect();
        found.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        found.into_iter().take(count).map(|(idx, _)| self.unflat(idx)).collect()
    }
}

fn check_axis(a: &Axis) -> Result<()> {
    if a.points == 0 {
        return Err(Error::EmptyGrid);
    }
    if !(a.start.is_finite() && a.end.is_finite()) || (a.points > 1 && a.end <= a.start) {
        return Err(Error::invalid("grid axis must be finite and increasing"));
    }
    Ok(())
}

/// Exhaustive evaluation of [`direct_log_likelihood`] on the grid.
pub fn grid_scan3(trace: &DataTrace, spec: &Grid3Spec) -> Result<Grid3> {
    for a in [&spec.omega_cap, &spec.alpha, &spec.epsilon] {
        check_axis(a)?;
    }
    if spec.omega_cap.start < 0.0 || spec.alpha.start < 0.0 || spec.alpha.end > FRAC_PI_2 + 1e-12 {
        return Err(Error::invalid("grid must stay within Ω ≥ 0 and α ∈ [0, π/2]"));
    }
    let omega_cap = spec.omega_cap.values();
    let alpha: Vec<f64> = spec.alpha.values().into_iter().map(|a| a.min(FRAC_PI_2)).collect();
    let epsilon = spec.epsilon.values();
    let cells: Vec<PolarParams> = omega_cap
        .iter()
        .flat_map(|&w| {
            let eps = &epsilon;
            alpha.iter().flat_map(move |&a| {
                eps.iter().map(move |&e| PolarParams { omega_cap: w, alpha: a, epsilon: e })
            })
        })
        .collect();
    let values = cells
        .par_iter()
        .map(|p| direct_log_likelihood(p, trace))
        .collect::<Result<Vec<_>>>()?;
    Ok(Grid3 {
        omega_cap,
        alpha,
        epsilon,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub max_evals: usize,
    pub diameter_tol: f64,
    pub initial_step: [f64; 3],
    /// Number of grid local maxima used as simplex starting points.
    pub starts: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_evals: 2000,
            diameter_tol: 1e-6,
            initial_step: [0.05, 0.05, 0.05],
            starts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectEstimate {
    pub polar: PolarParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn polar_bounds() -> Bounds {
    Bounds {
        lower: vec![0.0, 0.0, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY, FRAC_PI_2, f64::INFINITY],
    }
}

/// Simplex maximization of the direct likelihood from `start`.
pub fn refine_local(trace: &DataTrace, start: &PolarParams, cfg: &RefineConfig) -> Result<DirectEstimate> {
    start.validate()?;
    let nm = NelderMeadConfig {
        max_evals: cfg.max_evals,
        diameter_tol: cfg.diameter_tol,
        initial_step: cfg.initial_step.to_vec(),
    };
    let objective = |x: &[f64]| {
        let p = PolarParams { omega_cap: x[0], alpha: x[1], epsilon: x[2] };
        residual_sum_of_squares(&p, trace).unwrap_or(f64::INFINITY)
    };
    let m = nelder_mead(objective, &start.as_array(), &polar_bounds(), &nm);
    let polar = PolarParams {
        omega_cap: m.x[0].max(0.0),
        alpha: m.x[1].clamp(0.0, FRAC_PI_2),
        epsilon: m.x[2],
    };
    Ok(DirectEstimate {
        polar,
        log_likelihood: direct_log_likelihood(&polar, trace)?,
        iterations: m.iterations,
        evaluations: m.evaluations,
        converged: m.converged,
    })
}

/// `p11` is unchanged by `δ → −δ`; estimates are reported with `ε ≥ 0`.
pub fn fold_detuning(p: PolarParams) -> PolarParams {
    PolarParams {
        epsilon: p.epsilon.abs(),
        ..p
    }
}

/// Grid scan followed by simplex refinement from the best local maxima.
pub fn estimate_direct(trace: &DataTrace, spec: &Grid3Spec, cfg: &RefineConfig) -> Result<(DirectEstimate, Grid3)> {
    let grid = grid_scan3(trace, spec)?;
    let mut starts = grid.local_maxima(cfg.starts.max(1));
    if starts.is_empty() {
        starts.push(grid.argmax());
    }
    let mut best: Option<DirectEstimate> = None;
    for cell in starts {
        let est = refine_local(trace, &grid.params(cell), cfg)?;
        if best.as_ref().is_none_or(|b| est.log_likelihood > b.log_likelihood) {
            best = Some(est);
        }
    }
    let mut est = best.expect("at least one start");
    est.polar = fold_detuning(est.polar);
    Ok((est, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{low_discrepancy_times, simulate_trace, TimeRange, TracePoint};
    use crate::quantum::Hamiltonian3;
    use approx::assert_abs_diff_eq;

    fn truth() -> PolarParams {
        PolarParams::new(3f64.sqrt(), 2f64.sqrt().atan(), 0.5).unwrap()
    }

    fn h(p: &PolarParams) -> Hamiltonian3 {
        build_hamiltonian(&polar_to_couplings(p).unwrap()).unwrap()
    }

    fn times() -> Vec<f64> {
        low_discrepancy_times(100, TimeRange::new(0.0, 20.0).unwrap()).unwrap()
    }

    /// Counts out of 10^15 shots, i.e. noiseless to about 1e-15.
    fn noiseless(p: &PolarParams, times: &[f64]) -> DataTrace {
        let sd = spectral_decompose(&h(p));
        let shots = 1_000_000_000_000_000u64;
        DataTrace::from_points(
            times
                .iter()
                .map(|&t| TracePoint::new(t, (sd.survival(t) * shots as f64).round() as u64, shots))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn smaller_residual_means_larger_likelihood() {
        let tr = simulate_trace(&h(&truth()), &times(), 100, 11).unwrap();
        let candidates = [
            truth(),
            PolarParams::new(1.7, 0.95, 0.5).unwrap(),
            PolarParams::new(1.0, 0.3, -0.2).unwrap(),
            PolarParams::new(2.5, 1.2, 0.9).unwrap(),
        ];
        for a in &candidates {
            for b in &candidates {
                let (ra, rb) = (residual_sum_of_squares(a, &tr).unwrap(), residual_sum_of_squares(b, &tr).unwrap());
                let (la, lb) = (direct_log_likelihood(a, &tr).unwrap(), direct_log_likelihood(b, &tr).unwrap());
                if ra < rb {
                    assert!(la > lb);
                }
            }
        }
    }

    #[test]
    fn perfect_fit_hits_the_floor() {
        let t = times();
        let tr = noiseless(&truth(), &t);
        let at_truth = direct_log_likelihood(&truth(), &tr).unwrap();
        let off = direct_log_likelihood(&PolarParams::new(1.74, 0.95, 0.5).unwrap(), &tr).unwrap();
        assert!(at_truth > off);
        assert!(at_truth > 0.0);
    }

    #[test]
    fn grid_single_cell_and_truth_cell() {
        let t = times();
        let tr = noiseless(&truth(), &t);
        let one = Grid3Spec {
            omega_cap: Axis { start: 1.0, end: 1.0, points: 1 },
            alpha: Axis { start: 0.5, end: 0.5, points: 1 },
            epsilon: Axis { start: 0.1, end: 0.1, points: 1 },
        };
        let g = grid_scan3(&tr, &one).unwrap();
        assert_eq!(g.argmax(), (0, 0, 0));

        let p = truth();
        let spec = Grid3Spec {
            omega_cap: Axis { start: p.omega_cap - 0.2, end: p.omega_cap + 0.2, points: 5 },
            alpha: Axis { start: p.alpha - 0.2, end: p.alpha + 0.2, points: 5 },
            epsilon: Axis { start: p.epsilon - 0.2, end: p.epsilon + 0.2, points: 5 },
        };
        let g = grid_scan3(&tr, &spec).unwrap();
        assert_eq!(g.argmax(), (2, 2, 2));
        assert_eq!(g.values.len(), 125);

        let bad = Grid3Spec { omega_cap: Axis { start: 1.0, end: 2.0, points: 0 }, ..spec };
        assert!(matches!(grid_scan3(&tr, &bad), Err(Error::EmptyGrid)));
    }

    #[test]
    fn refinement_fixed_point_and_basin() {
        // a short record keeps the +0.05 start inside the global basin
        let t = low_discrepancy_times(100, TimeRange::new(0.0, 8.0).unwrap()).unwrap();
        let tr = noiseless(&truth(), &t);
        let cfg = RefineConfig::default();
        let est = refine_local(&tr, &truth(), &cfg).unwrap();
        for (a, b) in est.polar.as_array().iter().zip(truth().as_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
        }
        let p = truth();
        let start = PolarParams::new(p.omega_cap + 0.05, p.alpha + 0.05, p.epsilon + 0.05).unwrap();
        let est = refine_local(&tr, &start, &cfg).unwrap();
        assert!(est.converged);
        for (a, b) in est.polar.as_array().iter().zip(truth().as_array()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn refinement_respects_bounds() {
        let tr = simulate_trace(&h(&truth()), &times(), 20, 2).unwrap();
        let start = PolarParams::new(0.05, 1.55, 0.0).unwrap();
        let cfg = RefineConfig { max_evals: 300, ..Default::default() };
        let est = refine_local(&tr, &start, &cfg).unwrap();
        assert!(est.polar.omega_cap >= 0.0);
        assert!((0.0..=FRAC_PI_2).contains(&est.polar.alpha));
        assert!(est.evaluations <= 300 + 4);
    }

    #[test]
    fn detuning_sign_is_folded() {
        let p = PolarParams::new(1.0, 0.5, -0.3).unwrap();
        assert_eq!(fold_detuning(p).epsilon, 0.3);
        let tr = simulate_trace(&h(&truth()), &times(), 100, 5).unwrap();
        let mirrored = PolarParams { epsilon: -0.5, ..truth() };
        assert_abs_diff_eq!(
            direct_log_likelihood(&truth(), &tr).unwrap(),
            direct_log_likelihood(&mirrored, &tr).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn uniform_shots_give_plain_residuals() {
        let tr = simulate_trace(&h(&truth()), &times(), 100, 3).unwrap();
        let p = PolarParams::new(1.7, 0.9, 0.45).unwrap();
        let sd = spectral_decompose(&h(&p));
        let plain: f64 = tr.points().iter().map(|q| (q.frequency() - sd.survival(q.time())).powi(2)).sum();
        assert_abs_diff_eq!(residual_sum_of_squares(&p, &tr).unwrap(), plain, epsilon = 1e-12);
    }

    #[test]
    fn residuals_are_weighted_by_shots() {
        let tr = DataTrace::from_points(vec![TracePoint::new(1.0, 0, 100), TracePoint::new(2.0, 0, 300)]).unwrap();
        let sd = spectral_decompose(&h(&truth()));
        let expected = 0.5 * sd.survival(1.0).powi(2) + 1.5 * sd.survival(2.0).powi(2);
        assert_abs_diff_eq!(residual_sum_of_squares(&truth(), &tr).unwrap(), expected, epsilon = 1e-14);
    }
}
