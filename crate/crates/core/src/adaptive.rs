//! Adaptive sampling: a preliminary low-discrepancy scan, uncertainty from the
//! likelihood surface, new sample times chosen from the current estimate, and
//! re-estimation on the merged trace.

use std::f64::consts::{LN_10, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{estimate_direct, fold_detuning, refine_local, DirectEstimate, Grid3Spec, RefineConfig};
use crate::error::{Error, Result};
use crate::io::unbounded;
use crate::measurement::{low_discrepancy_times, merge_traces, simulate_trace, DataTrace, TimeRange};
use crate::quantum::{bohr_frequencies, build_hamiltonian, polar_to_couplings, spectral_decompose, CouplingParams, Hamiltonian3};
use crate::reconstruct::{reconstruct_hamiltonian, relative_error, ReconstructionReport};
use crate::seed::derive_seed;
use crate::signal::SignalParams;
use crate::spectral::{estimate_spectral, find_peak, fit_amplitudes, linspace, Estimate, LikelihoodSurface, SpectralConfig};

pub use crate::measurement::halfperiod_times;

/// Peak sharpness of a likelihood surface.
///
/// Curvatures are eigenvalues of the negated Hessian of the natural-log
/// likelihood, ascending. A surface whose peak is not a strict maximum gets
/// infinite widths and `bounded = false`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub curvature_eigenvalues: [f64; 2],
    /// Largest over smallest curvature.
    #[serde(with = "unbounded")]
    pub anisotropy: f64,
    /// Peak height over the surface median, in decades.
    pub margin: f64,
    #[serde(with = "unbounded")]
    pub sigma_omega: f64,
    #[serde(with = "unbounded")]
    pub sigma_delta_omega: f64,
    pub bounded: bool,
}

impl Uncertainty {
    pub fn flat(curvature_eigenvalues: [f64; 2], margin: f64) -> Self {
        Uncertainty {
            curvature_eigenvalues,
            anisotropy: f64::INFINITY,
            margin,
            sigma_omega: f64::INFINITY,
            sigma_delta_omega: f64::INFINITY,
            bounded: false,
        }
    }

    /// Larger of the two frequency widths.
    pub fn width(&self) -> f64 {
        self.sigma_omega.max(self.sigma_delta_omega)
    }
}

pub fn uncertainty_from_surface(surface: &LikelihoodSurface) -> Result<Uncertainty> {
    let peak = find_peak(surface)?;
    let h = peak.curvature;
    let f = [
        [-h[0][0] * LN_10, -h[0][1] * LN_10],
        [-h[1][0] * LN_10, -h[1][1] * LN_10],
    ];
    let mean = 0.5 * (f[0][0] + f[1][1]);
    let half = (0.25 * (f[0][0] - f[1][1]).powi(2) + f[0][1] * f[1][0]).max(0.0).sqrt();
    let eig = [mean - half, mean + half];
    if !(eig[0] > 0.0 && eig[1].is_finite()) {
        return Ok(Uncertainty::flat(eig, peak.margin));
    }
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    Ok(Uncertainty {
        curvature_eigenvalues: eig,
        anisotropy: eig[1] / eig[0],
        margin: peak.margin,
        sigma_omega: (f[1][1] / det).sqrt(),
        sigma_delta_omega: (f[0][0] / det).sqrt(),
        bounded: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub signal: SignalParams,
    /// `log10` likelihood.
    pub log_likelihood: f64,
    pub weight: f64,
}

/// Probable models with normalized likelihood weights, heaviest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnsemble {
    members: Vec<EnsembleMember>,
}

impl ModelEnsemble {
    /// Members are kept within this many decades of the best likelihood.
    pub const DECADES: f64 = 2.0;
    pub const MAX_MEMBERS: usize = 256;

    /// Filters, caps and weights `(model, log10 likelihood)` pairs.
    pub fn from_log_likelihoods(models: Vec<(SignalParams, f64)>) -> Result<Self> {
        let members = select(models)
            .into_iter()
            .map(|(signal, log_likelihood, weight)| EnsembleMember { signal, log_likelihood, weight })
            .collect::<Vec<_>>();
        if members.is_empty() {
            return Err(Error::invalid("ensemble needs at least one finite likelihood"));
        }
        Ok(ModelEnsemble { members })
    }

    /// Ensemble from the cells of a surface, with amplitudes fitted to `trace`.
    pub fn from_surface(surface: &LikelihoodSurface, trace: &DataTrace) -> Result<Self> {
        let cells: Vec<((f64, f64), f64)> = surface
            .cells()
            .filter_map(|(w, d, v)| v.map(|v| ((w, d), v)))
            .collect();
        let models: Vec<(SignalParams, f64)> = select(cells)
            .into_par_iter()
            .filter_map(|((omega, delta_omega), log_likelihood, _)| {
                let amplitudes = fit_amplitudes(omega, delta_omega, trace).ok()?;
                Some((SignalParams { amplitudes, omega, delta_omega }, log_likelihood))
            })
            .collect();
        ModelEnsemble::from_log_likelihoods(models)
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Weighted variance of the predicted `p11(t)` across members.
    pub fn variance_at(&self, t: f64) -> f64 {
        let mean: f64 = self.members.iter().map(|m| m.weight * m.signal.eval(t)).sum();
        self.members
            .iter()
            .map(|m| m.weight * (m.signal.eval(t) - mean).powi(2))
            .sum()
    }
}

fn select<T>(models: Vec<(T, f64)>) -> Vec<(T, f64, f64)> {
    let mut kept: Vec<(usize, T, f64)> = models
        .into_iter()
        .enumerate()
        .filter(|(_, (_, l))| l.is_finite())
        .map(|(i, (m, l))| (i, m, l))
        .collect();
    let Some(best) = kept.iter().map(|k| k.2).max_by(f64::total_cmp) else {
        return Vec::new();
    };
    kept.retain(|k| k.2 >= best - ModelEnsemble::DECADES);
    kept.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    kept.truncate(ModelEnsemble::MAX_MEMBERS);
    let raw: Vec<f64> = kept.iter().map(|k| 10f64.powf(k.2 - best)).collect();
    let total: f64 = raw.iter().sum();
    kept.into_iter()
        .zip(raw)
        .map(|((_, m, l), w)| (m, l, w / total))
        .collect()
}

/// Sample times picked by ensemble variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSelection {
    /// Highest variance first; equal variances in time order.
    pub times: Vec<f64>,
    pub variances: Vec<f64>,
    /// Fewer candidates than requested, or no candidate separates the models.
    pub flagged: bool,
}

pub fn ensemble_variance_times(ensemble: &ModelEnsemble, candidates: &[f64], k: usize) -> Result<TimeSelection> {
    if ensemble.is_empty() {
        return Err(Error::invalid("empty ensemble"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate times"));
    }
    let mut scored: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&t| (t, ensemble.variance_at(t)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let all_zero = scored.iter().all(|s| s.1 <= 0.0);
    let flagged = k > candidates.len() || all_zero;
    scored.truncate(k);
    Ok(TimeSelection {
        times: scored.iter().map(|s| s.0).collect(),
        variances: scored.iter().map(|s| s.1).collect(),
        flagged,
    })
}

/// Somewhere to take new data from.
pub trait MeasurementSource {
    fn acquire(&mut self, times: &[f64], shots: u64) -> Result<DataTrace>;

    /// The true couplings, when known.
    fn truth(&self) -> Option<CouplingParams> {
        None
    }
}

/// Binomial draws from a known Hamiltonian; each acquisition gets its own
/// seed derived from the master seed and the call count.
#[derive(Debug, Clone)]
pub struct SimulatedSource {
    hamiltonian: Hamiltonian3,
    seed: u64,
    calls: u64,
}

impl SimulatedSource {
    pub fn new(hamiltonian: Hamiltonian3, seed: u64) -> Self {
        SimulatedSource { hamiltonian, seed, calls: 0 }
    }
}

impl MeasurementSource for SimulatedSource {
    fn acquire(&mut self, times: &[f64], shots: u64) -> Result<DataTrace> {
        let seed = derive_seed(self.seed, &[self.calls]);
        self.calls += 1;
        simulate_trace(&self.hamiltonian, times, shots, seed)
    }

    fn truth(&self) -> Option<CouplingParams> {
        Some(*self.hamiltonian.params())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Integer multiples of half the dominant period.
    HalfPeriod,
    /// Times where the probable models disagree most.
    EnsembleVariance,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-period" => Ok(Strategy::HalfPeriod),
            "ensemble-variance" => Ok(Strategy::EnsembleVariance),
            _ => Err(Error::Config(format!("unknown strategy `{s}`, expected half-period or ensemble-variance"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub range: TimeRange,
    pub preliminary_points: usize,
    pub preliminary_shots: u64,
    pub rounds: usize,
    pub strategy: Strategy,
    pub refine_shots: u64,
    /// New points per round. By default every half period in the round window.
    pub points_per_round: Option<usize>,
    /// Round 1 samples `range`; round `r > 1` samples
    /// `[end·g^(r−2), end·g^(r−1)]`. With `g = 1` every round reuses `range`.
    pub window_growth: f64,
    /// Evenly spaced candidates per window for the ensemble-variance strategy.
    pub candidates: usize,
    /// Stop once both frequency widths fall below this.
    pub uncertainty_target: Option<f64>,
    /// Also run direct maximum likelihood each round.
    pub direct: bool,
    pub spectral: SpectralConfig,
    pub grid: Grid3Spec,
    pub refine: RefineConfig,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            range: TimeRange::default(),
            preliminary_points: 100,
            preliminary_shots: 100,
            rounds: 1,
            strategy: Strategy::HalfPeriod,
            refine_shots: 1000,
            points_per_round: None,
            window_growth: 1.0,
            candidates: 400,
            uncertainty_target: None,
            direct: true,
            spectral: SpectralConfig::default(),
            grid: Grid3Spec::default(),
            refine: RefineConfig::default(),
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        if self.preliminary_points == 0 || self.preliminary_shots == 0 {
            return Err(Error::Config("preliminary scan needs points and shots".into()));
        }
        if self.rounds > 0 && self.refine_shots == 0 {
            return Err(Error::Config("refine_shots must be positive".into()));
        }
        if !(self.window_growth >= 1.0 && self.window_growth.is_finite()) {
            return Err(Error::Config(format!("window_growth {} must be at least 1", self.window_growth)));
        }
        if self.strategy == Strategy::EnsembleVariance && self.candidates == 0 {
            return Err(Error::Config("ensemble-variance needs candidates".into()));
        }
        Ok(())
    }

    /// Sampling window of refinement round `round` (1-based).
    pub fn window(&self, round: usize) -> (f64, f64) {
        if round <= 1 || self.window_growth == 1.0 {
            return (self.range.start, self.range.end);
        }
        let g = self.window_growth;
        (self.range.end * g.powi(round as i32 - 2), self.range.end * g.powi(round as i32 - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 is the preliminary scan.
    pub round: usize,
    pub window: (f64, f64),
    /// Times acquired in this round.
    pub times: Vec<f64>,
    pub shots_added: u64,
    pub cumulative_points: usize,
    pub cumulative_shots: u64,
    pub spectral: Option<Estimate>,
    pub uncertainty: Option<Uncertainty>,
    pub two_step: Option<ReconstructionReport>,
    pub direct: Option<DirectEstimate>,
    pub direct_relative_error: Option<f64>,
    pub selection_flagged: bool,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Rounds,
    UncertaintyTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveReport {
    pub config: AdaptiveConfig,
    pub truth: Option<CouplingParams>,
    pub preliminary: RoundRecord,
    pub rounds: Vec<RoundRecord>,
    pub total_shots: u64,
    pub stop: StopReason,
    /// Likelihood surface of every record, preliminary first.
    #[serde(skip)]
    pub surfaces: Vec<Option<LikelihoodSurface>>,
    #[serde(skip)]
    pub trace: DataTrace,
}

impl AdaptiveReport {
    /// The last completed record.
    pub fn latest(&self) -> &RoundRecord {
        self.rounds.last().unwrap_or(&self.preliminary)
    }

    pub fn two_step_error(&self) -> Option<f64> {
        self.latest().two_step.as_ref().and_then(|r| r.relative_error)
    }

    pub fn direct_error(&self) -> Option<f64> {
        self.latest().direct_relative_error
    }
}

struct RoundState {
    spectral: Option<Estimate>,
    direct: Option<DirectEstimate>,
    uncertainty: Option<Uncertainty>,
}

/// Runs the preliminary scan and up to `cfg.rounds` refinement rounds.
pub fn adaptive_characterize(source: &mut dyn MeasurementSource, cfg: &AdaptiveConfig) -> Result<AdaptiveReport> {
    cfg.validate()?;
    let truth = source.truth();
    let times = low_discrepancy_times(cfg.preliminary_points, cfg.range)?;
    let mut trace = source.acquire(&times, cfg.preliminary_shots)?;
    let mut surfaces = Vec::new();

    let mut state = RoundState { spectral: None, direct: None, uncertainty: None };
    let mut preliminary = new_record(0, (cfg.range.start, cfg.range.end), times, &trace, trace.total_shots());
    analyse(&trace, cfg, &cfg.spectral, truth.as_ref(), &mut state, &mut preliminary, &mut surfaces);
    log::debug!("preliminary: {} points, {} shots", trace.len(), trace.total_shots());

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut stop = StopReason::Rounds;
    for round in 1..=cfg.rounds {
        if reached_target(cfg, &state) {
            stop = StopReason::UncertaintyTarget;
            break;
        }
        let window = cfg.window(round);
        let mut errors = Vec::new();
        let mut flagged = false;
        let chosen = match choose_times(cfg, window, &state, surfaces.last().and_then(Option::as_ref), &trace) {
            Ok((t, f)) => {
                flagged = f;
                t
            }
            Err(e) => {
                errors.push(format!("time selection: {e}"));
                Vec::new()
            }
        };
        let mut added = 0;
        if !chosen.is_empty() {
            match source.acquire(&chosen, cfg.refine_shots) {
                Ok(extra) => {
                    added = extra.total_shots();
                    trace = merge_traces(&trace, &extra);
                }
                Err(e) => errors.push(format!("acquisition: {e}")),
            }
        }
        let mut record = new_record(round, window, if added > 0 { chosen } else { Vec::new() }, &trace, added);
        record.selection_flagged = flagged;
        record.errors = errors;
        let spectral_cfg = narrowed_config(cfg, &trace, &state);
        analyse(&trace, cfg, &spectral_cfg, truth.as_ref(), &mut state, &mut record, &mut surfaces);
        log::debug!("round {round}: window {window:?}, {} points, {} shots", trace.len(), trace.total_shots());
        rounds.push(record);
    }

    Ok(AdaptiveReport {
        config: cfg.clone(),
        truth,
        preliminary,
        rounds,
        total_shots: trace.total_shots(),
        stop,
        surfaces,
        trace,
    })
}

fn new_record(round: usize, window: (f64, f64), times: Vec<f64>, trace: &DataTrace, added: u64) -> RoundRecord {
    RoundRecord {
        round,
        window,
        times,
        shots_added: added,
        cumulative_points: trace.len(),
        cumulative_shots: trace.total_shots(),
        spectral: None,
        uncertainty: None,
        two_step: None,
        direct: None,
        direct_relative_error: None,
        selection_flagged: false,
        errors: Vec::new(),
    }
}

fn reached_target(cfg: &AdaptiveConfig, state: &RoundState) -> bool {
    match (cfg.uncertainty_target, state.uncertainty) {
        (Some(target), Some(u)) => u.bounded && u.width() <= target,
        _ => false,
    }
}

fn analyse(
    trace: &DataTrace,
    cfg: &AdaptiveConfig,
    spectral_cfg: &SpectralConfig,
    truth: Option<&CouplingParams>,
    state: &mut RoundState,
    record: &mut RoundRecord,
    surfaces: &mut Vec<Option<LikelihoodSurface>>,
) {
    match estimate_spectral(trace, spectral_cfg) {
        Ok((est, surface)) => {
            match uncertainty_from_surface(&surface) {
                Ok(u) => {
                    record.uncertainty = Some(u);
                    state.uncertainty = Some(u);
                }
                Err(e) => record.errors.push(format!("uncertainty: {e}")),
            }
            record.two_step = Some(ReconstructionReport::new(&reconstruct_hamiltonian(&est), truth));
            record.spectral = Some(est.clone());
            state.spectral = Some(est);
            surfaces.push(Some(surface));
        }
        Err(e) => {
            record.errors.push(format!("spectral: {e}"));
            surfaces.push(None);
        }
    }

    if cfg.direct {
        let fitted = match &state.direct {
            None => estimate_direct(trace, &cfg.grid, &cfg.refine).map(|(d, _)| d),
            Some(prev) => refine_local(trace, &prev.polar, &cfg.refine).map(|mut d| {
                d.polar = fold_detuning(d.polar);
                d
            }),
        };
        match fitted {
            Ok(d) => {
                record.direct_relative_error = truth.and_then(|t| {
                    polar_to_couplings(&d.polar).ok().and_then(|e| relative_error(&e, t).ok())
                });
                record.direct = Some(d.clone());
                state.direct = Some(d);
            }
            Err(e) => record.errors.push(format!("direct: {e}")),
        }
    }
}

/// Current `(ω, Δω)` estimate, preferring the direct fit.
fn current_frequencies(state: &RoundState) -> Option<(f64, f64)> {
    if let Some(d) = &state.direct {
        let h = polar_to_couplings(&d.polar).ok().and_then(|c| build_hamiltonian(&c).ok())?;
        let b = bohr_frequencies(&spectral_decompose(&h)).canonical();
        if b.omega > 0.0 {
            return Some((b.omega, b.delta_omega));
        }
    }
    state.spectral.as_ref().map(|e| (e.omega, e.delta_omega))
}

fn halfperiod_count(omega: f64, (a, b): (f64, f64)) -> usize {
    let j0 = (a * omega / PI).ceil();
    let j1 = (b * omega / PI).floor();
    if j1 < j0 {
        0
    } else {
        (j1 - j0) as usize + 1
    }
}

fn choose_times(
    cfg: &AdaptiveConfig,
    window: (f64, f64),
    state: &RoundState,
    surface: Option<&LikelihoodSurface>,
    trace: &DataTrace,
) -> Result<(Vec<f64>, bool)> {
    let (omega, _) = current_frequencies(state).ok_or_else(|| Error::invalid("no frequency estimate to plan from"))?;
    let count = cfg.points_per_round.unwrap_or_else(|| halfperiod_count(omega, window));
    match cfg.strategy {
        Strategy::HalfPeriod => Ok((halfperiod_times(omega, count, window.0)?, false)),
        Strategy::EnsembleVariance => {
            let surface = surface.ok_or_else(|| Error::invalid("no likelihood surface to draw an ensemble from"))?;
            let ensemble = ModelEnsemble::from_surface(surface, trace)?;
            let candidates = linspace(window.0, window.1, cfg.candidates);
            let sel = ensemble_variance_times(&ensemble, &candidates, count)?;
            Ok((sel.times, sel.flagged))
        }
    }
}

/// Once the trace outgrows the preliminary range the default frequency axes
/// are far too coarse; centre them on the current estimate instead.
fn narrowed_config(cfg: &AdaptiveConfig, trace: &DataTrace, state: &RoundState) -> SpectralConfig {
    let mut sc = cfg.spectral.clone();
    let t_max = trace.points().last().map_or(0.0, |p| p.time());
    if sc.omega_range.is_some() || sc.delta_range.is_some() || t_max <= cfg.range.end {
        return sc;
    }
    if let Some((w, d)) = current_frequencies(state) {
        let half = 4.0 * PI / t_max;
        sc.omega_range = Some(((w - half).max(half), w + half));
        sc.delta_range = Some(((d - half).max(0.0), d + half));
    }
    sc
}
