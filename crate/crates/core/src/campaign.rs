//! Repeated simulated experiments over a grid of sample counts `Nt` and shot
//! counts `Ne`.
//!
//! Run `r` of cell `(i, j)` is seeded with `derive_seed(seed, &[i, j, r])`, so
//! results do not depend on scheduling or worker count.

use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{adaptive_characterize, AdaptiveConfig, SimulatedSource};
use crate::direct::{estimate_direct, Grid3Spec, RefineConfig};
use crate::error::{Error, Result};
use crate::io::unbounded;
use crate::measurement::{simulate_trace, SamplingSchedule, ScheduleKind, TimeRange};
use crate::quantum::{
    bohr_frequencies, build_hamiltonian, polar_to_couplings, spectral_decompose, CouplingParams, Hamiltonian3,
    PolarParams,
};
use crate::reconstruct::{reconstruct_hamiltonian, relative_error, UnphysicalReason, Validity};
use crate::seed::derive_seed;
use crate::spectral::{estimate_spectral, median, SpectralConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Polar(PolarParams),
    Couplings(CouplingParams),
}

impl Truth {
    pub fn couplings(&self) -> Result<CouplingParams> {
        match self {
            Truth::Polar(p) => polar_to_couplings(p),
            Truth::Couplings(c) => {
                c.validate()?;
                Ok(*c)
            }
        }
    }
}

impl Default for Truth {
    /// `H(1, √2, 0, 2)`.
    fn default() -> Self {
        Truth::Polar(PolarParams { omega_cap: 3f64.sqrt(), alpha: 2f64.sqrt().atan(), epsilon: 0.5 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    /// Spectral estimate followed by algebraic reconstruction.
    TwoStep,
    Direct,
    Adaptive,
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-step" => Ok(Pipeline::TwoStep),
            "direct" => Ok(Pipeline::Direct),
            "adaptive" => Ok(Pipeline::Adaptive),
            _ => Err(Error::Config(format!("unknown pipeline `{s}`, expected two-step, direct or adaptive"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub truth: Truth,
    pub schedule: ScheduleKind,
    pub range: TimeRange,
    pub nt: Vec<usize>,
    pub ne: Vec<u64>,
    pub repeats: usize,
    pub seed: u64,
    pub pipeline: Pipeline,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub spectral: SpectralConfig,
    pub grid: Grid3Spec,
    pub refine: RefineConfig,
    /// Used by the adaptive pipeline; its preliminary scan takes `nt`, `ne`
    /// and `range` from the cell.
    pub adaptive: AdaptiveConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            truth: Truth::default(),
            schedule: ScheduleKind::LowDiscrepancy,
            range: TimeRange::default(),
            nt: vec![25, 50, 100],
            ne: vec![25, 100, 400],
            repeats: 256,
            seed: 0,
            pipeline: Pipeline::TwoStep,
            workers: None,
            out: None,
            spectral: SpectralConfig::default(),
            grid: Grid3Spec::default(),
            refine: RefineConfig::default(),
            adaptive: AdaptiveConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nt.is_empty() || self.ne.is_empty() {
            return Err(Error::Config("nt and ne lists must not be empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.nt.contains(&0) || self.ne.contains(&0) {
            return Err(Error::Config("nt and ne entries must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.range.validate()?;
        self.truth.couplings().map(|_| ())
    }
}

/// Everything a single run needs.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub config: &'a CampaignConfig,
    pub cell: (usize, usize),
    pub nt: usize,
    pub ne: u64,
    pub repeat: usize,
    pub seed: u64,
    pub hamiltonian: Hamiltonian3,
}

/// What a pipeline run produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOutcome {
    pub omega: Option<f64>,
    pub delta_omega: Option<f64>,
    pub amplitudes: Option<[f64; 4]>,
    pub estimate: Option<CouplingParams>,
    pub reason: Option<UnphysicalReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: (usize, usize),
    pub nt: usize,
    pub ne: u64,
    pub repeat: usize,
    pub seed: u64,
    pub omega: Option<f64>,
    pub delta_omega: Option<f64>,
    pub amplitudes: Option<[f64; 4]>,
    pub estimate: Option<CouplingParams>,
    /// A Hamiltonian was produced.
    pub physical: bool,
    pub reason: Option<UnphysicalReason>,
    pub relative_error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub nt: usize,
    pub ne: u64,
    pub runs: usize,
    pub failures: usize,
    pub unphysical: usize,
    pub std_omega: f64,
    pub std_delta_omega: f64,
    pub std_amplitudes: [f64; 4],
    /// Failed and unphysical runs count as infinite error.
    #[serde(with = "unbounded")]
    pub median_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    /// Row-major over `(nt, ne)`.
    pub cells: Vec<CellSummary>,
    pub runs: Vec<RunRecord>,
}

impl CampaignResult {
    pub fn cell(&self, i: usize, j: usize) -> &CellSummary {
        &self.cells[i * self.config.ne.len() + j]
    }

    pub fn unphysical(&self) -> usize {
        self.cells.iter().map(|c| c.unphysical).sum()
    }
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignResult> {
    run_campaign_with(cfg, &run_pipeline)
}

/// [`run_campaign`] with a custom per-run pipeline. Errors from `runner` are
/// recorded against the run and do not stop the campaign.
pub fn run_campaign_with<F>(cfg: &CampaignConfig, runner: &F) -> Result<CampaignResult>
where
    F: Fn(&RunSpec) -> Result<RunOutcome> + Sync,
{
    cfg.validate()?;
    let truth = cfg.truth.couplings()?;
    let hamiltonian = build_hamiltonian(&truth)?;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.nt.len())
        .flat_map(|i| (0..cfg.ne.len()).flat_map(move |j| (0..cfg.repeats).map(move |r| (i, j, r))))
        .collect();
    let work = || -> Vec<RunRecord> {
        jobs.par_iter()
            .map(|&(i, j, repeat)| {
                let spec = RunSpec {
                    config: cfg,
                    cell: (i, j),
                    nt: cfg.nt[i],
                    ne: cfg.ne[j],
                    repeat,
                    seed: derive_seed(cfg.seed, &[i as u64, j as u64, repeat as u64]),
                    hamiltonian,
                };
                record(&spec, runner(&spec), &truth)
            })
            .collect()
    };
    let runs = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let cells = (0..cfg.nt.len())
        .flat_map(|i| (0..cfg.ne.len()).map(move |j| (i, j)))
        .map(|(i, j)| summarize(cfg.nt[i], cfg.ne[j], runs.iter().filter(|r| r.cell == (i, j))))
        .collect();
    Ok(CampaignResult { config: cfg.clone(), cells, runs })
}

fn record(spec: &RunSpec, outcome: Result<RunOutcome>, truth: &CouplingParams) -> RunRecord {
    let mut rec = RunRecord {
        cell: spec.cell,
        nt: spec.nt,
        ne: spec.ne,
        repeat: spec.repeat,
        seed: spec.seed,
        omega: None,
        delta_omega: None,
        amplitudes: None,
        estimate: None,
        physical: false,
        reason: None,
        relative_error: None,
        failure: None,
    };
    match outcome {
        Ok(o) => {
            rec.relative_error = o.estimate.and_then(|e| relative_error(&e, truth).ok());
            rec.physical = o.estimate.is_some();
            rec.omega = o.omega;
            rec.delta_omega = o.delta_omega;
            rec.amplitudes = o.amplitudes;
            rec.estimate = o.estimate;
            rec.reason = o.reason;
        }
        Err(e) => rec.failure = Some(e.to_string()),
    }
    rec
}

fn std_dev(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn summarize<'a>(nt: usize, ne: u64, runs: impl Iterator<Item = &'a RunRecord> + Clone) -> CellSummary {
    let mut errors: Vec<f64> = runs.clone().map(|r| r.relative_error.unwrap_or(f64::INFINITY)).collect();
    let amp = |k: usize| std_dev(runs.clone().filter_map(|r| r.amplitudes.map(|a| a[k])));
    CellSummary {
        nt,
        ne,
        runs: errors.len(),
        failures: runs.clone().filter(|r| r.failure.is_some()).count(),
        unphysical: runs.clone().filter(|r| r.failure.is_none() && !r.physical).count(),
        std_omega: std_dev(runs.clone().filter_map(|r| r.omega)),
        std_delta_omega: std_dev(runs.clone().filter_map(|r| r.delta_omega)),
        std_amplitudes: [amp(0), amp(1), amp(2), amp(3)],
        median_relative_error: median(&mut errors),
    }
}

/// The built-in pipelines.
pub fn run_pipeline(spec: &RunSpec) -> Result<RunOutcome> {
    let cfg = spec.config;
    match cfg.pipeline {
        Pipeline::TwoStep | Pipeline::Direct => {
            let times = SamplingSchedule::from_kind(cfg.schedule, cfg.range, spec.nt).times()?;
            let trace = simulate_trace(&spec.hamiltonian, &times, spec.ne, spec.seed)?;
            if cfg.pipeline == Pipeline::TwoStep {
                let (est, _) = estimate_spectral(&trace, &cfg.spectral)?;
                let rec = reconstruct_hamiltonian(&est);
                Ok(RunOutcome {
                    omega: Some(est.omega),
                    delta_omega: Some(est.delta_omega),
                    amplitudes: Some(est.amplitudes),
                    estimate: rec.hamiltonian,
                    reason: unphysical_reason(rec.validity),
                })
            } else {
                let (d, _) = estimate_direct(&trace, &cfg.grid, &cfg.refine)?;
                direct_outcome(&d.polar)
            }
        }
        Pipeline::Adaptive => {
            let acfg = AdaptiveConfig {
                range: cfg.range,
                preliminary_points: spec.nt,
                preliminary_shots: spec.ne,
                ..cfg.adaptive.clone()
            };
            let report = adaptive_characterize(&mut SimulatedSource::new(spec.hamiltonian, spec.seed), &acfg)?;
            let last = report.latest();
            if let Some(d) = &last.direct {
                let mut o = direct_outcome(&d.polar)?;
                if let Some(est) = &last.spectral {
                    o.amplitudes = Some(est.amplitudes);
                }
                return Ok(o);
            }
            let est = last
                .spectral
                .as_ref()
                .ok_or_else(|| Error::invalid(last.errors.join("; ")))?;
            let rec = reconstruct_hamiltonian(est);
            Ok(RunOutcome {
                omega: Some(est.omega),
                delta_omega: Some(est.delta_omega),
                amplitudes: Some(est.amplitudes),
                estimate: rec.hamiltonian,
                reason: unphysical_reason(rec.validity),
            })
        }
    }
}

fn unphysical_reason(v: Validity) -> Option<UnphysicalReason> {
    match v {
        Validity::Physical => None,
        Validity::Unphysical(r) => Some(r),
    }
}

fn direct_outcome(p: &PolarParams) -> Result<RunOutcome> {
    let c = polar_to_couplings(p)?;
    let b = bohr_frequencies(&spectral_decompose(&build_hamiltonian(&c)?)).canonical();
    Ok(RunOutcome {
        omega: Some(b.omega),
        delta_omega: Some(b.delta_omega),
        amplitudes: None,
        estimate: Some(c),
        reason: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pipeline: Pipeline) -> CampaignConfig {
        CampaignConfig { nt: vec![40], ne: vec![100], repeats: 3, seed: 9, pipeline, ..Default::default() }
    }

    #[test]
    fn single_run_matches_direct_call() {
        let cfg = CampaignConfig { repeats: 1, ..small(Pipeline::TwoStep) };
        let res = run_campaign(&cfg).unwrap();
        assert_eq!(res.runs.len(), 1);
        let h = build_hamiltonian(&cfg.truth.couplings().unwrap()).unwrap();
        let times = SamplingSchedule::from_kind(cfg.schedule, cfg.range, 40).times().unwrap();
        let trace = simulate_trace(&h, &times, 100, derive_seed(9, &[0, 0, 0])).unwrap();
        let (est, _) = estimate_spectral(&trace, &cfg.spectral).unwrap();
        assert_eq!(res.runs[0].omega, Some(est.omega));
        assert_eq!(res.cells[0].runs, 1);
        assert_eq!(res.cells[0].std_omega, 0.0);
    }

    #[test]
    fn deterministic_and_worker_independent() {
        let cfg = small(Pipeline::TwoStep);
        let a = run_campaign(&cfg).unwrap();
        let b = run_campaign(&CampaignConfig { workers: Some(1), ..cfg.clone() }).unwrap();
        assert_eq!(a.runs, b.runs);
        assert_eq!(serde_json::to_string(&a.cells).unwrap(), serde_json::to_string(&b.cells).unwrap());
    }

    #[test]
    fn injected_failure_is_isolated() {
        let cfg = small(Pipeline::TwoStep);
        let clean = run_campaign(&cfg).unwrap();
        let broken = run_campaign_with(&cfg, &|s: &RunSpec| {
            if s.repeat == 1 {
                Err(Error::invalid("injected"))
            } else {
                run_pipeline(s)
            }
        })
        .unwrap();
        for (a, b) in clean.runs.iter().zip(&broken.runs) {
            if a.repeat == 1 {
                assert!(b.failure.as_deref().unwrap().contains("injected"));
                assert!(b.omega.is_none());
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(broken.cells[0].failures, 1);
    }

    #[test]
    fn direct_and_adaptive_pipelines_run() {
        let res = run_campaign(&CampaignConfig { repeats: 1, ..small(Pipeline::Direct) }).unwrap();
        assert!(res.runs[0].relative_error.unwrap() < 0.5);
        let mut cfg = CampaignConfig { repeats: 1, ..small(Pipeline::Adaptive) };
        cfg.adaptive.direct = false;
        let res = run_campaign(&cfg).unwrap();
        assert!(res.runs[0].failure.is_none(), "{:?}", res.runs[0].failure);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(run_campaign(&CampaignConfig { nt: vec![], ..Default::default() }).is_err());
        assert!(run_campaign(&CampaignConfig { repeats: 0, ..Default::default() }).is_err());
        assert!(run_campaign(&CampaignConfig { workers: Some(0), ..Default::default() }).is_err());
    }

    #[test]
    fn median_counts_unphysical_as_infinite() {
        let rec = |e: Option<f64>| RunRecord {
            cell: (0, 0),
            nt: 1,
            ne: 1,
            repeat: 0,
            seed: 0,
            omega: None,
            delta_omega: None,
            amplitudes: None,
            estimate: None,
            physical: e.is_some(),
            reason: None,
            relative_error: e,
            failure: None,
        };
        let runs = [rec(Some(0.1)), rec(None), rec(None)];
        let s = summarize(1, 1, runs.iter());
        assert!(s.median_relative_error.is_infinite());
        assert_eq!(s.unphysical, 2);
    }
}
