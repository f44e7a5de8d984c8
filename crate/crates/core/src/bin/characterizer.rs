use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use characterizer::adaptive::{adaptive_characterize, SimulatedSource, Strategy};
use characterizer::campaign::{run_campaign, CampaignConfig, Pipeline};
use characterizer::direct::estimate_direct;
use characterizer::io;
use characterizer::measurement::{simulate_trace, SamplingSchedule, TimeRange};
use characterizer::reconstruct::{reconstruct_hamiltonian, ReconstructionReport};
use characterizer::spectral::{default_frequency_grid, estimate_spectral, periodogram};
use characterizer::{build_hamiltonian, polar_to_couplings, CouplingParams, DataTrace, Error, Result};

/// Hamiltonian characterization of a qubit embedded in a three-level system.
#[derive(Debug, Parser)]
#[command(name = "characterizer", version)]
struct Cli {
    /// JSON configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for simulated noise
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of sample times (comma-separated list for campaigns).
    #[arg(long, global = true, value_delimiter = ',')]
    nt: Option<Vec<usize>>,
    /// Shots per sample time (comma-separated list for campaigns).
    #[arg(long, global = true, value_delimiter = ',')]
    ne: Option<Vec<u64>>,
    /// Sampling interval as `start:end`.
    #[arg(long, global = true)]
    range: Option<TimeRange>,
    /// Campaign pipeline: two-step, direct or adaptive
    #[arg(long, global = true)]
    pipeline: Option<Pipeline>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for campaigns (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a measurement trace from the configured Hamiltonian.
    Simulate,
    /// Fit the four-line signal model; writes the estimate and likelihood surface.
    EstimateSpectral(TraceArg),
    /// Spectral estimate followed by algebraic reconstruction.
    Reconstruct(TraceArg),
    /// Direct maximum likelihood over (Ω, α, ε); writes the estimate and grid.
    EstimateDirect(TraceArg),
    /// Preliminary scan plus refinement rounds against a simulated source.
    Adaptive {
        /// Number of refinement rounds
        #[arg(long)]
        rounds: Option<usize>,
        /// Time selection: half-period or ensemble-variance
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Growth factor of the sampling window between rounds.
        #[arg(long)]
        window_growth: Option<f64>,
    },
    /// Repeated simulated experiments over the Nt × Ne grid.
    Campaign {
        /// Repeated experiments per cell
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Periodogram of a trace.
    Periodogram {
        #[command(flatten)]
        trace: TraceArg,
        /// Number of frequencies evaluated
        #[arg(long, default_value_t = 4000)]
        points: usize,
    },
}

#[derive(Debug, clap::Args)]
struct TraceArg {
    /// Trace CSV to analyse; simulated from the configuration when omitted.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    #[serde(flatten)]
    campaign: CampaignConfig,
    trace: Option<PathBuf>,
}

struct Settings {
    cfg: CampaignConfig,
    trace: Option<PathBuf>,
    /// A truth was configured or the trace is simulated from it.
    truth_known: bool,
    out: PathBuf,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let (file, raw) = match &cli.config {
        Some(path) => {
            let raw: serde_json::Value = io::load_json(path)?;
            let file: FileConfig =
                serde_json::from_value(raw.clone()).map_err(|e| Error::Json { path: path.clone(), source: e })?;
            (file, raw)
        }
        None => (FileConfig::default(), serde_json::Value::Null),
    };
    let truth_in_file = raw.get("truth").is_some();
    let mut cfg = file.campaign;
    // single experiments default to the reference cell rather than the campaign grid
    if !matches!(cli.command, Command::Campaign { .. }) {
        if raw.get("nt").is_none() {
            cfg.nt = vec![100];
        }
        if raw.get("ne").is_none() {
            cfg.ne = vec![100];
        }
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(nt) = &cli.nt {
        cfg.nt = nt.clone();
    }
    if let Some(ne) = &cli.ne {
        cfg.ne = ne.clone();
    }
    if let Some(r) = cli.range {
        cfg.range = r;
    }
    if let Some(p) = cli.pipeline {
        cfg.pipeline = p;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok(Settings { cfg, trace: file.trace, truth_known: truth_in_file, out })
}

impl Settings {
    fn truth(&self) -> Result<CouplingParams> {
        self.cfg.truth.couplings()
    }

    fn simulated(&self) -> Result<DataTrace> {
        let (nt, ne) = match (self.cfg.nt.first(), self.cfg.ne.first()) {
            (Some(&nt), Some(&ne)) => (nt, ne),
            _ => return Err(Error::Config("nt and ne must not be empty".into())),
        };
        let times = SamplingSchedule::from_kind(self.cfg.schedule, self.cfg.range, nt).times()?;
        simulate_trace(&build_hamiltonian(&self.truth()?)?, &times, ne, self.cfg.seed)
    }

    /// The trace to analyse and, when it was simulated or a truth was
    /// configured, the true couplings.
    fn input(&self, arg: &TraceArg) -> Result<(DataTrace, Option<CouplingParams>)> {
        match arg.trace.as_ref().or(self.trace.as_ref()) {
            Some(path) => {
                let truth = if self.truth_known { Some(self.truth()?) } else { None };
                Ok((io::load_trace(path)?, truth))
            }
            None => Ok((self.simulated()?, Some(self.truth()?))),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn announce(paths: &[&Path]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut s = settings(&cli)?;
    match cli.command {
        Command::Simulate => {
            let path = s.path("trace.csv");
            io::save_trace(&s.simulated()?, &path)?;
            announce(&[&path]);
        }
        Command::EstimateSpectral(arg) => {
            let (trace, _) = s.input(&arg)?;
            let (est, surface) = estimate_spectral(&trace, &s.cfg.spectral)?;
            let (a, b) = (s.path("estimate.json"), s.path("surface.csv"));
            io::save_json(&est, &a)?;
            io::save_surface(&surface, &b)?;
            announce(&[&a, &b]);
        }
        Command::Reconstruct(arg) => {
            let (trace, truth) = s.input(&arg)?;
            let (est, _) = estimate_spectral(&trace, &s.cfg.spectral)?;
            let rec = reconstruct_hamiltonian(&est);
            if !rec.is_physical() {
                log::warn!("reconstruction is unphysical: {:?}", rec.validity);
            }
            let path = s.path("reconstruction.json");
            io::save_json(&ReconstructionReport::new(&rec, truth.as_ref()), &path)?;
            announce(&[&path]);
        }
        Command::EstimateDirect(arg) => {
            let (trace, truth) = s.input(&arg)?;
            let (est, grid) = estimate_direct(&trace, &s.cfg.grid, &s.cfg.refine)?;
            let report = serde_json::json!({
                "estimate": est,
                "couplings": polar_to_couplings(&est.polar)?,
                "relative_error": truth
                    .map(|t| characterizer::reconstruct::relative_error(&polar_to_couplings(&est.polar)?, &t))
                    .transpose()?,
                "grid": s.cfg.grid,
            });
            let (a, b) = (s.path("direct.json"), s.path("grid.csv"));
            io::save_json(&report, &a)?;
            io::save_grid3(&grid, &b)?;
            announce(&[&a, &b]);
        }
        Command::Adaptive { rounds, strategy, window_growth } => {
            let mut acfg = s.cfg.adaptive.clone();
            acfg.range = s.cfg.range;
            if let Some(&nt) = s.cfg.nt.first() {
                acfg.preliminary_points = nt;
            }
            if let Some(&ne) = s.cfg.ne.first() {
                acfg.preliminary_shots = ne;
            }
            if let Some(r) = rounds {
                acfg.rounds = r;
            }
            if let Some(st) = strategy {
                acfg.strategy = st;
            }
            if let Some(g) = window_growth {
                acfg.window_growth = g;
            }
            let h = build_hamiltonian(&s.truth()?)?;
            let report = adaptive_characterize(&mut SimulatedSource::new(h, s.cfg.seed), &acfg)?;
            let mut written = vec![s.path("adaptive.json"), s.path("trace.csv")];
            io::save_json(&report, &written[0])?;
            io::save_trace(&report.trace, &written[1])?;
            for (k, surface) in report.surfaces.iter().enumerate() {
                if let Some(surface) = surface {
                    let p = s.path(&format!("surface_round{k}.csv"));
                    io::save_surface(surface, &p)?;
                    written.push(p);
                }
            }
            announce(&written.iter().map(PathBuf::as_path).collect::<Vec<_>>());
        }
        Command::Campaign { repeats } => {
            if let Some(r) = repeats {
                s.cfg.repeats = r;
            }
            let result = run_campaign(&s.cfg)?;
            for c in &result.cells {
                log::info!(
                    "nt={} ne={}: std ω {:.3e}, std Δω {:.3e}, median error {:.3e}, unphysical {}",
                    c.nt,
                    c.ne,
                    c.std_omega,
                    c.std_delta_omega,
                    c.median_relative_error,
                    c.unphysical
                );
            }
            let written = io::save_campaign(&result, &s.out)?;
            announce(&written.iter().map(PathBuf::as_path).collect::<Vec<_>>());
        }
        Command::Periodogram { trace, points } => {
            let (trace, _) = s.input(&trace)?;
            let freqs = default_frequency_grid(&trace, points)?;
            let power = periodogram(&trace, &freqs);
            let path = s.path("periodogram.csv");
            io::save_periodogram(&freqs, &power, &path)?;
            announce(&[&path]);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CHARACTERIZER_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
