//! Acceptance checks. Each test prints one `criterion N: PASS|FAIL` line.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::{Complex, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use characterizer::adaptive::{adaptive_characterize, AdaptiveConfig, SimulatedSource, Strategy};
use characterizer::campaign::{run_campaign, CampaignConfig, Pipeline};
use characterizer::measurement::{low_discrepancy_times, simulate_trace, TimeRange};
use characterizer::reconstruct::{reconstruct_from_signal, reconstruct_hamiltonian, relative_error};
use characterizer::spectral::{
    default_frequency_grid, estimate_spectral, median, model_compare, peaks_above_half_max, periodogram,
    SpectralConfig,
};
use characterizer::*;

// criteria run one at a time so the wall-clock limits mean something
static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: usize, pass: bool, detail: String, elapsed: Duration, limit: Option<Duration>) -> bool {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let ok = pass && in_time;
    // straight to the handle so the line survives the harness's output capture
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "\ncriterion {n}: {} | {detail} | {:.1}s{}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default()
    );
    let _ = out.flush();
    ok
}

fn reference_truth() -> CouplingParams {
    polar_to_couplings(&PolarParams::new(1.7321, 0.9553, 0.5000).unwrap()).unwrap()
}

fn exact_truth() -> CouplingParams {
    CouplingParams::embedded_qubit(1.0, 2f64.sqrt(), 2.0).unwrap()
}

fn random_hamiltonian(rng: &mut ChaCha8Rng) -> CouplingParams {
    CouplingParams::embedded_qubit(rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(-4.0..4.0))
        .unwrap()
}

/// `|⟨1|e^{−iHt}|1⟩|²` from a Padé matrix exponential.
fn propagator_survival(c: &CouplingParams, t: f64) -> f64 {
    let m = c.matrix();
    let a = Matrix3::from_fn(|i, j| Complex::new(0.0, -m[i][j] * t));
    a.exp()[(0, 0)].norm_sqr()
}

fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", "))
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[((s.len() - 1) as f64 * q).round() as usize]
}

fn two_step_errors(seeds: u64) -> Vec<f64> {
    let h = build_hamiltonian(&reference_truth()).unwrap();
    let times = low_discrepancy_times(100, TimeRange::default()).unwrap();
    (0..seeds)
        .map(|seed| {
            let trace = simulate_trace(&h, &times, 100, seed).unwrap();
            let (est, _) = estimate_spectral(&trace, &SpectralConfig::default()).unwrap();
            reconstruct_hamiltonian(&est)
                .hamiltonian
                .map_or(f64::INFINITY, |e| relative_error(&e, &reference_truth()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_1_model_equivalence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let times: Vec<f64> = (0..100).map(|k| 20.0 * k as f64 / 99.0).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = random_hamiltonian(&mut rng);
        let sp = signal_from_hamiltonian(&build_hamiltonian(&c).unwrap()).unwrap();
        for &t in &times {
            worst = worst.max((eval_signal(&sp, t) - propagator_survival(&c, t)).abs());
        }
    }
    let ok = report(1, worst <= 1e-10, format!("max deviation {worst:.2e} (≤ 1e-10)"), start.elapsed(), Some(Duration::from_secs(5)));
    assert!(ok);
}

#[test]
fn criterion_2_noiseless_round_trip() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 100 {
        let c = random_hamiltonian(&mut rng);
        let h = build_hamiltonian(&c).unwrap();
        if spectral_decompose(&h).overlaps().iter().any(|&o| o < 1e-3) {
            continue;
        }
        tested += 1;
        let rec = reconstruct_from_signal(&signal_from_hamiltonian(&h).unwrap());
        let err = rec.hamiltonian.map_or(f64::INFINITY, |e| relative_error(&e, &c).unwrap());
        worst = worst.max(err);
    }
    let ok = report(2, worst <= 1e-8, format!("max relative error {worst:.2e} (≤ 1e-8)"), start.elapsed(), Some(Duration::from_secs(5)));
    assert!(ok);
}

#[test]
fn criterion_3_two_step_reference_example() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut errors = two_step_errors(64);
    let m = median(&mut errors);
    let ok = report(
        3,
        (0.005..=0.15).contains(&m),
        format!("median relative error {m:.4} over 64 seeds (in [0.005, 0.15])"),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
    assert!(ok);
}

#[test]
fn criterion_4_refined_direct_mle() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let h = build_hamiltonian(&reference_truth()).unwrap();
    let cfg = AdaptiveConfig {
        rounds: 7,
        window_growth: 2.0,
        strategy: Strategy::HalfPeriod,
        refine_shots: 1000,
        direct: true,
        ..Default::default()
    };
    let errors: Vec<f64> = (0..64u64)
        .map(|seed| {
            let r = adaptive_characterize(&mut SimulatedSource::new(h, seed), &cfg).unwrap();
            r.direct_error().unwrap_or(f64::INFINITY)
        })
        .collect();
    let m = median(&mut errors.clone());
    let q1 = quantile(&errors, 0.25);
    let baseline = median(&mut two_step_errors(64));
    let ok = report(
        4,
        m <= 5e-3 && q1 <= 1e-3 && m < baseline,
        format!("median {m:.2e} (≤ 5e-3), best quartile {q1:.2e} (≤ 1e-3), two-step median {baseline:.2e}"),
        start.elapsed(),
        Some(Duration::from_secs(600)),
    );
    assert!(ok);
}

#[test]
fn criterion_5_splitting_beyond_periodogram() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let h = build_hamiltonian(&reference_truth()).unwrap();
    let omega = signal_from_hamiltonian(&h).unwrap().omega;
    let times = low_discrepancy_times(100, TimeRange::default()).unwrap();
    let (mut split, mut single_peak) = (0, 0);
    for seed in 0..256u64 {
        let trace = simulate_trace(&h, &times, 100, seed).unwrap();
        let (est, _) = estimate_spectral(&trace, &SpectralConfig::default()).unwrap();
        if model_compare(&trace, &est).unwrap().difference > 0.0 {
            split += 1;
        }
        let freqs = default_frequency_grid(&trace, 4000).unwrap();
        if peaks_above_half_max(&periodogram(&trace, &freqs), &freqs, (0.75 * omega, 1.25 * omega)) == 1 {
            single_peak += 1;
        }
    }
    let need = (0.9f64 * 256.0).ceil() as usize;
    let ok = report(
        5,
        split >= need && single_peak >= need,
        format!("split model preferred {split}/256, single periodogram peak {single_peak}/256 (each ≥ {need})"),
        start.elapsed(),
        Some(Duration::from_secs(600)),
    );
    assert!(ok);
}

#[test]
fn criterion_6_uncertainty_anisotropy() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = CampaignConfig {
        truth: characterizer::campaign::Truth::Couplings(reference_truth()),
        nt: vec![25, 50, 100],
        ne: vec![25, 100, 400],
        repeats: 256,
        seed: 6,
        pipeline: Pipeline::TwoStep,
        ..Default::default()
    };
    let res = run_campaign(&cfg).unwrap();
    let reference_cell = res.cell(2, 1);
    let ratio = reference_cell.std_delta_omega / reference_cell.std_omega;
    let sw = |i: usize, j: usize| res.cell(i, j).std_omega;
    let along_nt: Vec<f64> = (0..3).map(|i| median(&mut (0..3).map(|j| sw(i, j)).collect::<Vec<_>>())).collect();
    let along_ne: Vec<f64> = (0..3).map(|j| median(&mut (0..3).map(|i| sw(i, j)).collect::<Vec<_>>())).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let unphysical: Vec<usize> = res.cells.iter().map(|c| c.unphysical).collect();
    let ok = report(
        6,
        (3.0..=30.0).contains(&ratio) && decreasing(&along_nt) && decreasing(&along_ne),
        format!(
            "σ(Δω)/σ(ω) = {ratio:.2} (in [3, 30]); median σ(ω) along Nt {}, along Ne {} (strictly decreasing); unphysical per cell {unphysical:?}",
            sci(&along_nt),
            sci(&along_ne)
        ),
        start.elapsed(),
        Some(Duration::from_secs(1200)),
    );
    assert!(ok);
}

#[test]
fn criterion_7_unphysical_outliers_flagged() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = CampaignConfig {
        truth: characterizer::campaign::Truth::Couplings(reference_truth()),
        nt: vec![25],
        ne: vec![25],
        repeats: 256,
        seed: 7,
        pipeline: Pipeline::TwoStep,
        ..Default::default()
    };
    let res = run_campaign(&cfg).unwrap();
    let unphysical: Vec<_> = res.runs.iter().filter(|r| r.failure.is_none() && !r.physical).collect();
    let all_flagged = unphysical.iter().all(|r| r.reason.is_some() && r.estimate.is_none() && r.relative_error.is_none())
        && res.runs.iter().filter(|r| r.physical).all(|r| r.reason.is_none() && r.estimate.is_some());
    let ok = report(
        7,
        !unphysical.is_empty() && all_flagged,
        format!(
            "{} unphysical of 256 noisy runs (Nt = Ne = 25, > 0), all flagged: {all_flagged}, failures {}",
            unphysical.len(),
            res.cells[0].failures
        ),
        start.elapsed(),
        None,
    );
    assert!(ok);
}

fn run_cli(out: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_characterizer"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_8_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let runs: Vec<Vec<&str>> = vec![
        vec!["simulate", "--seed", "8"],
        vec!["estimate-spectral", "--seed", "8"],
        vec!["reconstruct", "--seed", "8"],
        vec!["estimate-direct", "--seed", "8"],
        vec!["periodogram", "--seed", "8"],
        vec!["adaptive", "--seed", "8", "--rounds", "2", "--window-growth", "2"],
        vec!["adaptive", "--seed", "8", "--rounds", "1", "--strategy", "ensemble-variance"],
        vec!["campaign", "--seed", "8", "--nt", "30,60", "--ne", "50", "--repeats", "3"],
        vec!["campaign", "--seed", "8", "--nt", "40", "--ne", "50", "--repeats", "2", "--pipeline", "direct"],
        vec!["campaign", "--seed", "8", "--nt", "40", "--ne", "50", "--repeats", "2", "--pipeline", "adaptive", "--workers", "1"],
    ];
    let mut mismatches = Vec::new();
    let mut files = 0;
    for args in &runs {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_cli(a.path(), args);
        run_cli(b.path(), args);
        let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
        files += sa.len();
        if sa != sb || sa.is_empty() {
            mismatches.push(args.join(" "));
        }
    }
    let ok = report(
        8,
        mismatches.is_empty(),
        format!("{} pipeline invocations, {files} exported files compared byte for byte; mismatches: {mismatches:?}", runs.len()),
        start.elapsed(),
        None,
    );
    assert!(ok);
}

// the exact and rounded reference parameters describe the same experiment
#[test]
fn rounded_parameters_are_the_reference_hamiltonian() {
    assert!(relative_error(&reference_truth(), &exact_truth()).unwrap() < 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = random_hamiltonian(&mut rng);
    let t = 3.7;
    assert!((propagator_survival(&c, t) - transition_probability(&build_hamiltonian(&c).unwrap(), 1, 1, t).unwrap()).abs() < 1e-12);
}
