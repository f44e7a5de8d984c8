//! Finite-shot measurement records of the ground-state population.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{spectral_decompose, Hamiltonian3};

/// One sampling time with its outcome counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: FloatBits,
    pub successes: u64,
    pub shots: u64,
}

/// An `f64` compared and hashed by bit pattern, so traces can derive `Eq`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloatBits(pub f64);

impl PartialEq for FloatBits {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for FloatBits {}

impl TracePoint {
    pub fn new(t: f64, successes: u64, shots: u64) -> Self {
        TracePoint {
            t: FloatBits(t),
            successes,
            shots,
        }
    }

    pub fn time(&self) -> f64 {
        self.t.0
    }

    pub fn frequency(&self) -> f64 {
        self.successes as f64 / self.shots as f64
    }
}

/// Measured frequencies `d_n = successes_n / shots_n` at strictly increasing
/// times. Coincident times are pooled on construction.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTrace {
    points: Vec<TracePoint>,
}

impl DataTrace {
    pub fn empty() -> Self {
        DataTrace::default()
    }

    pub fn from_points(mut points: Vec<TracePoint>) -> Result<Self> {
        for p in &points {
            let t = p.time();
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::invalid(format!("sample time must be finite and non-negative, got {t}")));
            }
            if p.shots == 0 {
                return Err(Error::invalid(format!("zero shots at t = {t}")));
            }
            if p.successes > p.shots {
                return Err(Error::invalid(format!(
                    "{} successes exceed {} shots at t = {t}",
                    p.successes, p.shots
                )));
            }
        }
        points.sort_by(|a, b| a.time().total_cmp(&b.time()));
        let mut merged: Vec<TracePoint> = Vec::with_capacity(points.len());
        for p in points {
            match merged.last_mut() {
                Some(last) if last.time() == p.time() => {
                    last.successes += p.successes;
                    last.shots += p.shots;
                }
                _ => merged.push(p),
            }
        }
        Ok(DataTrace { points: merged })
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(TracePoint::time).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.points.iter().map(TracePoint::frequency).collect()
    }

    pub fn total_shots(&self) -> u64 {
        self.points.iter().map(|p| p.shots).sum()
    }

    /// `⟨d²⟩ = (1/Nt) Σ d_n²`.
    pub fn mean_square(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points
            .iter()
            .map(|p| p.frequency().powi(2))
            .sum::<f64>()
            / self.points.len() as f64
    }
}

pub fn merge_traces(a: &DataTrace, b: &DataTrace) -> DataTrace {
    let points = a.points.iter().chain(&b.points).copied().collect();
    // both inputs already satisfy every point invariant
    DataTrace::from_points(points).expect("merging valid traces")
}

/// A closed time interval `[start, end]`, written `start:end` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: f64,
    pub end: f64,
}

impl TimeRange {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        let r = TimeRange { start, end };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite() && self.start >= 0.0 && self.end > self.start) {
            return Err(Error::EmptyRange {
                start: self.start,
                end: self.end,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

impl Default for TimeRange {
    fn default() -> Self {
        TimeRange {
            start: 0.0,
            end: 20.0,
        }
    }
}

impl FromStr for TimeRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("time range must look like `0:20`, got `{s}`")))?;
        let parse = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad time range bound `{x}`: {e}")))
        };
        TimeRange::new(parse(a)?, parse(b)?)
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

/// Base-2 radical inverse of `i`.
fn van_der_corput(mut i: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while i > 0 {
        denom *= 2.0;
        inv += (i & 1) as f64 / denom;
        i >>= 1;
    }
    inv
}

/// Van der Corput points `1..=count` scaled into `range`, in generation order.
pub fn low_discrepancy_times(count: usize, range: TimeRange) -> Result<Vec<f64>> {
    range.validate()?;
    Ok((1..=count as u64)
        .map(|i| range.start + range.width() * van_der_corput(i))
        .collect())
}

/// `count` evenly spaced times `start + i·width/count`.
pub fn uniform_times(count: usize, range: TimeRange) -> Result<Vec<f64>> {
    range.validate()?;
    Ok((0..count)
        .map(|i| range.start + range.width() * i as f64 / count as f64)
        .collect())
}

/// Integer multiples of the half period, `j·π/ω` for `j = j0 .. j0+count`,
/// with `j0 = ⌈t_start·ω/π⌉`.
pub fn halfperiod_times(omega: f64, count: usize, t_start: f64) -> Result<Vec<f64>> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::NonPositiveFrequency(omega));
    }
    let half = std::f64::consts::PI / omega;
    let j0 = (t_start.max(0.0) / half).ceil() as u64;
    Ok((j0..j0 + count as u64).map(|j| j as f64 * half).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    LowDiscrepancy,
    Uniform,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low-discrepancy" => Ok(ScheduleKind::LowDiscrepancy),
            "uniform" => Ok(ScheduleKind::Uniform),
            _ => Err(Error::Config(format!(
                "unknown schedule `{s}`, expected low-discrepancy or uniform"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingSchedule {
    LowDiscrepancy { range: TimeRange, count: usize },
    Uniform { range: TimeRange, count: usize },
    ExplicitTimes { times: Vec<f64> },
    HalfPeriod { omega: f64, count: usize, t_start: f64 },
}

impl SamplingSchedule {
    pub fn from_kind(kind: ScheduleKind, range: TimeRange, count: usize) -> Self {
        match kind {
            ScheduleKind::LowDiscrepancy => SamplingSchedule::LowDiscrepancy { range, count },
            ScheduleKind::Uniform => SamplingSchedule::Uniform { range, count },
        }
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        match self {
            SamplingSchedule::LowDiscrepancy { range, count } => {
                low_discrepancy_times(*count, *range)
            }
            SamplingSchedule::Uniform { range, count } => uniform_times(*count, *range),
            SamplingSchedule::ExplicitTimes { times } => {
                if let Some(t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
                    return Err(Error::invalid(format!("bad sample time {t}")));
                }
                Ok(times.clone())
            }
            SamplingSchedule::HalfPeriod {
                omega,
                count,
                t_start,
            } => halfperiod_times(*omega, *count, *t_start),
        }
    }
}

/// Draws `shots` projective measurements at each time.
///
/// The outcome at position `n` of `times` comes from a ChaCha8 stream keyed by
/// `(seed, n)`, so the trace does not depend on evaluation order.
pub fn simulate_trace(h: &Hamiltonian3, times: &[f64], shots: u64, seed: u64) -> Result<DataTrace> {
    if shots == 0 {
        return Err(Error::invalid("shots per time must be at least 1"));
    }
    let sd = spectral_decompose(h);
    let points = times
        .par_iter()
        .enumerate()
        .map(|(n, &t)| {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::invalid(format!("sample time must be finite and non-negative, got {t}")));
            }
            let p = sd.survival(t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let successes = Binomial::new(shots, p)
                .map_err(|e| Error::invalid(format!("binomial({shots}, {p}): {e}")))?
                .sample(&mut rng);
            Ok(TracePoint::new(t, successes, shots))
        })
        .collect::<Result<Vec<_>>>()?;
    DataTrace::from_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{build_hamiltonian, CouplingParams};
    use std::f64::consts::{PI, SQRT_2};

    fn reference_h() -> Hamiltonian3 {
        build_hamiltonian(&CouplingParams::embedded_qubit(1.0, SQRT_2, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn radical_inverse_prefix() {
        let r = TimeRange::new(0.0, 20.0).unwrap();
        assert_eq!(low_discrepancy_times(1, r).unwrap(), vec![10.0]);
        assert_eq!(low_discrepancy_times(2, r).unwrap(), vec![10.0, 5.0]);
        assert_eq!(low_discrepancy_times(4, r).unwrap(), vec![10.0, 5.0, 15.0, 2.5]);
        let t = low_discrepancy_times(100, r).unwrap();
        let mut s = t.clone();
        s.sort_by(f64::total_cmp);
        s.dedup();
        assert_eq!(s.len(), 100);
        assert!(t.iter().all(|&x| (0.0..20.0).contains(&x)));
        assert!(low_discrepancy_times(3, TimeRange { start: 5.0, end: 5.0 }).is_err());
    }

    #[test]
    fn low_discrepancy_beats_random_star_discrepancy() {
        fn star(points: &[f64]) -> f64 {
            let mut s = points.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len() as f64;
            s.iter()
                .enumerate()
                .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
                .fold(0.0, f64::max)
        }
        let unit = TimeRange::new(0.0, 1.0).unwrap();
        let ld = star(&low_discrepancy_times(100, unit).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let worse = (0..50)
            .filter(|_| {
                let r: Vec<f64> = (0..100).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
                star(&r) > ld
            })
            .count();
        assert!(ld < 0.05, "{ld}");
        assert!(worse >= 49);
    }

    #[test]
    fn schedules_contain_their_points() {
        let r = TimeRange::new(2.0, 7.0).unwrap();
        for kind in [ScheduleKind::LowDiscrepancy, ScheduleKind::Uniform] {
            for count in [1, 5, 64] {
                let t = SamplingSchedule::from_kind(kind, r, count).times().unwrap();
                assert_eq!(t.len(), count);
                assert!(t.iter().all(|&x| (2.0..=7.0).contains(&x)));
            }
        }
        let hp = SamplingSchedule::HalfPeriod { omega: PI, count: 3, t_start: 0.0 }.times().unwrap();
        assert_eq!(hp, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn halfperiod_arithmetic() {
        assert_eq!(halfperiod_times(PI, 3, 0.0).unwrap(), vec![0.0, 1.0, 2.0]);
        assert!(halfperiod_times(PI, 0, 0.0).unwrap().is_empty());
        let t = halfperiod_times(1.9468, 4, 0.0).unwrap();
        assert!((t[1] - t[0] - 1.6138).abs() < 1e-4);
        let t = halfperiod_times(PI, 2, 1.5).unwrap();
        assert_eq!(t, vec![2.0, 3.0]);
        assert!(matches!(halfperiod_times(0.0, 2, 0.0), Err(Error::NonPositiveFrequency(_))));
        assert!(halfperiod_times(-1.0, 2, 0.0).is_err());
    }

    #[test]
    fn range_parsing() {
        let r: TimeRange = "0:20".parse().unwrap();
        assert_eq!(r, TimeRange { start: 0.0, end: 20.0 });
        assert!("20:0".parse::<TimeRange>().is_err());
        assert!("0-20".parse::<TimeRange>().is_err());
    }

    #[test]
    fn zero_hamiltonian_always_survives() {
        let zero = build_hamiltonian(&CouplingParams::new(0.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
        let tr = simulate_trace(&zero, &[0.5, 1.0, 3.0, 9.0], 37, 1).unwrap();
        assert!(tr.points().iter().all(|p| p.successes == p.shots && p.shots == 37));
    }

    #[test]
    fn simulation_is_deterministic() {
        let times = [1.0, 2.0, 3.0];
        let a = simulate_trace(&reference_h(), &times, 100, 42).unwrap();
        let b = simulate_trace(&reference_h(), &times, 100, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_trace(&reference_h(), &times, 100, 43).unwrap();
        assert_ne!(a, c);
        // a point's draw depends only on its position, not on its neighbours
        let d = simulate_trace(&reference_h(), &[1.0, 2.0, 3.5], 100, 42).unwrap();
        assert_eq!(a.points()[..2], d.points()[..2]);
    }

    #[test]
    fn large_shot_limit() {
        let r = TimeRange::new(0.0, 20.0).unwrap();
        let times = low_discrepancy_times(50, r).unwrap();
        let tr = simulate_trace(&reference_h(), &times, 1_000_000, 5).unwrap();
        let sd = spectral_decompose(&reference_h());
        for p in tr.points() {
            assert!((p.frequency() - sd.survival(p.time())).abs() <= 5e-3);
        }
    }

    #[test]
    fn empirical_mean_is_unbiased() {
        let h = reference_h();
        let t = 3.3;
        let p = spectral_decompose(&h).survival(t);
        let shots = 50u64;
        let reps = 1000;
        let mean = (0..reps)
            .map(|s| simulate_trace(&h, &[t], shots, s).unwrap().frequencies()[0])
            .sum::<f64>()
            / reps as f64;
        let sigma = (p * (1.0 - p) / (shots as f64 * reps as f64)).sqrt();
        assert!((mean - p).abs() <= 4.0 * sigma, "mean {mean} p {p} σ {sigma}");
    }

    #[test]
    fn merge_pools_counts() {
        let a = DataTrace::from_points(vec![TracePoint::new(1.0, 3, 10), TracePoint::new(2.0, 1, 4)]).unwrap();
        let b = DataTrace::from_points(vec![TracePoint::new(1.0, 5, 10), TracePoint::new(0.5, 0, 2)]).unwrap();
        let m = merge_traces(&a, &b);
        assert_eq!(m.times(), vec![0.5, 1.0, 2.0]);
        assert_eq!(m.points()[1], TracePoint::new(1.0, 8, 20));
        assert_eq!(m.total_shots(), a.total_shots() + b.total_shots());
        assert_eq!(merge_traces(&a, &DataTrace::empty()), a);
    }

    #[test]
    fn invalid_points_are_rejected() {
        assert!(DataTrace::from_points(vec![TracePoint::new(1.0, 11, 10)]).is_err());
        assert!(DataTrace::from_points(vec![TracePoint::new(1.0, 0, 0)]).is_err());
        assert!(DataTrace::from_points(vec![TracePoint::new(-1.0, 0, 1)]).is_err());
        assert!(simulate_trace(&reference_h(), &[1.0], 0, 0).is_err());
    }
}
