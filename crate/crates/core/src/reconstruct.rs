//! Inversion of fitted signal parameters into a Hamiltonian with `d3 = 0`.
//!
//! With overlaps `c_k` and eigenvalues `λ_k`, the structural zero in the
//! `(1,1)` entry gives `Σ c_k λ_k = 0`, which fixes the otherwise unobservable
//! energy offset. Then `δ = Σ λ_k`, `d1² = Σ c_k λ_k²` and
//! `d1² + d2² = −(λ1λ2 + λ1λ3 + λ2λ3)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SignalParams;
use crate::spectral::Estimate;
use crate::quantum::CouplingParams;

/// Radicands in `[−RADICAND_TOLERANCE, 0)` are treated as rounding and clamped to zero.
pub const RADICAND_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnphysicalReason {
    /// One of `a1, a2, a3` is not positive, so an overlap cannot be solved for.
    MissingLine,
    /// `d1²` or `d2²` came out negative.
    NegativeRadicand,
    /// `ω − Δω` or `ω + Δω` is negative.
    NegativeGap,
    NonFinite,
}

impl fmt::Display for UnphysicalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnphysicalReason::MissingLine => "missing-line",
            UnphysicalReason::NegativeRadicand => "negative-radicand",
            UnphysicalReason::NegativeGap => "negative-gap",
            UnphysicalReason::NonFinite => "non-finite",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum Validity {
    Physical,
    Unphysical(UnphysicalReason),
}

impl Validity {
    pub fn is_physical(&self) -> bool {
        matches!(self, Validity::Physical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapFit {
    /// Normalized overlaps `(c1, c2, c3)`.
    pub overlaps: [f64; 3],
    /// `|a0 − Σ c_k²| + |1 − Σ c_k|`, the second term before normalization.
    pub residual: f64,
}

/// Solves `a1 = 2c1c2`, `a2 = 2c2c3`, `a3 = 2c1c3` for the overlaps.
pub fn amplitudes_to_overlaps(sp: &SignalParams) -> Result<OverlapFit, UnphysicalReason> {
    let [a0, a1, a2, a3] = sp.amplitudes;
    if sp.amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(UnphysicalReason::NonFinite);
    }
    if !(a1 > 0.0 && a2 > 0.0 && a3 > 0.0) {
        return Err(UnphysicalReason::MissingLine);
    }
    let raw = [
        (a1 * a3 / (2.0 * a2)).sqrt(),
        (a1 * a2 / (2.0 * a3)).sqrt(),
        (a2 * a3 / (2.0 * a1)).sqrt(),
    ];
    let total: f64 = raw.iter().sum();
    if !total.is_finite() {
        return Err(UnphysicalReason::NonFinite);
    }
    let overlaps = raw.map(|c| c / total);
    let sum_sq: f64 = overlaps.iter().map(|c| c * c).sum();
    Ok(OverlapFit {
        overlaps,
        residual: (a0 - sum_sq).abs() + (1.0 - total).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub hamiltonian: Option<CouplingParams>,
    pub overlaps: Option<[f64; 3]>,
    pub eigenvalues: Option<[f64; 3]>,
    pub residual: f64,
    pub validity: Validity,
}

impl ReconstructionResult {
    fn unphysical(reason: UnphysicalReason, overlaps: Option<[f64; 3]>, residual: f64) -> Self {
        ReconstructionResult {
            hamiltonian: None,
            overlaps,
            eigenvalues: None,
            residual,
            validity: Validity::Unphysical(reason),
        }
    }

    pub fn is_physical(&self) -> bool {
        self.validity.is_physical()
    }
}

fn clamp_radicand(r: f64) -> Option<f64> {
    if r >= 0.0 {
        Some(r)
    } else if r >= -RADICAND_TOLERANCE {
        Some(0.0)
    } else {
        None
    }
}

/// Builds the Hamiltonian reproducing `sp`; a negative `Δω` means `λ2` lies
/// above the midpoint of the spectrum.
pub fn reconstruct_from_signal(sp: &SignalParams) -> ReconstructionResult {
    let fit = match amplitudes_to_overlaps(sp) {
        Ok(f) => f,
        Err(reason) => return ReconstructionResult::unphysical(reason, None, f64::INFINITY),
    };
    let [c1, c2, c3] = fit.overlaps;
    let w12 = sp.omega - sp.delta_omega;
    let w23 = sp.omega + sp.delta_omega;
    if !(w12.is_finite() && w23.is_finite()) {
        return ReconstructionResult::unphysical(UnphysicalReason::NonFinite, Some(fit.overlaps), fit.residual);
    }
    if w12 < 0.0 || w23 < 0.0 {
        return ReconstructionResult::unphysical(UnphysicalReason::NegativeGap, Some(fit.overlaps), fit.residual);
    }
    // Σ c_k λ_k = 0 with Σ c_k = 1
    let mu = -(c2 * w12 + c3 * (w12 + w23));
    let lam = [mu, mu + w12, mu + w12 + w23];
    let delta = lam.iter().sum::<f64>();
    let d1_sq = c1 * lam[0] * lam[0] + c2 * lam[1] * lam[1] + c3 * lam[2] * lam[2];
    let e2 = lam[0] * lam[1] + lam[0] * lam[2] + lam[1] * lam[2];
    let radicands = clamp_radicand(d1_sq).and_then(|d1| clamp_radicand(-e2 - d1).map(|d2| (d1, d2)));
    let Some((d1_sq, d2_sq)) = radicands else {
        return ReconstructionResult::unphysical(UnphysicalReason::NegativeRadicand, Some(fit.overlaps), fit.residual);
    };
    ReconstructionResult {
        hamiltonian: Some(CouplingParams {
            d1: d1_sq.sqrt(),
            d2: d2_sq.sqrt(),
            d3: 0.0,
            delta,
        }),
        overlaps: Some(fit.overlaps),
        eigenvalues: Some(lam),
        residual: fit.residual,
        validity: Validity::Physical,
    }
}

pub fn reconstruct_hamiltonian(est: &Estimate) -> ReconstructionResult {
    reconstruct_from_signal(&est.signal())
}

/// `‖H_est − H_true‖_F / ‖H_true‖_F` over the full 3×3 matrices.
pub fn relative_error(estimate: &CouplingParams, truth: &CouplingParams) -> Result<f64> {
    let norm = truth.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    let (a, b) = (estimate.matrix(), truth.matrix());
    let diff: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).powi(2))
        .sum();
    Ok(diff.sqrt() / norm)
}

/// JSON form of a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub delta: Option<f64>,
    pub valid: bool,
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<UnphysicalReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

impl ReconstructionReport {
    pub fn new(result: &ReconstructionResult, truth: Option<&CouplingParams>) -> Self {
        let h = result.hamiltonian;
        ReconstructionReport {
            d1: h.map(|h| h.d1),
            d2: h.map(|h| h.d2),
            delta: h.map(|h| h.delta),
            valid: result.is_physical(),
            // JSON has no infinity
            residual: if result.residual.is_finite() { result.residual } else { -1.0 },
            reason: match result.validity {
                Validity::Physical => None,
                Validity::Unphysical(r) => Some(r),
            },
            relative_error: h.zip(truth).and_then(|(h, t)| relative_error(&h, t).ok()),
        }
    }
}
