//! The four-line closed form of `p11(t)` and the basis functions used to fit it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum::{bohr_frequencies, spectral_decompose, Hamiltonian3};

/// Number of basis functions of the split-line model.
pub const SPLIT_BASIS: usize = 4;
/// Number of basis functions of the single-frequency model `{1, cos ωt, cos 2ωt}`.
pub const SINGLE_BASIS: usize = 3;

/// `p11(t) = a0 + a1 cos((ω−Δω)t) + a2 cos((ω+Δω)t) + a3 cos(2ωt)`.
///
/// Amplitudes follow ascending eigenvalue order: `a1` belongs to the gap
/// `λ2 − λ1`, `a2` to `λ3 − λ2` and `a3` to `λ3 − λ1`. Fitted parameters need
/// not be physical; see [`SignalParams::is_physical`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub amplitudes: [f64; 4],
    pub omega: f64,
    pub delta_omega: f64,
}

impl SignalParams {
    pub fn frequencies(&self) -> [f64; 4] {
        [
            0.0,
            self.omega - self.delta_omega,
            self.omega + self.delta_omega,
            2.0 * self.omega,
        ]
    }

    pub fn eval(&self, t: f64) -> f64 {
        let f = self.frequencies();
        self.amplitudes[0]
            + (1..4)
                .map(|m| self.amplitudes[m] * (f[m] * t).cos())
                .sum::<f64>()
    }

    /// The same signal written with `Δω ≥ 0`: a negative splitting swaps the
    /// roles of `a1` and `a2`.
    pub fn canonical(&self) -> Self {
        if self.delta_omega >= 0.0 {
            return *self;
        }
        let [a0, a1, a2, a3] = self.amplitudes;
        SignalParams {
            amplitudes: [a0, a2, a1, a3],
            omega: self.omega,
            delta_omega: -self.delta_omega,
        }
    }

    /// Non-negative amplitudes summing to one within `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.amplitudes.iter().all(|&a| a >= -tol)
            && (self.amplitudes.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

pub fn eval_signal(sp: &SignalParams, t: f64) -> f64 {
    sp.eval(t)
}

/// Closed-form signal of a `d3 = 0` Hamiltonian.
///
/// With `c_k = |⟨1|E_k⟩|²`, `p11 = |Σ c_k e^{-iλ_k t}|²` expands to
/// `a0 = Σ c_k²`, `a1 = 2c1c2`, `a2 = 2c2c3`, `a3 = 2c1c3`. The splitting keeps
/// its sign (that of `δ`), so the map back to a Hamiltonian stays single-valued;
/// call [`SignalParams::canonical`] to compare with estimator output.
pub fn signal_from_hamiltonian(h: &Hamiltonian3) -> Result<SignalParams> {
    if h.params().d3 != 0.0 {
        return Err(Error::UnsupportedModel(format!(
            "the four-line signal requires d3 = 0, got {}",
            h.params().d3
        )));
    }
    let sd = spectral_decompose(h);
    let [c1, c2, c3] = sd.overlaps();
    let bf = bohr_frequencies(&sd);
    Ok(SignalParams {
        amplitudes: [
            c1 * c1 + c2 * c2 + c3 * c3,
            2.0 * c1 * c2,
            2.0 * c2 * c3,
            2.0 * c1 * c3,
        ],
        omega: bf.omega,
        delta_omega: bf.delta_omega,
    })
}

/// Basis functions evaluated at the sample times, `G[m, n] = g_m(t_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    frequencies: Vec<f64>,
    times: Vec<f64>,
    g: DMatrix<f64>,
}

impl DesignMatrix {
    fn from_frequencies(frequencies: Vec<f64>, times: &[f64]) -> Result<Self> {
        let m = frequencies.len();
        if times.len() < m {
            return Err(Error::InsufficientData {
                needed: m,
                got: times.len(),
            });
        }
        let g = DMatrix::from_fn(m, times.len(), |r, n| {
            if r == 0 {
                1.0
            } else {
                (frequencies[r] * times[n]).cos()
            }
        });
        Ok(DesignMatrix {
            frequencies,
            times: times.to_vec(),
            g,
        })
    }

    pub fn basis_count(&self) -> usize {
        self.g.nrows()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn row(&self, m: usize) -> Vec<f64> {
        self.g.row(m).iter().copied().collect()
    }
}

/// Rows `(1, cos((ω−Δω)t), cos((ω+Δω)t), cos(2ωt))`.
pub fn design_matrix(omega: f64, delta_omega: f64, times: &[f64]) -> Result<DesignMatrix> {
    DesignMatrix::from_frequencies(
        vec![0.0, omega - delta_omega, omega + delta_omega, 2.0 * omega],
        times,
    )
}

/// Rows `(1, cos(ωt), cos(2ωt))` of the unsplit model.
pub fn single_frequency_design(omega: f64, times: &[f64]) -> Result<DesignMatrix> {
    DesignMatrix::from_frequencies(vec![0.0, omega, 2.0 * omega], times)
}

/// One column of the split-line design matrix.
pub fn basis_column(omega: f64, delta_omega: f64, t: f64) -> [f64; 4] {
    [
        1.0,
        ((omega - delta_omega) * t).cos(),
        ((omega + delta_omega) * t).cos(),
        (2.0 * omega * t).cos(),
    ]
}
