//! The three-level model: couplings, the rotating-frame Hamiltonian, its
//! eigen-decomposition and the resulting transition probabilities.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Couplings and detuning of the rotating-frame Hamiltonian.
///
/// `d1` drives the qubit transition `1–2`, `d2` leaks into the nuisance level
/// `3`, and `d3` is the two-photon `1–3` term, normally zero. All couplings are
/// non-negative in the chosen frame; `delta` may have either sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub d1: f64,
    pub d2: f64,
    #[serde(default)]
    pub d3: f64,
    pub delta: f64,
}

impl CouplingParams {
    pub fn new(d1: f64, d2: f64, d3: f64, delta: f64) -> Result<Self> {
        let p = CouplingParams { d1, d2, d3, delta };
        p.validate()?;
        Ok(p)
    }

    /// The estimator model, `d3 = 0`.
    pub fn embedded_qubit(d1: f64, d2: f64, delta: f64) -> Result<Self> {
        Self::new(d1, d2, 0.0, delta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("d1", self.d1), ("d2", self.d2), ("d3", self.d3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "coupling {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.delta.is_finite() {
            return Err(Error::invalid(format!(
                "detuning must be finite, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [
            [0.0, self.d1, self.d3],
            [self.d1, 0.0, self.d2],
            [self.d3, self.d2, self.delta],
        ]
    }

    /// Frobenius norm of [`CouplingParams::matrix`].
    pub fn frobenius_norm(&self) -> f64 {
        (2.0 * (self.d1 * self.d1 + self.d2 * self.d2 + self.d3 * self.d3)
            + self.delta * self.delta)
            .sqrt()
    }
}

/// Polar parameterization used by the direct likelihood:
/// `d1 = Ω cos α`, `d2 = Ω sin α`, `δ = 4ε`, `d3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarParams {
    pub omega_cap: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl PolarParams {
    pub fn new(omega_cap: f64, alpha: f64, epsilon: f64) -> Result<Self> {
        let p = PolarParams {
            omega_cap,
            alpha,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega_cap.is_finite() || self.omega_cap < 0.0 {
            return Err(Error::invalid(format!(
                "Ω must be finite and non-negative, got {}",
                self.omega_cap
            )));
        }
        if !(0.0..=FRAC_PI_2).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "α must lie in [0, π/2], got {}",
                self.alpha
            )));
        }
        if !self.epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "ε must be finite, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.omega_cap, self.alpha, self.epsilon]
    }
}

pub fn polar_to_couplings(p: &PolarParams) -> Result<CouplingParams> {
    p.validate()?;
    Ok(CouplingParams {
        d1: (p.omega_cap * p.alpha.cos()).max(0.0),
        d2: (p.omega_cap * p.alpha.sin()).max(0.0),
        d3: 0.0,
        delta: 4.0 * p.epsilon,
    })
}

/// Inverse of [`polar_to_couplings`]; requires `d3 = 0`.
pub fn couplings_to_polar(c: &CouplingParams) -> Result<PolarParams> {
    c.validate()?;
    if c.d3 != 0.0 {
        return Err(Error::UnsupportedModel(format!(
            "polar form requires d3 = 0, got {}",
            c.d3
        )));
    }
    Ok(PolarParams {
        omega_cap: c.d1.hypot(c.d2),
        alpha: c.d2.atan2(c.d1),
        epsilon: c.delta / 4.0,
    })
}

/// The real symmetric rotating-frame Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hamiltonian3 {
    params: CouplingParams,
}

impl Hamiltonian3 {
    pub fn params(&self) -> &CouplingParams {
        &self.params
    }

    pub fn entries(&self) -> [[f64; 3]; 3] {
        self.params.matrix()
    }

    fn to_matrix(self) -> Matrix3<f64> {
        let m = self.entries();
        Matrix3::from_fn(|i, j| m[i][j])
    }
}

pub fn build_hamiltonian(params: &CouplingParams) -> Result<Hamiltonian3> {
    params.validate()?;
    Ok(Hamiltonian3 { params: *params })
}

/// Eigenvalues in ascending order with their (real, unit) eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: [f64; 3],
    /// `vectors[i][k]` is component `i` of eigenvector `k`.
    vectors: [[f64; 3]; 3],
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> [f64; 3] {
        self.eigenvalues
    }

    pub fn eigenvector(&self, k: usize) -> [f64; 3] {
        [self.vectors[0][k], self.vectors[1][k], self.vectors[2][k]]
    }

    /// Ground-state overlaps `c_k = |⟨1|E_k⟩|²`.
    pub fn overlaps(&self) -> [f64; 3] {
        let v = &self.vectors[0];
        [v[0] * v[0], v[1] * v[1], v[2] * v[2]]
    }

    /// `|⟨k|e^{-iHt}|l⟩|²` for zero-based level indices.
    fn probability0(&self, k: usize, l: usize, t: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for j in 0..3 {
            let w = self.vectors[k][j] * self.vectors[l][j];
            let (s, c) = (self.eigenvalues[j] * t).sin_cos();
            re += w * c;
            im -= w * s;
        }
        (re * re + im * im).clamp(0.0, 1.0)
    }

    /// Ground-state survival probability `p11(t)`.
    pub fn survival(&self, t: f64) -> f64 {
        self.probability0(0, 0, t)
    }

    pub fn probability(&self, k: usize, l: usize, t: f64) -> Result<f64> {
        let k0 = level_index(k)?;
        let l0 = level_index(l)?;
        Ok(self.probability0(k0, l0, t))
    }

    /// `Σ_k λ_k v_k v_kᵀ`.
    pub fn reconstruct(&self) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (0..3)
                    .map(|k| self.eigenvalues[k] * self.vectors[i][k] * self.vectors[j][k])
                    .sum();
            }
        }
        m
    }
}

fn level_index(k: usize) -> Result<usize> {
    match k {
        1..=3 => Ok(k - 1),
        _ => Err(Error::InvalidLevel(k)),
    }
}

pub fn spectral_decompose(h: &Hamiltonian3) -> SpectralDecomposition {
    let eig = SymmetricEigen::new(h.to_matrix());
    let mut order = [0usize, 1, 2];
    // stable sort: equal eigenvalues keep the solver's index order
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut eigenvalues = [0.0; 3];
    let mut vectors = [[0.0; 3]; 3];
    for (k, &src) in order.iter().enumerate() {
        eigenvalues[k] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        // fix the sign so that the first non-negligible component is positive
        let pivot = col.iter().copied().find(|x| x.abs() > 1e-14).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..3 {
            vectors[i][k] = sign * col[i];
        }
    }
    SpectralDecomposition {
        eigenvalues,
        vectors,
    }
}

/// `p_kl(t) = |⟨k|e^{-iHt}|l⟩|²` with one-based level indices.
pub fn transition_probability(h: &Hamiltonian3, k: usize, l: usize, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("time must be finite and non-negative, got {t}")));
    }
    spectral_decompose(h).probability(k, l, t)
}

/// Centre frequency `ω = (λ3 − λ1)/2` and signed splitting
/// `Δω = (λ3 − 2λ2 + λ1)/2`, so that `λ2 − λ1 = ω − Δω` and `λ3 − λ2 = ω + Δω`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BohrFrequencies {
    pub omega: f64,
    pub delta_omega: f64,
}

impl BohrFrequencies {
    /// Folds the sign of `Δω`; the estimators work with `Δω ≥ 0`.
    pub fn canonical(self) -> Self {
        BohrFrequencies {
            omega: self.omega,
            delta_omega: self.delta_omega.abs(),
        }
    }
}

pub fn bohr_frequencies(sd: &SpectralDecomposition) -> BohrFrequencies {
    let [l1, l2, l3] = sd.eigenvalues;
    BohrFrequencies {
        omega: (l3 - l1) / 2.0,
        delta_omega: (l3 - 2.0 * l2 + l1) / 2.0,
    }
}
