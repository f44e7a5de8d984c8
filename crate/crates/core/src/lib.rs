//! Hamiltonian characterization of a qubit embedded in a three-level manifold.
//!
//! The only experimental resources assumed are preparation of the ground state
//! `|1⟩`, free evolution for a chosen time, and a projective measurement in the
//! same basis. From the resulting population trace `p11(t)` the couplings
//! `d1`, `d2` and the detuning `δ` of
//!
//! ```text
//!     ⎡ 0   d1  d3 ⎤
//! H = ⎢ d1  0   d2 ⎥
//!     ⎣ d3  d2  δ  ⎦
//! ```
//!
//! are recovered either in two steps (Bayesian spectral estimation of the
//! four-line signal followed by algebraic reconstruction) or directly by
//! maximum likelihood over `(Ω, α, ε)`. An adaptive loop chooses new sampling
//! times from the current estimate.

pub mod adaptive;
pub mod campaign;
pub mod direct;
pub mod error;
pub mod io;
pub mod measurement;
pub mod optim;
pub mod quantum;
pub mod reconstruct;
pub mod seed;
pub mod signal;
pub mod spectral;

pub use error::{Error, Result};
pub use measurement::{DataTrace, TracePoint};
pub use quantum::{
    bohr_frequencies, build_hamiltonian, couplings_to_polar, polar_to_couplings,
    spectral_decompose, transition_probability, BohrFrequencies, CouplingParams, Hamiltonian3,
    PolarParams, SpectralDecomposition,
};
pub use signal::{eval_signal, signal_from_hamiltonian, SignalParams};
