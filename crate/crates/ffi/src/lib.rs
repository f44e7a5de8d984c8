//! C ABI for `characterizer`.
//!
//! Every fallible function returns a [`ChzStatus`] and writes results through
//! out-pointers. On failure a message is kept per thread and can be read with
//! [`chz_last_error`]. Traces are opaque [`ChzTrace`] handles released with
//! [`chz_trace_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use characterizer::direct::{estimate_direct, Grid3Spec, RefineConfig};
use characterizer::io;
use characterizer::measurement::simulate_trace;
use characterizer::reconstruct::{reconstruct_from_signal, relative_error};
use characterizer::spectral::{estimate_spectral, SpectralConfig};
use characterizer::{
    build_hamiltonian, polar_to_couplings, transition_probability, CouplingParams, DataTrace, Error, PolarParams,
    SignalParams, TracePoint,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    /// Singular basis or no finite likelihood.
    Degenerate = 4,
    /// The fitted signal admits no Hamiltonian; the result is flagged, not filled.
    Unphysical = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

/// Couplings and detuning of `H = [[0, d1, d3], [d1, 0, d2], [d3, d2, δ]]`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChzCouplings {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub delta: f64,
}

/// `d1 = Ω cos α`, `d2 = Ω sin α`, `δ = 4ε`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChzPolar {
    pub omega_cap: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChzSpectralEstimate {
    pub omega: f64,
    pub delta_omega: f64,
    pub amplitudes: [f64; 4],
    /// `log10` likelihood at the estimate.
    pub log_likelihood: f64,
    pub saturated: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChzReconstruction {
    /// Zeroed when `physical` is false.
    pub couplings: ChzCouplings,
    pub physical: bool,
    pub residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChzDirectEstimate {
    pub polar: ChzPolar,
    pub couplings: ChzCouplings,
    pub log_likelihood: f64,
    pub converged: bool,
}

/// Opaque measurement trace.
pub struct ChzTrace(DataTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ChzStatus {
    match e {
        Error::InsufficientData { .. } => ChzStatus::InsufficientData,
        Error::DegenerateBasis { .. } | Error::AllDegenerate | Error::EmptyGrid => ChzStatus::Degenerate,
        Error::Io { .. } => ChzStatus::Io,
        Error::Parse { .. } | Error::Json { .. } => ChzStatus::Parse,
        _ => ChzStatus::InvalidArgument,
    }
}

struct Fail(ChzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ChzStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ChzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ChzStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ChzStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ChzStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

impl From<ChzCouplings> for CouplingParams {
    fn from(c: ChzCouplings) -> Self {
        CouplingParams { d1: c.d1, d2: c.d2, d3: c.d3, delta: c.delta }
    }
}

impl From<CouplingParams> for ChzCouplings {
    fn from(c: CouplingParams) -> Self {
        ChzCouplings { d1: c.d1, d2: c.d2, d3: c.d3, delta: c.delta }
    }
}

impl From<PolarParams> for ChzPolar {
    fn from(p: PolarParams) -> Self {
        ChzPolar { omega_cap: p.omega_cap, alpha: p.alpha, epsilon: p.epsilon }
    }
}

fn into_handle(trace: DataTrace, dst: &mut *mut ChzTrace) {
    *dst = Box::into_raw(Box::new(ChzTrace(trace)));
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn chz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// `|⟨k|e^{−iHt}|l⟩|²` for levels `k, l ∈ {1, 2, 3}`.
///
/// # Safety
/// `h` and `out_p` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn chz_transition_probability(
    h: *const ChzCouplings,
    k: usize,
    l: usize,
    t: f64,
    out_p: *mut f64,
) -> ChzStatus {
    guard(|| {
        let h = build_hamiltonian(&(*deref(h, "h")?).into())?;
        *out(out_p, "out_p")? = transition_probability(&h, k, l, t)?;
        Ok(())
    })
}

/// # Safety
/// `p` and `out_c` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn chz_polar_to_couplings(p: *const ChzPolar, out_c: *mut ChzCouplings) -> ChzStatus {
    guard(|| {
        let p = deref(p, "p")?;
        let c = polar_to_couplings(&PolarParams::new(p.omega_cap, p.alpha, p.epsilon)?)?;
        *out(out_c, "out_c")? = c.into();
        Ok(())
    })
}

/// Relative Frobenius distance `‖H_est − H_true‖ / ‖H_true‖`.
///
/// # Safety
/// All pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn chz_relative_error(
    estimate: *const ChzCouplings,
    truth: *const ChzCouplings,
    out_e: *mut f64,
) -> ChzStatus {
    guard(|| {
        let e = relative_error(&(*deref(estimate, "estimate")?).into(), &(*deref(truth, "truth")?).into())?;
        *out(out_e, "out_e")? = e;
        Ok(())
    })
}

/// Binomial measurement record of `shots` repetitions at each of `n` times.
///
/// # Safety
/// `times` must point to `n` doubles; `h` and `out_trace` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_simulate(
    h: *const ChzCouplings,
    times: *const f64,
    n: usize,
    shots: u64,
    seed: u64,
    out_trace: *mut *mut ChzTrace,
) -> ChzStatus {
    guard(|| {
        let h = build_hamiltonian(&(*deref(h, "h")?).into())?;
        let times = slice(times, n, "times")?;
        let dst = out(out_trace, "out_trace")?;
        into_handle(simulate_trace(&h, times, shots, seed)?, dst);
        Ok(())
    })
}

/// Trace from measured counts; coincident times are pooled.
///
/// # Safety
/// The three arrays must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_from_counts(
    times: *const f64,
    successes: *const u64,
    shots: *const u64,
    n: usize,
    out_trace: *mut *mut ChzTrace,
) -> ChzStatus {
    guard(|| {
        let (t, s, m) = (slice(times, n, "times")?, slice(successes, n, "successes")?, slice(shots, n, "shots")?);
        let points = (0..n).map(|i| TracePoint::new(t[i], s[i], m[i])).collect();
        let dst = out(out_trace, "out_trace")?;
        into_handle(DataTrace::from_points(points)?, dst);
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated string; `out_trace` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_load(file: *const c_char, out_trace: *mut *mut ChzTrace) -> ChzStatus {
    guard(|| {
        let p = path(file)?;
        let dst = out(out_trace, "out_trace")?;
        into_handle(io::load_trace(p)?, dst);
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library; `file` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_save(trace: *const ChzTrace, file: *const c_char) -> ChzStatus {
    guard(|| {
        io::save_trace(&deref(trace, "trace")?.0, path(file)?)?;
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `trace` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_len(trace: *const ChzTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `trace` must come from this library; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_point(
    trace: *const ChzTrace,
    index: usize,
    out_t: *mut f64,
    out_successes: *mut u64,
    out_shots: *mut u64,
) -> ChzStatus {
    guard(|| {
        let tr = &deref(trace, "trace")?.0;
        let p = tr.points().get(index).ok_or_else(|| {
            Fail(ChzStatus::InvalidArgument, format!("index {index} out of range for {} points", tr.len()))
        })?;
        *out(out_t, "out_t")? = p.time();
        *out(out_successes, "out_successes")? = p.successes;
        *out(out_shots, "out_shots")? = p.shots;
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn chz_trace_free(trace: *mut ChzTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Split-line spectral estimate with default grid settings.
///
/// # Safety
/// `trace` must come from this library; `out_est` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_estimate_spectral(trace: *const ChzTrace, out_est: *mut ChzSpectralEstimate) -> ChzStatus {
    guard(|| {
        let (e, _) = estimate_spectral(&deref(trace, "trace")?.0, &SpectralConfig::default())?;
        *out(out_est, "out_est")? = ChzSpectralEstimate {
            omega: e.omega,
            delta_omega: e.delta_omega,
            amplitudes: e.amplitudes,
            log_likelihood: e.log_likelihood,
            saturated: e.saturated,
        };
        Ok(())
    })
}

/// Hamiltonian from a spectral estimate. Returns `Unphysical` (with
/// `physical = false` written to `out_rec`) when none exists.
///
/// # Safety
/// `est` and `out_rec` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_reconstruct(est: *const ChzSpectralEstimate, out_rec: *mut ChzReconstruction) -> ChzStatus {
    guard(|| {
        let e = deref(est, "est")?;
        let dst = out(out_rec, "out_rec")?;
        let r = reconstruct_from_signal(&SignalParams {
            amplitudes: e.amplitudes,
            omega: e.omega,
            delta_omega: e.delta_omega,
        });
        *dst = ChzReconstruction {
            couplings: r.hamiltonian.map_or(ChzCouplings { d1: 0.0, d2: 0.0, d3: 0.0, delta: 0.0 }, Into::into),
            physical: r.is_physical(),
            residual: r.residual,
        };
        if r.is_physical() {
            Ok(())
        } else {
            Err(Fail(ChzStatus::Unphysical, format!("unphysical reconstruction: {:?}", r.validity)))
        }
    })
}

/// Direct maximum likelihood over `(Ω, α, ε)` with default grid and refinement.
///
/// # Safety
/// `trace` must come from this library; `out_est` must be valid.
#[no_mangle]
pub unsafe extern "C" fn chz_estimate_direct(trace: *const ChzTrace, out_est: *mut ChzDirectEstimate) -> ChzStatus {
    guard(|| {
        let (d, _) = estimate_direct(&deref(trace, "trace")?.0, &Grid3Spec::default(), &RefineConfig::default())?;
        *out(out_est, "out_est")? = ChzDirectEstimate {
            polar: d.polar.into(),
            couplings: polar_to_couplings(&d.polar)?.into(),
            log_likelihood: d.log_likelihood,
            converged: d.converged,
        };
        Ok(())
    })
}
