#ifndef CHARACTERIZER_H
#define CHARACTERIZER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ChzStatus {
  CHZ_STATUS_OK = 0,
  CHZ_STATUS_NULL_POINTER = 1,
  CHZ_STATUS_INVALID_ARGUMENT = 2,
  CHZ_STATUS_INSUFFICIENT_DATA = 3,
  /**
   * Singular basis or no finite likelihood.
   */
  CHZ_STATUS_DEGENERATE = 4,
  /**
   * The fitted signal admits no Hamiltonian; the result is flagged, not filled.
   */
  CHZ_STATUS_UNPHYSICAL = 5,
  CHZ_STATUS_IO = 6,
  CHZ_STATUS_PARSE = 7,
  CHZ_STATUS_PANIC = 8,
} ChzStatus;

/**
 * Opaque measurement trace.
 */
typedef struct ChzTrace ChzTrace;

/**
 * Couplings and detuning of `H = [[0, d1, d3], [d1, 0, d2], [d3, d2, δ]]`.
 */
typedef struct ChzCouplings {
  double d1;
  double d2;
  double d3;
  double delta;
} ChzCouplings;

/**
 * `d1 = Ω cos α`, `d2 = Ω sin α`, `δ = 4ε`.
 */
typedef struct ChzPolar {
  double omega_cap;
  double alpha;
  double epsilon;
} ChzPolar;

typedef struct ChzSpectralEstimate {
  double omega;
  double delta_omega;
  double amplitudes[4];
  /**
   * `log10` likelihood at the estimate.
   */
  double log_likelihood;
  bool saturated;
} ChzSpectralEstimate;

typedef struct ChzReconstruction {
  /**
   * Zeroed when `physical` is false.
   */
  struct ChzCouplings couplings;
  bool physical;
  double residual;
} ChzReconstruction;

typedef struct ChzDirectEstimate {
  struct ChzPolar polar;
  struct ChzCouplings couplings;
  double log_likelihood;
  bool converged;
} ChzDirectEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *chz_last_error(void);

/**
 * `|⟨k|e^{−iHt}|l⟩|²` for levels `k, l ∈ {1, 2, 3}`.
 *
 * # Safety
 * `h` and `out_p` must be valid pointers or null.
 */
enum ChzStatus chz_transition_probability(const struct ChzCouplings *h,
                                          size_t k,
                                          size_t l,
                                          double t,
                                          double *out_p);

/**
 * # Safety
 * `p` and `out_c` must be valid pointers or null.
 */
enum ChzStatus chz_polar_to_couplings(const struct ChzPolar *p, struct ChzCouplings *out_c);

/**
 * Relative Frobenius distance `‖H_est − H_true‖ / ‖H_true‖`.
 *
 * # Safety
 * All pointers must be valid or null.
 */
enum ChzStatus chz_relative_error(const struct ChzCouplings *estimate,
                                  const struct ChzCouplings *truth,
                                  double *out_e);

/**
 * Binomial measurement record of `shots` repetitions at each of `n` times.
 *
 * # Safety
 * `times` must point to `n` doubles; `h` and `out_trace` must be valid.
 */
enum ChzStatus chz_trace_simulate(const struct ChzCouplings *h,
                                  const double *times,
                                  size_t n,
                                  uint64_t shots,
                                  uint64_t seed,
                                  struct ChzTrace **out_trace);

/**
 * Trace from measured counts; coincident times are pooled.
 *
 * # Safety
 * The three arrays must each hold `n` elements.
 */
enum ChzStatus chz_trace_from_counts(const double *times,
                                     const uint64_t *successes,
                                     const uint64_t *shots,
                                     size_t n,
                                     struct ChzTrace **out_trace);

/**
 * # Safety
 * `file` must be a NUL-terminated string; `out_trace` must be valid.
 */
enum ChzStatus chz_trace_load(const char *file, struct ChzTrace **out_trace);

/**
 * # Safety
 * `trace` must come from this library; `file` must be NUL-terminated.
 */
enum ChzStatus chz_trace_save(const struct ChzTrace *trace, const char *file);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `trace` must come from this library or be null.
 */
size_t chz_trace_len(const struct ChzTrace *trace);

/**
 * # Safety
 * `trace` must come from this library; the out-pointers must be valid.
 */
enum ChzStatus chz_trace_point(const struct ChzTrace *trace,
                               size_t index,
                               double *out_t,
                               uint64_t *out_successes,
                               uint64_t *out_shots);

/**
 * # Safety
 * `trace` must come from this library and not be used afterwards.
 */
void chz_trace_free(struct ChzTrace *trace);

/**
 * Split-line spectral estimate with default grid settings.
 *
 * # Safety
 * `trace` must come from this library; `out_est` must be valid.
 */
enum ChzStatus chz_estimate_spectral(const struct ChzTrace *trace,
                                     struct ChzSpectralEstimate *out_est);

/**
 * Hamiltonian from a spectral estimate. Returns `Unphysical` (with
 * `physical = false` written to `out_rec`) when none exists.
 *
 * # Safety
 * `est` and `out_rec` must be valid.
 */
enum ChzStatus chz_reconstruct(const struct ChzSpectralEstimate *est,
                               struct ChzReconstruction *out_rec);

/**
 * Direct maximum likelihood over `(Ω, α, ε)` with default grid and refinement.
 *
 * # Safety
 * `trace` must come from this library; `out_est` must be valid.
 */
enum ChzStatus chz_estimate_direct(const struct ChzTrace *trace, struct ChzDirectEstimate *out_est);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CHARACTERIZER_H */
