#ifndef MAGNON_GK_H
#define MAGNON_GK_H

/* Generated by cbindgen from magnon-gk-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  MGK_CHARGE_ZERO = 0,
  MGK_CHARGE_UNIFORM = 1,
  MGK_CHARGE_ALTERNATE = 2,
} MgkCharge;

typedef enum {
  MGK_ESTIMATOR_ENSEMBLE_FROM_ORIGIN = 0,
  MGK_ESTIMATOR_TIME_AVERAGE = 1,
} MgkEstimator;

/**
 * Status codes; one per library error kind plus ABI-level failures.
 */
typedef enum {
  MGK_STATUS_OK = 0,
  MGK_STATUS_INVALID_SPEC = 1,
  MGK_STATUS_INVALID_ARGUMENT = 2,
  MGK_STATUS_DIMENSION_MISMATCH = 3,
  MGK_STATUS_BACKEND_MISMATCH = 4,
  MGK_STATUS_CAP_EXCEEDED = 5,
  MGK_STATUS_QUADRATURE_FAILURE = 6,
  MGK_STATUS_COMPLEX_ROOTS = 7,
  MGK_STATUS_DEGENERATE = 8,
  MGK_STATUS_SINGULAR_SYSTEM = 9,
  MGK_STATUS_EMPTY_ENSEMBLE = 10,
  MGK_STATUS_LAG_EXCEEDS_HORIZON = 11,
  MGK_STATUS_IO = 12,
  MGK_STATUS_PARSE = 13,
  MGK_STATUS_TOLERANCE_EXCEEDED = 14,
  MGK_STATUS_NULL_POINTER = 15,
  MGK_STATUS_INVALID_UTF8 = 16,
  MGK_STATUS_PANIC = 17,
} MgkStatus;

typedef enum {
  MGK_VARIANT_ZERO = 0,
  MGK_VARIANT_I = 1,
  MGK_VARIANT_II = 2,
} MgkVariant;

/**
 * Opaque simulated ensemble.
 */
typedef struct MgkEnsemble MgkEnsemble;

/**
 * Opaque time series `(t, value, error)`; the error column is a standard
 * error for estimates and a quadrature error for closed forms.
 */
typedef struct MgkSeries MgkSeries;

/**
 * Opaque lattice description.
 */
typedef struct MgkSpec MgkSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *mgk_version(void);

/**
 * Message of the last failed call on this thread (empty after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *mgk_last_error_message(void);

/**
 * Frees a string returned by this library (e.g. a JSON report).
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mgk_string_free(char *s);

/**
 * Position-coordinate spec (uniform charge if `b != 0`, zero otherwise).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
MgkStatus mgk_spec_new_position(size_t d,
                                size_t dstar,
                                size_t n,
                                double b,
                                double gamma,
                                MgkSpec **out);

/**
 * Deformation-coordinate chain (`d = 1`, `d* = 2`).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
MgkStatus mgk_spec_new_deformation(size_t n,
                                   double b,
                                   double gamma,
                                   MgkCharge charge,
                                   MgkSpec **out);

/**
 * Number of lattice sites `N^d`.
 *
 * # Safety
 * `spec` must be a live handle.
 */
MgkStatus mgk_spec_sites(const MgkSpec *spec, size_t *out);

/**
 * # Safety
 * `spec` must be null or a live handle; it is invalid afterwards.
 */
void mgk_spec_free(MgkSpec *spec);

/**
 * Samples and simulates an ensemble described by a run-config JSON
 * (`spec`, `ensemble`, `n_traj`, `t_end`, `dt_out`, `seed`, optional
 * `backend` and `options`).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` writable.
 */
MgkStatus mgk_ensemble_run(const char *config_json, MgkEnsemble **out);

/**
 * Number of trajectories.
 *
 * # Safety
 * `ens` must be a live handle.
 */
MgkStatus mgk_ensemble_len(const MgkEnsemble *ens, size_t *out);

/**
 * Largest per-site continuity residual over all trajectories, or a
 * negative value if per-bond tracking was off.
 *
 * # Safety
 * `ens` must be a live handle.
 */
MgkStatus mgk_ensemble_continuity_residual(const MgkEnsemble *ens, double *out);

/**
 * # Safety
 * `ens` must be null or a live handle; it is invalid afterwards.
 */
void mgk_ensemble_free(MgkEnsemble *ens);

/**
 * Current autocorrelation on lags `0..=max_lag` output steps.
 *
 * # Safety
 * `ens` must be a live handle; `out` writable.
 */
MgkStatus mgk_ensemble_correlation(const MgkEnsemble *ens,
                                   MgkEstimator estimator,
                                   size_t direction,
                                   size_t max_lag,
                                   MgkSeries **out);

/**
 * Direct estimator of `κ^{a,b}(t)`; needs a run with current tracking.
 *
 * # Safety
 * `ens` must be a live handle; `out` writable.
 */
MgkStatus mgk_ensemble_kappa(const MgkEnsemble *ens, size_t a, size_t b, MgkSeries **out);

/**
 * Closed-form series at `times[0..len]`; `kind_json` follows the CLI
 * `closedform.kind` schema. `rel_tol <= 0` selects the default tolerance.
 *
 * # Safety
 * `kind_json` NUL-terminated; `times` readable for `len` values; `out` writable.
 */
MgkStatus mgk_closed_form_series(const char *kind_json,
                                 const double *times,
                                 size_t len,
                                 double b,
                                 double gamma,
                                 double rel_tol,
                                 MgkSeries **out);

/**
 * # Safety
 * `s` must be a live handle.
 */
MgkStatus mgk_series_len(const MgkSeries *s, size_t *out);

/**
 * Copies the three columns into caller buffers of `capacity` values each
 * (any buffer may be null to skip it). Fails if `capacity` is too small.
 *
 * # Safety
 * Non-null buffers must be writable for `capacity` values.
 */
MgkStatus mgk_series_copy(const MgkSeries *s,
                          double *times,
                          double *values,
                          double *errors,
                          size_t capacity);

/**
 * Log-log least-squares slope over `[t0, t1]`.
 *
 * # Safety
 * `s` must be a live handle; `slope`, `stderr` writable.
 */
MgkStatus mgk_series_fit_exponent(const MgkSeries *s,
                                  double t0,
                                  double t1,
                                  double *slope,
                                  double *stderr);

/**
 * # Safety
 * `s` must be null or a live handle; it is invalid afterwards.
 */
void mgk_series_free(MgkSeries *s);

/**
 * Closed-form canonical correlation `D^{(#)}(t)` with its quadrature error.
 *
 * # Safety
 * `value`, `error` writable.
 */
MgkStatus mgk_d_closed(double t,
                       MgkVariant variant,
                       double b,
                       double gamma,
                       double beta,
                       double rel_tol,
                       double *value,
                       double *error);

/**
 * Closed-form microcanonical Green–Kubo integral `κ(t)`.
 *
 * # Safety
 * `value`, `error` writable.
 */
MgkStatus mgk_kappa_closed_micro(double t,
                                 size_t d,
                                 size_t dstar,
                                 double b,
                                 double gamma,
                                 double rel_tol,
                                 double *value,
                                 double *error);

/**
 * Runs the resolvent certification matrix. `options_json` may be null for
 * the default matrix. Writes the JSON report (free with
 * [`mgk_string_free`]) and whether every case passed; a failing matrix is
 * not an error.
 *
 * # Safety
 * `options_json` null or NUL-terminated; `report_json`, `all_pass` writable.
 */
MgkStatus mgk_certify(const char *options_json, char **report_json, bool *all_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MAGNON_GK_H */
