#ifndef OTSIEVE_H
#define OTSIEVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every exported function.
typedef enum OtsStatus {
  OTS_STATUS_OK = 0,
  // Bad argument or configuration.
  OTS_STATUS_INVALID_ARGUMENT = 1,
  // Malformed or non-finite data.
  OTS_STATUS_DATA = 2,
  // Singular system, non-convergence or other numerical failure.
  OTS_STATUS_NUMERICAL = 3,
  OTS_STATUS_NULL_POINTER = 4,
  // A Rust panic was caught at the boundary.
  OTS_STATUS_PANIC = 5,
  // The requested quantity does not exist for this object.
  OTS_STATUS_UNAVAILABLE = 6,
} OtsStatus;

// Optimal assignment with dual potentials.
typedef struct OtsCoupling OtsCoupling;

// Fitted sieve estimator.
typedef struct OtsReport OtsReport;

// Matched sample `(wage, x, y)`.
typedef struct OtsSample OtsSample;

// Mardia statistics for one data matrix.
typedef struct OtsMardia {
  double b1;
  double b2;
  double skew_stat;
  double skew_df;
  double skew_p;
  double kurt_stat;
  double kurt_p;
} OtsMardia;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread ("" after a success).
// The pointer stays valid until the next call on the same thread.
const char *ots_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ots_version(void);

// Solves the n x n assignment maximising total surplus (row-major `surplus`).
//
// # Safety
// `surplus` must point to `n * n` doubles and `out` to writable storage.
enum OtsStatus ots_solve_assignment(const double *surplus, size_t n, struct OtsCoupling **out);

// Builds `s(x, y) = x'Ay + x'b` for `n` workers and jobs of dimension `d`
// (row-major `n x d` clouds, `d x d` matrix `a`) and solves the assignment.
//
// # Safety
// All pointers must reference arrays of the stated sizes.
enum OtsStatus ots_solve_bilinear(const double *workers,
                                  const double *jobs,
                                  size_t n,
                                  size_t d,
                                  const double *a,
                                  const double *b,
                                  struct OtsCoupling **out);

// Number of matched pairs.
//
// # Safety
// `c` must be a live handle.
enum OtsStatus ots_coupling_len(const struct OtsCoupling *c, size_t *out);

// Job index matched to each worker; `out` holds `len` entries.
//
// # Safety
// `c` must be a live handle and `out` writable for `len` entries.
enum OtsStatus ots_coupling_assignment(const struct OtsCoupling *c, size_t *out, size_t len);

// Worker potentials (wages); `out` holds `len` entries.
//
// # Safety
// `c` must be a live handle and `out` writable for `len` entries.
enum OtsStatus ots_coupling_worker_duals(const struct OtsCoupling *c, double *out, size_t len);

// Job potentials (profits); `out` holds `len` entries.
//
// # Safety
// `c` must be a live handle and `out` writable for `len` entries.
enum OtsStatus ots_coupling_firm_duals(const struct OtsCoupling *c, double *out, size_t len);

// # Safety
// `c` must be a live handle.
enum OtsStatus ots_coupling_total_surplus(const struct OtsCoupling *c, double *out);

// # Safety
// `c` must come from this library and not be used afterwards. Null is ignored.
void ots_coupling_free(struct OtsCoupling *c);

// Closed-form Gaussian assignment matrix, row-major into `out[4]`.
//
// # Safety
// `out` must be writable for 4 doubles.
enum OtsStatus ots_closed_form_j(double rho_x, double rho_y, double delta, double *out);

// Copies `n` observations: `wage[n]`, `x[n*2]`, `y[n*2]`.
//
// # Safety
// Pointers must reference arrays of the stated sizes.
enum OtsStatus ots_sample_new(const double *wage,
                              const double *x,
                              const double *y,
                              size_t n,
                              struct OtsSample **out);

// # Safety
// `s` must come from this library and not be used afterwards. Null is ignored.
void ots_sample_free(struct OtsSample *s);

// Fits a sieve estimator with tensor degrees `(k_c, k_m)`; `estimator`
// takes an [`OtsEstimator`] value.
//
// # Safety
// `sample` must be a live handle and `out` writable.
enum OtsStatus ots_estimate(const struct OtsSample *sample,
                            int32_t estimator,
                            size_t k_c,
                            size_t k_m,
                            bool convexity,
                            struct OtsReport **out);

// `(alpha_CC, alpha_MM, beta_C, beta_M)` into `out[4]`.
//
// # Safety
// `r` must be a live handle and `out` writable for 4 doubles.
enum OtsStatus ots_report_params(const struct OtsReport *r, double *out);

// Standard errors of `(alpha_CC, alpha_MM, beta_C, beta_M)`; `UNAVAILABLE`
// when the fit reports none (boundary or singular bread).
//
// # Safety
// `r` must be a live handle and `out` writable for 4 doubles.
enum OtsStatus ots_report_std_errors(const struct OtsReport *r, double *out);

// # Safety
// `r` must be a live handle.
enum OtsStatus ots_report_objective(const struct OtsReport *r, double *out);

// Full report as a JSON string; release it with [`ots_string_free`].
//
// # Safety
// `r` must be a live handle and `out` writable.
enum OtsStatus ots_report_to_json(const struct OtsReport *r, char **out);

// # Safety
// `r` must come from this library and not be used afterwards. Null is ignored.
void ots_report_free(struct OtsReport *r);

// # Safety
// `s` must come from this library and not be used afterwards. Null is ignored.
void ots_string_free(char *s);

// Mardia's test on a row-major `n x d` matrix.
//
// # Safety
// `data` must hold `n * d` doubles and `out` be writable.
enum OtsStatus ots_mardia(const double *data, size_t n, size_t d, struct OtsMardia *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTSIEVE_H */
