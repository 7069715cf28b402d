/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef DRML_IV_H
#define DRML_IV_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define DRML_OK 0

#define DRML_NULL_POINTER 1

#define DRML_INPUT_ERROR 2

#define DRML_ESTIMATION_ERROR 3

#define DRML_INVALID_ARGUMENT 4

#define DRML_PANIC 5

#define DRML_LEARNER_PARAMETRIC 0

#define DRML_LEARNER_ENSEMBLE 1

#define DRML_METHOD_DRML 0

#define DRML_METHOD_TSLS 1

#define DRML_METHOD_UNADJUSTED 2

/*
 Opaque dataset handle.
 */
typedef struct DrmlDataset DrmlDataset;

/*
 Cross-fitting settings for the DRML entry points.
 */
typedef struct DrmlOptions {
  uint32_t folds;
  uint64_t seed;
  /*
   `DRML_LEARNER_PARAMETRIC` or `DRML_LEARNER_ENSEMBLE`.
   */
  int32_t learner;
  double epsilon;
  double alpha;
} DrmlOptions;

/*
 LATE estimate. `gamma_hat` and `delta_hat` are NaN for TSLS.
 */
typedef struct DrmlLateResult {
  int32_t method;
  double chi_hat;
  double se;
  double ci_lo;
  double ci_hi;
  double gamma_hat;
  double delta_hat;
  size_t n;
} DrmlLateResult;

/*
 Principal-strata shares with standard errors.
 */
typedef struct DrmlStrataShares {
  double complier;
  double complier_se;
  double always_taker;
  double always_taker_se;
  double never_taker;
  double never_taker_se;
} DrmlStrataShares;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Default options: 5 folds, seed 0, ensemble learner, epsilon 0.01, alpha 0.05.
 */
struct DrmlOptions drml_options_default(void);

/*
 Builds a dataset from column arrays; `x` is row-major `n * p` and may be
 null when `p == 0`. All arrays are copied.

 # Safety
 `y`, `a`, `z` must point to `n` doubles and `x` to `n * p` doubles;
 `out` must be a valid pointer.
 */
int32_t drml_dataset_from_arrays(const double *y,
                                 const double *a,
                                 const double *z,
                                 const double *x,
                                 size_t n,
                                 size_t p,
                                 struct DrmlDataset **out);

/*
 Loads a dataset described by a schema TOML file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
int32_t drml_dataset_from_config(const char *path, struct DrmlDataset **out);

/*
 Releases a dataset; null is ignored.

 # Safety
 `ds` must come from a `drml_dataset_*` constructor and not be freed twice.
 */
void drml_dataset_free(struct DrmlDataset *ds);

/*
 Number of rows, or 0 for null.

 # Safety
 `ds` must be null or a live handle.
 */
size_t drml_dataset_rows(const struct DrmlDataset *ds);

/*
 Number of covariate columns after categorical expansion, or 0 for null.

 # Safety
 `ds` must be null or a live handle.
 */
size_t drml_dataset_covariates(const struct DrmlDataset *ds);

/*
 Cross-fitted DRML estimate.

 # Safety
 `ds` must be a live handle, `opts` and `out` valid pointers.
 */
int32_t drml_estimate_drml(const struct DrmlDataset *ds,
                           const struct DrmlOptions *opts,
                           struct DrmlLateResult *out);

/*
 Two-stage least squares with linear covariate main effects.

 # Safety
 `ds` must be a live handle and `out` a valid pointer.
 */
int32_t drml_estimate_tsls(const struct DrmlDataset *ds, double alpha, struct DrmlLateResult *out);

/*
 Unadjusted Wald ratio.

 # Safety
 `ds` must be a live handle and `out` a valid pointer.
 */
int32_t drml_estimate_unadjusted(const struct DrmlDataset *ds,
                                 double alpha,
                                 struct DrmlLateResult *out);

/*
 Complier, always-taker and never-taker shares from cross-fitted nuisances.

 # Safety
 `ds` must be a live handle, `opts` and `out` valid pointers.
 */
int32_t drml_strata_shares(const struct DrmlDataset *ds,
                           const struct DrmlOptions *opts,
                           struct DrmlStrataShares *out);

/*
 Sensitivity mapping `chi + delta1 * delta2 / delta`.

 # Safety
 `out` must be a valid pointer.
 */
int32_t drml_xi(double chi_hat, double delta_hat, double delta1, double delta2, double *out);

/*
 Message for the last failed call on this thread, or null. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *drml_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *drml_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRML_IV_H */
