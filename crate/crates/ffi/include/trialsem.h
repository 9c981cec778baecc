#ifndef TRIALSEM_H
#define TRIALSEM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define TS_METHOD_SATURATED 0

#define TS_METHOD_SEM 1

#define TS_METHOD_BIC_MA 2

#define TS_METHOD_SL_MA 3

#define TS_ESTIMAND_ATE 0

#define TS_ESTIMAND_PROBIT_COEFFICIENT 1

#define TS_ESTIMAND_CONCORDANCE 2

#define TS_FLAG_BOUNDARY 1

#define TS_FLAG_DEGENERATE_ARM 2

#define TS_FLAG_DEGRADED_SUPER_LEARNER 4

#define TS_FLAG_UNRELIABLE 8

/**
 * Endpoint kind codes for [`ts_dataset_new`]: 0 continuous, 2 binary,
 * K ≥ 3 ordinal with K levels.
 */
#define TS_KIND_CONTINUOUS 0

#define TS_KIND_BINARY 2

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  /**
   * Invalid or incomplete data.
   */
  TS_STATUS_VALIDATION = 2,
  /**
   * A model fit failed.
   */
  TS_STATUS_NUMERICAL = 3,
  /**
   * Invalid settings or arguments.
   */
  TS_STATUS_CONFIG = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  TS_STATUS_UTF8 = 5,
  TS_STATUS_OUT_OF_RANGE = 6,
  /**
   * An internal error was caught at the boundary.
   */
  TS_STATUS_PANIC = 7,
} TsStatus;

/**
 * Results of [`ts_estimate`].
 */
typedef struct TsAnalysis TsAnalysis;

/**
 * Immutable trial dataset.
 */
typedef struct TsDataset TsDataset;

/**
 * Estimator settings. Obtain defaults from [`ts_config_default`].
 */
typedef struct TsConfig {
  /**
   * Bit `1 << TS_METHOD_*` selects a method.
   */
  uint32_t methods;
  size_t bootstrap_b;
  size_t folds;
  double grid_step;
  double alpha;
  uint64_t seed;
} TsConfig;

/**
 * One estimator's result. Absent values are NaN.
 */
typedef struct TsEstimate {
  uint32_t method;
  uint32_t estimand;
  double estimate;
  double std_error;
  double ci_low;
  double ci_high;
  double weight_on_sem;
  double ess;
  /**
   * `TS_FLAG_*` bits.
   */
  uint32_t flags;
} TsEstimate;

typedef struct TsBootstrap {
  double point;
  double se;
  double ci_low;
  double ci_high;
  double wald_statistic;
  size_t replicates;
  size_t n_failed;
  bool unreliable;
} TsBootstrap;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *ts_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Fills `out` with the default settings: every method, 20000 bootstrap
 * replicates, 10 folds, grid step 0.01, alpha 0.05, seed 0.
 *
 * # Safety
 * `out` must be null or point to writable memory for a `TsConfig`.
 */
enum TsStatus ts_config_default(struct TsConfig *out);

/**
 * Builds a dataset from `n` arm codes (0/1) and a row-major `n × p` value
 * matrix whose first column is the primary endpoint. `kinds` holds `p`
 * `TS_KIND_*` codes, or is null for all continuous. Endpoint names are
 * `y1..yp`.
 *
 * # Safety
 * `arm` must point to `n` bytes, `values` to `n * p` doubles and `kinds`,
 * when not null, to `p` codes. `out` must be writable.
 */
enum TsStatus ts_dataset_new(const uint8_t *arm,
                             const double *values,
                             size_t n,
                             size_t p,
                             const uint32_t *kinds,
                             struct TsDataset **out);

/**
 * Reads a CSV file. `secondaries` and `kinds` are comma-separated lists;
 * `kinds` (primary first) may be null for all continuous.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum TsStatus ts_dataset_load_csv(const char *path,
                                  const char *primary,
                                  const char *arm,
                                  const char *secondaries,
                                  const char *kinds,
                                  struct TsDataset **out);

/**
 * Number of subjects, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
size_t ts_dataset_n(const struct TsDataset *ds);

/**
 * Number of endpoints, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle from this library.
 */
size_t ts_dataset_endpoints(const struct TsDataset *ds);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void ts_dataset_free(struct TsDataset *ds);

/**
 * Runs the selected estimators.
 *
 * # Safety
 * `ds` must be a live dataset handle, `cfg` readable and `out` writable.
 */
enum TsStatus ts_estimate(const struct TsDataset *ds,
                          const struct TsConfig *cfg,
                          struct TsAnalysis **out);

/**
 * Number of result rows, or 0 for a null handle.
 *
 * # Safety
 * `a` must be null or a live handle from this library.
 */
size_t ts_analysis_len(const struct TsAnalysis *a);

/**
 * Copies result row `index` into `out`.
 *
 * # Safety
 * `a` must be a live analysis handle and `out` writable.
 */
enum TsStatus ts_analysis_get(const struct TsAnalysis *a, size_t index, struct TsEstimate *out);

/**
 * Releases an analysis. Null is ignored.
 *
 * # Safety
 * `a` must be null or a handle not yet freed.
 */
void ts_analysis_free(struct TsAnalysis *a);

/**
 * Bootstrap of one `TS_METHOD_*` estimator; the method mask in `cfg` is
 * ignored.
 *
 * # Safety
 * `ds` must be a live dataset handle, `cfg` readable and `out` writable.
 */
enum TsStatus ts_bootstrap(const struct TsDataset *ds,
                           uint32_t method,
                           const struct TsConfig *cfg,
                           struct TsBootstrap *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIALSEM_H */
