#ifndef DOPCBF_H
#define DOPCBF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DopcbfStatus {
  DOPCBF_STATUS_OK = 0,
  DOPCBF_STATUS_NULL_POINTER = 1,
  DOPCBF_STATUS_INVALID_ARGUMENT = 2,
  DOPCBF_STATUS_CONFIG = 3,
  DOPCBF_STATUS_INFEASIBLE = 4,
  DOPCBF_STATUS_ILL_CONDITIONED = 5,
  DOPCBF_STATUS_RUN_FAILED = 6,
  DOPCBF_STATUS_BUFFER_TOO_SMALL = 7,
  DOPCBF_STATUS_PANIC = 8,
} DopcbfStatus;

typedef enum DopcbfController {
  DOPCBF_CONTROLLER_CBF = 0,
  DOPCBF_CONTROLLER_DOCBF = 1,
  DOPCBF_CONTROLLER_DOPCBF = 2,
} DopcbfController;

/**
 * Trajectory columns, in the order of `trajectory.csv`.
 */
typedef enum DopcbfColumn {
  DOPCBF_COLUMN_TIME = 0,
  DOPCBF_COLUMN_GAP = 1,
  DOPCBF_COLUMN_SPEED = 2,
  DOPCBF_COLUMN_INPUT = 3,
  DOPCBF_COLUMN_SLACK = 4,
  DOPCBF_COLUMN_GRADE = 5,
  DOPCBF_COLUMN_GRADE_ESTIMATE = 6,
  DOPCBF_COLUMN_DISTURBANCE = 7,
  DOPCBF_COLUMN_DISTURBANCE_ESTIMATE = 8,
  DOPCBF_COLUMN_BARRIER = 9,
  DOPCBF_COLUMN_ROBUST_BARRIER = 10,
} DopcbfColumn;

/**
 * Experiment configuration handle.
 */
typedef struct DopcbfExperiment DopcbfExperiment;

/**
 * Completed run handle.
 */
typedef struct DopcbfRun DopcbfRun;

/**
 * Summary of one run. Absent times are NaN.
 */
typedef struct DopcbfReport {
  double rms_du;
  double min_h;
  double min_h_time;
  double min_hde;
  bool violation;
  double violation_time;
  size_t qp_failures;
  size_t samples;
} DopcbfReport;

/**
 * Paired smoothness comparison of a random-road batch.
 */
typedef struct DopcbfBatchSummary {
  size_t pairs;
  double mean_improvement;
  double min_improvement;
  double max_improvement;
  double win_rate;
  size_t docbf_violations;
  size_t dopcbf_violations;
  size_t aborted;
} DopcbfBatchSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dopcbf_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 *
 * Returns the buffer size needed including the terminating NUL; nothing is
 * written when `buf` is NULL or `len` is too small.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t dopcbf_last_error(char *buf, size_t len);

/**
 * Solves `min ½zᵀHz + fᵀz` subject to `Gz ≤ e`.
 *
 * `h` is `n×n` and `g` is `m×n`, both row-major. `g` and `e` may be NULL
 * when `m == 0`. On success `z_out` receives `n` values and `objective_out`
 * (optional) the optimal objective.
 *
 * # Safety
 * Every non-NULL pointer must reference an array of the stated length.
 */
enum DopcbfStatus dopcbf_qp_solve(size_t n,
                                  size_t m,
                                  const double *h,
                                  const double *f,
                                  const double *g,
                                  const double *e,
                                  double *z_out,
                                  double *objective_out);

/**
 * Creates an experiment with default parameters.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum DopcbfStatus dopcbf_experiment_new(struct DopcbfExperiment **out);

/**
 * Parses and validates a TOML experiment description.
 *
 * # Safety
 * `toml` must be a NUL-terminated UTF-8 string; `out` a valid handle slot.
 */
enum DopcbfStatus dopcbf_experiment_from_toml(const char *toml, struct DopcbfExperiment **out);

/**
 * Selects the controller used by [`dopcbf_run`].
 *
 * # Safety
 * `exp` must be a live handle from this library.
 */
enum DopcbfStatus dopcbf_experiment_set_controller(struct DopcbfExperiment *exp,
                                                   enum DopcbfController controller);

/**
 * Sets the observer-error weight σ; rejected values leave the experiment unchanged.
 *
 * # Safety
 * `exp` must be a live handle from this library.
 */
enum DopcbfStatus dopcbf_experiment_set_sigma(struct DopcbfExperiment *exp, double sigma);

/**
 * # Safety
 * `exp` must be NULL or a handle not yet freed.
 */
void dopcbf_experiment_free(struct DopcbfExperiment *exp);

/**
 * Runs one closed loop on the configured road.
 *
 * # Safety
 * `exp` must be a live handle; `out` a valid handle slot.
 */
enum DopcbfStatus dopcbf_run(const struct DopcbfExperiment *exp, struct DopcbfRun **out);

/**
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
enum DopcbfStatus dopcbf_run_report(const struct DopcbfRun *run, struct DopcbfReport *out);

/**
 * Number of recorded samples, or 0 for NULL.
 *
 * # Safety
 * `run` must be NULL or a live handle.
 */
size_t dopcbf_run_len(const struct DopcbfRun *run);

/**
 * Copies one trajectory column into `buf`, which must hold at least
 * [`dopcbf_run_len`] values.
 *
 * # Safety
 * `run` must be a live handle; `buf` must point to `len` writable doubles.
 */
enum DopcbfStatus dopcbf_run_column(const struct DopcbfRun *run,
                                    enum DopcbfColumn column,
                                    double *buf,
                                    size_t len);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void dopcbf_run_free(struct DopcbfRun *run);

/**
 * Runs the worst-case and grade-parameterized controllers on `n` seeded random roads.
 *
 * # Safety
 * `exp` must be a live handle; `out` a valid pointer.
 */
enum DopcbfStatus dopcbf_batch(const struct DopcbfExperiment *exp,
                               uint64_t n,
                               uint64_t seed,
                               struct DopcbfBatchSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOPCBF_H */
