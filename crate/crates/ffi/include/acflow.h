#ifndef ACFLOW_H
#define ACFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Selects the value, its spatial gradient or the control.
 */
typedef enum AcflowPart {
  ACFLOW_PART_VALUE = 0,
  ACFLOW_PART_GRADIENT = 1,
  ACFLOW_PART_CONTROL = 2,
} AcflowPart;

/**
 * Result codes.
 */
typedef enum AcflowStatus {
  ACFLOW_STATUS_OK = 0,
  ACFLOW_STATUS_NULL_POINTER = 1,
  ACFLOW_STATUS_INVALID_ARGUMENT = 2,
  ACFLOW_STATUS_DIMENSION_MISMATCH = 3,
  ACFLOW_STATUS_CONFIG = 4,
  ACFLOW_STATUS_NUMERICAL = 5,
  ACFLOW_STATUS_DIVERGED = 6,
  ACFLOW_STATUS_NO_REFERENCE = 7,
  ACFLOW_STATUS_IO = 8,
  ACFLOW_STATUS_PANIC = 9,
} AcflowStatus;

/**
 * A control problem.
 */
typedef struct AcflowProblem AcflowProblem;

/**
 * A finished training run with its networks.
 */
typedef struct AcflowRun AcflowRun;

/**
 * One evaluation row of a training run. `critic_loss` and the critic
 * errors are NaN where they were not computed.
 */
typedef struct AcflowMetrics {
  uint64_t iter;
  double tau;
  double critic_loss;
  double err_v0;
  double err_g;
  double err_u;
  double cost_mean;
  double cost_stderr;
  uint64_t wall_ms;
} AcflowMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *acflow_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated
 * and NUL-terminated when `cap > 0`). Returns the full message length in
 * bytes, excluding the terminator; 0 after a successful call.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t acflow_last_error(char *buf, size_t cap);

/**
 * Builds the problem described by a JSON run configuration (the same
 * format the command-line tool reads; `{}` gives the 1d LQ problem).
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum AcflowStatus acflow_problem_from_config(const char *config_json, struct AcflowProblem **out);

/**
 * # Safety
 * `problem` must be null or a handle from [`acflow_problem_from_config`]
 * that has not been freed.
 */
void acflow_problem_free(struct AcflowProblem *problem);

/**
 * State, control and noise dimensions and the horizon. Any output
 * pointer may be null.
 *
 * # Safety
 * `problem` must be a live handle; non-null outputs must be writable.
 */
enum AcflowStatus acflow_problem_dims(const struct AcflowProblem *problem,
                                      size_t *state_dim,
                                      size_t *control_dim,
                                      size_t *noise_dim,
                                      double *horizon);

/**
 * `∇ᵤG(x, u, p)` at one point. `x` and `costate` have `state_dim`
 * entries, `u` and `out` have `control_dim`.
 *
 * # Safety
 * The arrays must have the sizes above.
 */
enum AcflowStatus acflow_problem_grad_u_hamiltonian(const struct AcflowProblem *problem,
                                                    const double *x,
                                                    const double *u,
                                                    const double *costate,
                                                    double *out);

/**
 * Evaluates the reference solution at `rows` states (row-major,
 * `rows × state_dim`) at time `t`. `part` is an [`AcflowPart`] value.
 * `out` receives `rows × 1`,
 * `rows × state_dim` or `rows × control_dim` values depending on `part`.
 * Fails with `NoReference` for problems without one.
 *
 * # Safety
 * The arrays must have the sizes above.
 */
enum AcflowStatus acflow_problem_reference(const struct AcflowProblem *problem,
                                           int32_t part,
                                           double t,
                                           const double *xs,
                                           size_t rows,
                                           double *out);

/**
 * Trains from a JSON run configuration. Blocks until the run finishes.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum AcflowStatus acflow_train(const char *config_json, struct AcflowRun **out);

/**
 * Trains on an existing problem handle. Problem keys in the configuration
 * only label the outputs; its horizon must match the problem's.
 *
 * # Safety
 * As for [`acflow_train`]; `problem` must be a live handle.
 */
enum AcflowStatus acflow_train_on(const struct AcflowProblem *problem,
                                  const char *config_json,
                                  struct AcflowRun **out);

/**
 * # Safety
 * `run` must be null or a live run handle.
 */
void acflow_run_free(struct AcflowRun *run);

/**
 * Number of metrics rows recorded by the run.
 *
 * # Safety
 * `run` must be a live handle; `count` must be writable.
 */
enum AcflowStatus acflow_run_num_metrics(const struct AcflowRun *run, size_t *count);

/**
 * Copies metrics row `index`.
 *
 * # Safety
 * `run` must be a live handle; `row` must be writable.
 */
enum AcflowStatus acflow_run_metrics(const struct AcflowRun *run,
                                     size_t index,
                                     struct AcflowMetrics *row);

/**
 * Evaluates a trained network at `rows` states: `Value` is the initial
 * value network (`t` is ignored), `Gradient` the value-gradient network
 * and `Control` the policy. Output sizes as in
 * [`acflow_problem_reference`].
 *
 * # Safety
 * `run` must be a live handle and the arrays must have the sizes above.
 */
enum AcflowStatus acflow_run_eval(const struct AcflowRun *run,
                                  int32_t part,
                                  double t,
                                  const double *xs,
                                  size_t rows,
                                  double *out);

/**
 * Writes `metrics.csv`, `summary.json`, `config.json` and
 * `checkpoint.acfc` into `dir`, creating it if needed.
 *
 * # Safety
 * `run` must be a live handle; `dir` a NUL-terminated path.
 */
enum AcflowStatus acflow_run_write_outputs(const struct AcflowRun *run, const char *dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ACFLOW_H */
