#ifndef SDFLOW_H
#define SDFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum SdfStatus {
  SDF_STATUS_OK = 0,
  SDF_STATUS_NULL_POINTER = 1,
  SDF_STATUS_INVALID_ARGUMENT = 2,
  SDF_STATUS_CONFIG = 3,
  SDF_STATUS_GUARD = 4,
  SDF_STATUS_DEGENERATE = 5,
  SDF_STATUS_IO = 6,
  SDF_STATUS_BUFFER_TOO_SMALL = 7,
  SDF_STATUS_PANIC = 8,
  SDF_STATUS_INTERNAL = 9,
} SdfStatus;

/**
 * Stability classification as an integer.
 */
typedef enum SdfClassification {
  SDF_CLASSIFICATION_STRICTLY_STABLE = 0,
  SDF_CLASSIFICATION_STABLE = 1,
  SDF_CLASSIFICATION_UNSTABLE = 2,
} SdfClassification;

/**
 * Parsed experiment configuration.
 */
typedef struct SdfConfig SdfConfig;

/**
 * An evolving surface or curve together with its step settings.
 */
typedef struct SdfFlow SdfFlow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated)
 * and stores its byte length, without the terminator, in `len_out`.
 *
 * Passing a null `buf` only queries the length.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes; `len_out` must be
 * null or point to a writable `size_t`.
 */
enum SdfStatus sdf_last_error(char *buf, size_t cap, size_t *len_out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sdf_version(void);

/**
 * Parses configuration text in the `key = value` format of the command line tool.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must point to writable storage.
 */
enum SdfStatus sdf_config_parse(const char *text, struct SdfConfig **out);

/**
 * # Safety
 * `config` must be null or a handle from [`sdf_config_parse`] not yet freed.
 */
void sdf_config_free(struct SdfConfig *config);

/**
 * Builds the initial state described by `config`.
 *
 * # Safety
 * `config` must be a live handle; `out` must point to writable storage.
 */
enum SdfStatus sdf_flow_new(const struct SdfConfig *config, struct SdfFlow **out);

/**
 * # Safety
 * `flow` must be null or a handle from [`sdf_flow_new`] not yet freed.
 */
void sdf_flow_free(struct SdfFlow *flow);

/**
 * Advances up to `steps` time steps. On a guard violation the state is left
 * at the last admissible step and [`SdfStatus::Guard`] is returned.
 *
 * # Safety
 * `flow` must be a live handle.
 */
enum SdfStatus sdf_flow_step(struct SdfFlow *flow, uint64_t steps);

/**
 * Time and completed step count of the current state. Either output may be null.
 *
 * # Safety
 * `flow` must be a live handle; non-null outputs must be writable.
 */
enum SdfStatus sdf_flow_time(const struct SdfFlow *flow, double *t, uint64_t *steps);

/**
 * Enclosed volume (area for curves) and surface area (length for curves).
 *
 * # Safety
 * `flow` must be a live handle; non-null outputs must be writable.
 */
enum SdfStatus sdf_flow_measures(const struct SdfFlow *flow, double *volume, double *area);

/**
 * Copies the node values: heights for graphs, all `x` then all `y` for
 * curves. `len_out` receives the number of values; a null `values` only
 * queries it.
 *
 * # Safety
 * `flow` must be a live handle; `values` must be null or hold `cap` doubles.
 */
enum SdfStatus sdf_flow_values(const struct SdfFlow *flow,
                               double *values,
                               size_t cap,
                               size_t *len_out);

/**
 * Smallest Jacobi eigenvalue on the complement of translations, and the
 * classification, for the stability reference of `config`.
 *
 * # Safety
 * `config` must be a live handle; non-null outputs must be writable.
 */
enum SdfStatus sdf_stability(const struct SdfConfig *config,
                             double *sigma_min,
                             enum SdfClassification *classification);

/**
 * Runs a full experiment into `out_dir`, exactly as the command line `run`
 * subcommand does. `exit_code` receives the tool's exit code (0, or 2 on a
 * guard halt).
 *
 * # Safety
 * `config` must be a live handle, `out_dir` a NUL-terminated path, and
 * `exit_code` null or writable.
 */
enum SdfStatus sdf_run(const struct SdfConfig *config, const char *out_dir, int *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDFLOW_H */
