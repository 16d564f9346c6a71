#ifndef AECS_H
#define AECS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AecsStatus {
  AECS_STATUS_OK = 0,
  AECS_STATUS_NULL_POINTER = 1,
  AECS_STATUS_INVALID_ARGUMENT = 2,
  AECS_STATUS_UNKNOWN_PRESET = 3,
  AECS_STATUS_PARSE_ERROR = 4,
  AECS_STATUS_IO_ERROR = 5,
  AECS_STATUS_SEARCH_FAILED = 6,
  AECS_STATUS_BUFFER_TOO_SMALL = 7,
  AECS_STATUS_PANIC = 8,
} AecsStatus;

/**
 * Opaque simulated device.
 */
typedef struct AecsDevice AecsDevice;

/**
 * Opaque search result.
 */
typedef struct AecsResult AecsResult;

typedef struct AecsSearchConfig {
  double epsilon;
  uint32_t tokens_per_measurement;
  uint32_t repeats;
  double stage1_min_speedup;
  bool include_efficient;
  uint32_t max_tree_depth;
  /**
   * Aggregate repeats by median instead of mean.
   */
  bool use_median;
} AecsSearchConfig;

typedef struct AecsHeuristicParams {
  double a_efficient;
  double a_performance;
  double a_prime;
  double b;
  double static_power;
  double alpha;
  double thread_alpha;
} AecsHeuristicParams;

typedef struct AecsNoise {
  double rel_sigma;
  double counter_update_s;
  double poll_interval_s;
} AecsNoise;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fills `out` with the default search configuration.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum AecsStatus aecs_search_config_default(struct AecsSearchConfig *out);

/**
 * Fills `out` with the default heuristic parameters.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum AecsStatus aecs_heuristic_params_default(struct AecsHeuristicParams *out);

/**
 * Loads a bundled preset by name.
 *
 * # Safety
 * `name` must be null or a NUL-terminated string; `out` must be null or
 * valid for writes.
 */
enum AecsStatus aecs_device_load_preset(const char *name, struct AecsDevice **out);

/**
 * Loads a preset file from `path`.
 *
 * # Safety
 * As for [`aecs_device_load_preset`].
 */
enum AecsStatus aecs_device_load_file(const char *path, struct AecsDevice **out);

/**
 * # Safety
 * `device` must be null or a handle from this library that has not been
 * freed.
 */
void aecs_device_free(struct AecsDevice *device);

/**
 * # Safety
 * `device` must be a live handle; `noise` must be null or readable.
 */
enum AecsStatus aecs_device_set_noise(struct AecsDevice *device, const struct AecsNoise *noise);

/**
 * # Safety
 * `device` must be a live handle; `out` must be null or writable.
 */
enum AecsStatus aecs_device_get_noise(const struct AecsDevice *device, struct AecsNoise *out);

/**
 * Number of entries in a selection for this device: the cluster count, or
 * 1 on thread-count devices.
 *
 * # Safety
 * `device` must be a live handle; `out` must be null or writable.
 */
enum AecsStatus aecs_device_selection_len(const struct AecsDevice *device, size_t *out);

/**
 * # Safety
 * `device` must be a live handle; `out` must be null or writable.
 */
enum AecsStatus aecs_device_search_space_size(const struct AecsDevice *device, size_t *out);

/**
 * Power heuristic `h(I)` of the selection given by `counts`.
 *
 * # Safety
 * `device` must be a live handle, `counts` readable for `len` entries,
 * `params` readable and `out` writable.
 */
enum AecsStatus aecs_power_heuristic(const struct AecsDevice *device,
                                     const uint32_t *counts,
                                     size_t len,
                                     const struct AecsHeuristicParams *params,
                                     double *out);

/**
 * Two-stage search on `device` using measurement stream `seed`.
 *
 * # Safety
 * `device` must be a live handle, `config` and `params` readable and `out`
 * writable.
 */
enum AecsStatus aecs_search(const struct AecsDevice *device,
                            const struct AecsSearchConfig *config,
                            const struct AecsHeuristicParams *params,
                            uint64_t seed,
                            struct AecsResult **out);

/**
 * Exhaustive search ranked by measured energy.
 *
 * # Safety
 * As for [`aecs_search`].
 */
enum AecsStatus aecs_exhaustive_search(const struct AecsDevice *device,
                                       const struct AecsSearchConfig *config,
                                       uint64_t seed,
                                       struct AecsResult **out);

/**
 * # Safety
 * `result` must be null or a handle from this library that has not been
 * freed.
 */
void aecs_result_free(struct AecsResult *result);

/**
 * Copies the chosen selection into `counts` (capacity `cap`) and stores its
 * length in `len`. Returns `BufferTooSmall` with `len` set when `cap` is
 * not enough.
 *
 * # Safety
 * `result` must be a live handle, `counts` writable for `cap` entries and
 * `len` writable.
 */
enum AecsStatus aecs_result_chosen(const struct AecsResult *result,
                                   uint32_t *counts,
                                   size_t cap,
                                   size_t *len);

/**
 * Stage-1 result (the fastest measured selection for exhaustive search).
 *
 * # Safety
 * As for [`aecs_result_chosen`].
 */
enum AecsStatus aecs_result_stage1(const struct AecsResult *result,
                                   uint32_t *counts,
                                   size_t cap,
                                   size_t *len);

/**
 * Measured mean speed (tokens/s) and energy (mJ/token) of the chosen
 * selection. Either output may be null.
 *
 * # Safety
 * `result` must be a live handle; non-null outputs must be writable.
 */
enum AecsStatus aecs_result_chosen_metrics(const struct AecsResult *result,
                                           double *speed_tps,
                                           double *energy_mj_per_tok);

/**
 * Candidate count, distinct selections profiled and individual decode runs.
 * Any output may be null.
 *
 * # Safety
 * `result` must be a live handle; non-null outputs must be writable.
 */
enum AecsStatus aecs_result_counts(const struct AecsResult *result,
                                   size_t *candidates,
                                   size_t *plans_measured,
                                   size_t *measurements);

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap - 1` bytes. Returns the full
 * message length in bytes, excluding the terminator. `buf` may be null to
 * query the length.
 *
 * # Safety
 * `buf` must be null or writable for `cap` bytes.
 */
size_t aecs_last_error_message(char *buf, size_t cap);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AECS_H */
