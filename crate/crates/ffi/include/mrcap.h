#ifndef MRCAP_H
#define MRCAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define MRCAP_APP_MAP_SHUFFLE 0

#define MRCAP_APP_GROUP_BY_KEY 1

#define MRCAP_APP_REDUCE_BY_KEY 2

#define MRCAP_DOMAIN_PROCESSOR 0

#define MRCAP_DOMAIN_DRAM 1

typedef enum MrcapStatus {
  MRCAP_STATUS_OK = 0,
  MRCAP_STATUS_INVALID_ARGUMENT = 1,
  MRCAP_STATUS_CONFIG = 2,
  MRCAP_STATUS_USAGE = 3,
  MRCAP_STATUS_CAPABILITY = 4,
  MRCAP_STATUS_IO = 5,
  MRCAP_STATUS_INTERNAL = 6,
  MRCAP_STATUS_NULL_POINTER = 7,
} MrcapStatus;

/**
 * Result of [`mrcap_run_app`].
 */
typedef struct MrcapRunResult MrcapRunResult;

/**
 * A power trace being assembled sample by sample.
 */
typedef struct MrcapTrace MrcapTrace;

/**
 * Counters and stage times of one run.
 */
typedef struct MrcapMetrics {
  double map_ms;
  double shuffle_ms;
  double reduce_ms;
  uint64_t map_kv_count;
  uint64_t shuffle_kv_count;
  uint64_t shuffle_bytes;
  uint64_t flush_count;
  double avg_buffer_fill_ratio;
  uint64_t reduce_kv_count;
  uint64_t delivered_kvs;
} MrcapMetrics;

typedef struct MrcapEnergy {
  double processor_j;
  double dram_j;
  double total_j;
  double runtime_ms;
  double dram_fraction;
} MrcapEnergy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next mrcap call on the same thread.
 */
const char *mrcap_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void mrcap_string_free(char *s);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mrcap_version(void);

/**
 * # Safety
 * `key` must point to `len` readable bytes (or be NULL when `len` is 0).
 */
uint64_t mrcap_fnv1a64(const uint8_t *key, size_t len);

/**
 * Destination rank of `key` among `num_ranks` ranks.
 *
 * # Safety
 * `key` must point to `len` readable bytes; `out` must be writable.
 */
enum MrcapStatus mrcap_partition(const uint8_t *key, size_t len, uint32_t num_ranks, uint32_t *out);

/**
 * Generates the dataset and runs one mini-app on it.
 *
 * # Safety
 * `out` must be writable. On success `*out` owns a result that must be
 * released with [`mrcap_run_result_free`].
 */
enum MrcapStatus mrcap_run_app(uint32_t app,
                               uint64_t total_words,
                               uint64_t unique_words,
                               uint64_t seed,
                               uint32_t num_ranks,
                               uint32_t buffer_kvs,
                               struct MrcapRunResult **out);

/**
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum MrcapStatus mrcap_run_result_metrics(const struct MrcapRunResult *result,
                                          struct MrcapMetrics *out);

/**
 * Number of distinct words in the result.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum MrcapStatus mrcap_run_result_distinct(const struct MrcapRunResult *result, uint64_t *out);

/**
 * Count of `word`, zero if it never occurred.
 *
 * # Safety
 * `result` must be a live handle, `word` must point to `len` readable
 * bytes, and `out` must be writable.
 */
enum MrcapStatus mrcap_run_result_count(const struct MrcapRunResult *result,
                                        const uint8_t *word,
                                        size_t len,
                                        uint64_t *out);

/**
 * # Safety
 * `result` must be NULL or a handle from [`mrcap_run_app`], not yet freed.
 */
void mrcap_run_result_free(struct MrcapRunResult *result);

/**
 * New empty trace sampled every `interval_ms`. Returns NULL if the interval is 0.
 */
struct MrcapTrace *mrcap_trace_new(uint64_t interval_ms);

/**
 * Appends one sample. Times must increase per domain.
 *
 * # Safety
 * `trace` must be a live handle.
 */
enum MrcapStatus mrcap_trace_push(struct MrcapTrace *trace,
                                  uint64_t t_ms,
                                  uint32_t domain,
                                  double watts);

/**
 * # Safety
 * `trace` must be a live handle; `out` must be writable.
 */
enum MrcapStatus mrcap_trace_integrate(const struct MrcapTrace *trace, struct MrcapEnergy *out);

/**
 * # Safety
 * `trace` must be NULL or a handle from [`mrcap_trace_new`], not yet freed.
 */
void mrcap_trace_free(struct MrcapTrace *trace);

/**
 * Energy between two counter readings, allowing one wrap at `max_range_uj`.
 */
uint64_t mrcap_rapl_wrap_delta(uint64_t prev_uj, uint64_t curr_uj, uint64_t max_range_uj);

/**
 * Runtime stretch of a stage drawing `nominal_w` under a cap of `cap_w`.
 * A `cap_w` of 0 means no cap.
 *
 * # Safety
 * `out` must be writable.
 */
enum MrcapStatus mrcap_sim_dilation(double nominal_w, double cap_w, double *out);

/**
 * Reads a result CSV and renders the comparison table.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable. On success
 * `*out` must be released with [`mrcap_string_free`].
 */
enum MrcapStatus mrcap_summarize_csv(const char *path, char **out);

/**
 * Runs the matrix described by a TOML experiment config.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string. `rows_out` and
 * `failures_out` may be NULL.
 */
enum MrcapStatus mrcap_run_matrix_toml(const char *config_toml,
                                       uint64_t *rows_out,
                                       uint64_t *failures_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRCAP_H */
