#ifndef REPLAY_LAB_H
#define REPLAY_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RlStatus {
  RlStatus_Ok = 0,
  RlStatus_NullPointer = 1,
  RlStatus_InvalidArgument = 2,
  RlStatus_EmptyBuffer = 3,
  RlStatus_Undefined = 4,
  RlStatus_Config = 5,
  RlStatus_NonFinite = 6,
  RlStatus_Internal = 7,
} RlStatus;

typedef enum RlTestMethod {
  RlTestMethod_StudentT = 0,
  RlTestMethod_Exact = 1,
  RlTestMethod_NormalApproximation = 2,
  RlTestMethod_Degenerate = 3,
} RlTestMethod;

/**
 * Opaque weighted reservoir buffer holding `(sample_uid, label)` pairs.
 */
typedef struct RlBuffer RlBuffer;

/**
 * Opaque seeded random stream.
 */
typedef struct RlRng RlRng;

typedef struct RlTestResult {
  double statistic;
  double p_value;
  uintptr_t n1;
  uintptr_t n2;
  enum RlTestMethod method;
} RlTestResult;

typedef struct RlTrialSummary {
  double final_average_accuracy;
  uint64_t update_count;
  uint64_t replay_draws;
  uintptr_t occupied_slots;
} RlTrialSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last error on this thread; empty if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rl_last_error_message(void);

/**
 * Creates the stream for `(seed, label)`; `label` is a NUL-terminated UTF-8
 * string.
 *
 * # Safety
 * `label` must be null or a valid C string; `out` must be null or writable.
 */
enum RlStatus rl_rng_new(uint64_t seed, const char *label, struct RlRng **out);

/**
 * # Safety
 * `rng` must be null or a handle from [`rl_rng_new`] not yet freed.
 */
void rl_rng_free(struct RlRng *rng);

/**
 * # Safety
 * `rng` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_rng_next_u64(struct RlRng *rng, uint64_t *out);

/**
 * Uniform double in [0, 1).
 *
 * # Safety
 * `rng` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_rng_next_f64(struct RlRng *rng, double *out);

/**
 * Creates a buffer with one positive slot weight per slot.
 *
 * # Safety
 * `weights` must point to `capacity` readable doubles; `out` must be writable.
 */
enum RlStatus rl_buffer_new(const double *weights, uintptr_t capacity, struct RlBuffer **out);

/**
 * # Safety
 * `buffer` must be null or a handle from [`rl_buffer_new`] not yet freed.
 */
void rl_buffer_free(struct RlBuffer *buffer);

/**
 * Reservoir insertion. `out_slot` receives the slot index, or -1 when the
 * item was discarded.
 *
 * # Safety
 * `buffer` and `stream` must be live handles; `out_slot` must be writable.
 */
enum RlStatus rl_buffer_insert(struct RlBuffer *buffer,
                               uint64_t sample_uid,
                               uintptr_t label,
                               struct RlRng *stream,
                               int64_t *out_slot);

/**
 * Number of occupied slots.
 *
 * # Safety
 * `buffer` must be a live handle; `out` must be writable.
 */
enum RlStatus rl_buffer_occupied(const struct RlBuffer *buffer, uintptr_t *out);

/**
 * Sample uid stored in `slot`.
 *
 * # Safety
 * `buffer` must be a live handle; `out_uid` must be writable.
 */
enum RlStatus rl_buffer_slot_uid(const struct RlBuffer *buffer, uintptr_t slot, uint64_t *out_uid);

/**
 * Draws `batch_size` slot indices with replacement, proportional to the
 * slot weights of occupied slots.
 *
 * # Safety
 * `buffer` and `stream` must be live handles; `out_indices` must point to
 * `batch_size` writable elements.
 */
enum RlStatus rl_buffer_sample(const struct RlBuffer *buffer,
                               uintptr_t batch_size,
                               struct RlRng *stream,
                               uintptr_t *out_indices);

/**
 * Two-sided paired t-test of `a` against `b`, both of length `n`.
 *
 * # Safety
 * `a` and `b` must point to `n` readable doubles; `out` must be writable.
 */
enum RlStatus rl_paired_t_test(const double *a,
                               const double *b,
                               uintptr_t n,
                               struct RlTestResult *out);

/**
 * Spearman rank correlation with a two-sided p-value.
 *
 * # Safety
 * `x` and `y` must point to `n` readable doubles; `out` must be writable.
 */
enum RlStatus rl_spearman(const double *x, const double *y, uintptr_t n, struct RlTestResult *out);

/**
 * Mann-Whitney U of `a` against `b`; exact for small samples without ties.
 *
 * # Safety
 * `a` must point to `na` and `b` to `nb` readable doubles; `out` must be
 * writable.
 */
enum RlStatus rl_mann_whitney_u(const double *a,
                                uintptr_t na,
                                const double *b,
                                uintptr_t nb,
                                struct RlTestResult *out);

/**
 * Runs one trial. `config_text` uses the `key = value` config format and may
 * be empty for defaults; `trial_id` equal to `trials_nonuniform` selects the
 * uniform baseline.
 *
 * # Safety
 * `config_text` must be a valid C string; `out` must be writable.
 */
enum RlStatus rl_run_trial(const char *config_text,
                           uint64_t run_seed,
                           uint32_t trial_id,
                           struct RlTrialSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* REPLAY_LAB_H */
