#ifndef HVFFBS_H
#define HVFFBS_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HvffbsStatus {
  HVFFBS_STATUS_OK = 0,
  HVFFBS_STATUS_NULL_POINTER = 1,
  HVFFBS_STATUS_INVALID_CONFIG = 2,
  HVFFBS_STATUS_NUMERICAL = 3,
  HVFFBS_STATUS_BUFFER_TOO_SMALL = 4,
  HVFFBS_STATUS_INVALID_STATE = 5,
  HVFFBS_STATUS_PANIC = 6,
  HVFFBS_STATUS_INVALID_ARGUMENT = 7,
} HvffbsStatus;

/**
 * Opaque sampler handle.
 */
typedef struct HvSampler HvSampler;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a sampler from configuration text (empty text uses the defaults).
 *
 * # Safety
 * `config_text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HvffbsStatus hvffbs_sampler_new(const char *config_text, struct HvSampler **out);

/**
 * Releases a sampler; null is ignored.
 *
 * # Safety
 * `s` must come from [`hvffbs_sampler_new`] and not be used afterwards.
 */
void hvffbs_sampler_free(struct HvSampler *s);

/**
 * Number of grid points.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HvffbsStatus hvffbs_sampler_state_dim(const struct HvSampler *s, uintptr_t *out);

/**
 * Number of data time points.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HvffbsStatus hvffbs_sampler_horizon(const struct HvSampler *s, uintptr_t *out);

/**
 * Maximum number of nonzeros per row of the configured pattern.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HvffbsStatus hvffbs_sampler_pattern_max_row(const struct HvSampler *s, uintptr_t *out);

/**
 * Sparsity pattern of the configured method in text form. Release the
 * string with [`hvffbs_string_free`].
 *
 * # Safety
 * Pointers must be valid.
 */
enum HvffbsStatus hvffbs_sampler_pattern_text(const struct HvSampler *s, char **out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used afterwards.
 */
void hvffbs_string_free(char *p);

/**
 * Simulates the true trajectory and observations for `seed`.
 *
 * # Safety
 * `s` must be a valid handle.
 */
enum HvffbsStatus hvffbs_sampler_simulate(struct HvSampler *s, uint64_t seed);

/**
 * Copies the true states `x_1..x_T` (time-major, `T * n` values).
 *
 * # Safety
 * `out` must hold `len` writable values.
 */
enum HvffbsStatus hvffbs_sampler_truth(const struct HvSampler *s, double *out, uintptr_t len);

/**
 * Draws `n_samples` trajectories given the simulated data and writes them
 * sample-major, then time, then grid index (`n_samples * T * n` values).
 *
 * # Safety
 * `out` must hold `len` writable values.
 */
enum HvffbsStatus hvffbs_sampler_draw(const struct HvSampler *s,
                                      uintptr_t n_samples,
                                      uint64_t seed,
                                      double *out,
                                      uintptr_t len);

/**
 * Ensemble CRPS of `n_members` vectors of length `dim` (member-major)
 * against `target`.
 *
 * # Safety
 * `members` must hold `n_members * dim` values and `target` `dim` values.
 */
enum HvffbsStatus hvffbs_crps(const double *members,
                              uintptr_t n_members,
                              uintptr_t dim,
                              const double *target,
                              double *out);

/**
 * Message of the last failure on this thread (empty after a success).
 * Valid until the next call on this thread.
 */
const char *hvffbs_last_error(void);

/**
 * Library version as a static string.
 */
const char *hvffbs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HVFFBS_H */
