#ifndef STREAMFORGE_H
#define STREAMFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Contraction applied by [`sf_hh_apply`].
 */
typedef enum SfOp {
  SF_OP_ZERO = 0,
  SF_OP_HALVE = 1,
  /**
   * `max(x - arg, 0)`.
   */
  SF_OP_SUBTRACT = 2,
  /**
   * `min(x, arg)`.
   */
  SF_OP_CAP = 3,
  SF_OP_SQRT_FLOOR = 4,
} SfOp;

/**
 * Status codes returned by every fallible call.
 */
typedef enum SfStatus {
  SF_STATUS_OK = 0,
  SF_STATUS_NULL_POINTER = 1,
  SF_STATUS_INVALID_ARGUMENT = 2,
  SF_STATUS_UNSUPPORTED = 3,
  SF_STATUS_ESTIMATION_FAILED = 4,
  SF_STATUS_PARSE = 5,
  SF_STATUS_INTERNAL = 6,
} SfStatus;

/**
 * `F_1` under forgets.
 */
typedef struct SfF1 SfF1;

/**
 * `l_2` heavy hitters under contractions.
 */
typedef struct SfHeavyHitters SfHeavyHitters;

/**
 * A parsed stream file.
 */
typedef struct SfStream SfStream;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static description of a status code.
 */
const char *sf_status_message(enum SfStatus status);

/**
 * Creates an `F_1` sketch. `alpha` is the promised forgotten fraction.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum SfStatus sf_f1_new(double eps,
                        double delta,
                        double alpha,
                        uint64_t m_bound,
                        uint64_t seed,
                        struct SfF1 **out);

/**
 * # Safety
 * `handle` must come from [`sf_f1_new`] and not be freed.
 */
enum SfStatus sf_f1_insert(struct SfF1 *handle, uint64_t index, uint64_t count);

/**
 * # Safety
 * `handle` must come from [`sf_f1_new`] and not be freed.
 */
enum SfStatus sf_f1_forget(struct SfF1 *handle, uint64_t index);

/**
 * # Safety
 * `handle` must come from [`sf_f1_new`]; `out` must be writable.
 */
enum SfStatus sf_f1_estimate(const struct SfF1 *handle, double *out);

/**
 * # Safety
 * `handle` must be null or come from [`sf_f1_new`], and is invalid after.
 */
void sf_f1_free(struct SfF1 *handle);

/**
 * Creates a heavy-hitter tracker for keys `1..=n`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum SfStatus sf_hh_new(double eps,
                        double alpha,
                        uint64_t n,
                        uint64_t seed,
                        struct SfHeavyHitters **out);

/**
 * # Safety
 * `handle` must come from [`sf_hh_new`] and not be freed.
 */
enum SfStatus sf_hh_insert(struct SfHeavyHitters *handle, uint64_t index, uint64_t count);

/**
 * Applies a contraction to coordinate `index`; `arg` is read by
 * `SUBTRACT` and `CAP` only.
 *
 * # Safety
 * `handle` must come from [`sf_hh_new`] and not be freed.
 */
enum SfStatus sf_hh_apply(struct SfHeavyHitters *handle,
                          uint64_t index,
                          enum SfOp op,
                          uint64_t arg);

/**
 * Estimate of coordinate `index`; 0 for coordinates never heavy.
 *
 * # Safety
 * `handle` must come from [`sf_hh_new`]; `out` must be writable.
 */
enum SfStatus sf_hh_query(const struct SfHeavyHitters *handle, uint64_t index, uint64_t *out);

/**
 * # Safety
 * `handle` must be null or come from [`sf_hh_new`], and is invalid after.
 */
void sf_hh_free(struct SfHeavyHitters *handle);

/**
 * Parses stream text (NUL-terminated, UTF-8).
 *
 * # Safety
 * `text` must be a valid NUL-terminated string; `out` must be writable.
 */
enum SfStatus sf_stream_parse(const char *text, struct SfStream **out);

/**
 * Number of updates in a parsed stream.
 *
 * # Safety
 * `handle` must come from [`sf_stream_parse`] and not be freed.
 */
size_t sf_stream_len(const struct SfStream *handle);

/**
 * Exact `F_p` of the stream after all deletions.
 *
 * # Safety
 * `handle` must come from [`sf_stream_parse`]; `out` must be writable.
 */
enum SfStatus sf_stream_exact_fp(const struct SfStream *handle, double p, double *out);

/**
 * # Safety
 * `handle` must be null or come from [`sf_stream_parse`], and is invalid
 * after.
 */
void sf_stream_free(struct SfStream *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STREAMFORGE_H */
