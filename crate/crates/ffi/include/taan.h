#ifndef TAAN_H
#define TAAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum TaanStatus {
  TAAN_STATUS_OK = 0,
  TAAN_STATUS_NULL_POINTER = 1,
  TAAN_STATUS_INVALID_ARGUMENT = 2,
  TAAN_STATUS_SHAPE = 3,
  TAAN_STATUS_NUMERIC = 4,
  TAAN_STATUS_UNKNOWN_TASK = 5,
  TAAN_STATUS_IO = 6,
  TAAN_STATUS_PARSE = 7,
  TAAN_STATUS_PANIC = 8,
} TaanStatus;

/**
 * Opaque Gram cache for one basis grid and mixture.
 */
typedef struct TaanGramHandle TaanGramHandle;

/**
 * Opaque trained model.
 */
typedef struct TaanModelHandle TaanModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *taan_last_error_message(void);

/**
 * Loads a JSON checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TaanStatus taan_model_load(const char *path, struct TaanModelHandle **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`taan_model_load`] and not be used afterwards.
 */
void taan_model_free(struct TaanModelHandle *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TaanStatus taan_model_task_count(const struct TaanModelHandle *model, size_t *out);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TaanStatus taan_model_input_dim(const struct TaanModelHandle *model, size_t *out);

/**
 * Output width of `task`'s head.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TaanStatus taan_model_output_dim(const struct TaanModelHandle *model,
                                      size_t task,
                                      size_t *out);

/**
 * Forward pass for `task` on `rows` row-major inputs of width
 * `cols`. Writes `rows * output_dim` values to `output`.
 *
 * # Safety
 * `input` must hold `rows * cols` values and `output` `output_len` values.
 */
enum TaanStatus taan_model_forward(const struct TaanModelHandle *model,
                                   size_t task,
                                   const double *input,
                                   size_t rows,
                                   size_t cols,
                                   double *output,
                                   size_t output_len);

/**
 * Gram cache for the model's own grid and mixture.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum TaanStatus taan_model_gram(const struct TaanModelHandle *model, struct TaanGramHandle **out);

/**
 * Gram cache for `basis_count` evenly spaced breakpoints on `[lo, hi]`
 * under a standard normal weighting.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TaanStatus taan_gram_new_uniform(size_t basis_count,
                                      double lo,
                                      double hi,
                                      struct TaanGramHandle **out);

/**
 * Releases a Gram handle; null is ignored.
 *
 * # Safety
 * `gram` must come from this library and not be used afterwards.
 */
void taan_gram_free(struct TaanGramHandle *gram);

/**
 * # Safety
 * `gram` must be a live handle and `out` a valid pointer.
 */
enum TaanStatus taan_gram_basis_count(const struct TaanGramHandle *gram, size_t *out);

/**
 * Gaussian-weighted inner product of two activations given by their
 * coordinate vectors of length `len`.
 *
 * # Safety
 * `c1` and `c2` must hold `len` values; `out` must be valid.
 */
enum TaanStatus taan_inner_product(const struct TaanGramHandle *gram,
                                   const double *c1,
                                   const double *c2,
                                   size_t len,
                                   double *out);

/**
 * Squared functional distance between two activations.
 *
 * # Safety
 * `c1` and `c2` must hold `len` values; `out` must be valid.
 */
enum TaanStatus taan_distance_sq(const struct TaanGramHandle *gram,
                                 const double *c1,
                                 const double *c2,
                                 size_t len,
                                 double *out);

/**
 * Pairwise distances of `tasks` row-major coordinate rows of width
 * `basis_count`; writes `tasks * tasks` values to `out`.
 *
 * # Safety
 * `alpha` must hold `tasks * basis_count` values and `out` `tasks * tasks`.
 */
enum TaanStatus taan_distance_matrix(const struct TaanGramHandle *gram,
                                     const double *alpha,
                                     size_t tasks,
                                     size_t basis_count,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TAAN_H */
