/* C API of the tsan detection engine. Generated; do not edit. */

#ifndef TSAN_H
#define TSAN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a C API call.
 */
typedef enum TsanStatus {
  TSAN_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TSAN_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  TSAN_STATUS_INVALID_UTF8 = 2,
  /**
   * File could not be read or written.
   */
  TSAN_STATUS_IO = 3,
  /**
   * File exists but is not a valid checkpoint.
   */
  TSAN_STATUS_FORMAT = 4,
  /**
   * Input dimensions disagree with the model.
   */
  TSAN_STATUS_SHAPE = 5,
  /**
   * Invalid configuration or misuse of the API.
   */
  TSAN_STATUS_INVALID = 6,
} TsanStatus;

/**
 * Opaque handle to a loaded detection model.
 */
typedef struct TsanModel TsanModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build version of the library as a static NUL-terminated string.
 */
const char *tsan_version(void);

/**
 * Description of the most recent failure on this thread; the empty
 * string when there was none. The pointer stays valid until the next
 * call into this library from the same thread.
 */
const char *tsan_last_error(void);

/**
 * Load a checkpoint from `path` into `*out_model`. On success the
 * caller owns the handle and must release it with [`tsan_model_free`].
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out_model` to a
 * writable pointer slot.
 */
enum TsanStatus tsan_model_load(const char *path, struct TsanModel **out_model);

/**
 * Release a handle obtained from [`tsan_model_load`]. A null pointer
 * is a no-op.
 *
 * # Safety
 * `model` must be null or a pointer returned by [`tsan_model_load`]
 * that has not been freed yet.
 */
void tsan_model_free(struct TsanModel *model);

/**
 * Window length `w` the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tsan_model_window_len(const struct TsanModel *model);

/**
 * Feature width `f` the model expects; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t tsan_model_feature_width(const struct TsanModel *model);

/**
 * Decision threshold stored in the checkpoint; NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double tsan_model_threshold(const struct TsanModel *model);

/**
 * Score `n` windows. `x_temporal` holds `n * w * f` floats and
 * `x_spatial` holds `n * f` floats, both row-major; `scores` receives
 * `n` DoS probabilities. `decisions` may be null, otherwise it
 * receives `n` 0/1 verdicts at the model's stored threshold.
 *
 * # Safety
 * All non-null pointers must reference buffers of the sizes above.
 */
enum TsanStatus tsan_model_predict(const struct TsanModel *model,
                                   const float *x_temporal,
                                   const float *x_spatial,
                                   size_t n,
                                   float *scores,
                                   uint8_t *decisions);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSAN_H */
