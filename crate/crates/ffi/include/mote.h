#ifndef MOTE_FFI_H
#define MOTE_FFI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MoteStatus {
  MOTE_STATUS_OK = 0,
  MOTE_STATUS_NULL_POINTER = 1,
  MOTE_STATUS_INVALID_UTF8 = 2,
  MOTE_STATUS_INVALID_ARGUMENT = 3,
  MOTE_STATUS_CONFIG = 4,
  MOTE_STATUS_IO = 5,
  MOTE_STATUS_PARSE = 6,
  MOTE_STATUS_SHAPE = 7,
  MOTE_STATUS_PANIC = 8,
} MoteStatus;

/**
 * Opaque model loaded from a checkpoint directory.
 */
typedef struct MoteModelHandle MoteModelHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *mote_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mote_version(void);

/**
 * Loads a source-model or mixture checkpoint directory into `*out`.
 *
 * # Safety
 * `dir` must be a NUL-terminated path and `out` a writable pointer.
 */
enum MoteStatus mote_model_load(const char *dir, struct MoteModelHandle **out);

/**
 * Releases a handle from [`mote_model_load`]; null is ignored.
 *
 * # Safety
 * `handle` must be null or a live handle not freed before.
 */
void mote_model_free(struct MoteModelHandle *handle);

/**
 * Number of classes the model predicts, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
size_t mote_model_classes(const struct MoteModelHandle *handle);

/**
 * True when the handle holds a mixture of temporal experts.
 *
 * # Safety
 * `handle` must be null or a live handle.
 */
bool mote_model_is_mixture(const struct MoteModelHandle *handle);

/**
 * Writes class probabilities for whitespace-separated `text` into
 * `probs[0..classes]`. `len` must be at least the class count.
 *
 * # Safety
 * `handle` must be a live handle, `text` a NUL-terminated string and
 * `probs` writable for `len` values.
 */
enum MoteStatus mote_model_predict(const struct MoteModelHandle *handle,
                                   const char *text,
                                   double *probs,
                                   size_t len);

/**
 * Macro-averaged F1 over `n` gold/predicted label pairs.
 *
 * # Safety
 * `labels` and `predicted` must hold `n` values; `out` must be writable.
 */
enum MoteStatus mote_macro_f1(const size_t *labels,
                              const size_t *predicted,
                              size_t n,
                              size_t classes,
                              double *out);

/**
 * Macro-averaged one-vs-rest ROC-AUC. `scores` is row-major `n × classes`.
 *
 * # Safety
 * `labels` must hold `n` values, `scores` `n * classes` values, and `out`
 * must be writable.
 */
enum MoteStatus mote_auc_macro(const size_t *labels,
                               const double *scores,
                               size_t n,
                               size_t classes,
                               double *out);

/**
 * Runs the experiment described by a config file and writes its reports.
 * A non-null `out_dir` replaces the configured output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_dir` must be null or
 * a NUL-terminated string.
 */
enum MoteStatus mote_run_experiment(const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOTE_FFI_H */
