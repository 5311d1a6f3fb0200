#ifndef CARP_H
#define CARP_H

/* Generated by cbindgen from the carp-ffi crate; do not edit by hand. Regenerate with: CARP_FFI_REGEN=1 cargo test -p carp-ffi --test header_sync */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code for every fallible call in this API.
 */
typedef enum CarpStatus {
  /**
   * The call succeeded.
   */
  CARP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  CARP_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  CARP_STATUS_INVALID_UTF8 = 2,
  /**
   * A configuration key or value was rejected; see `carp_last_error`.
   */
  CARP_STATUS_INVALID_CONFIG = 3,
  /**
   * A non-config argument was out of range or mis-shaped.
   */
  CARP_STATUS_INVALID_ARGUMENT = 4,
  /**
   * Training, evaluation, or file I/O failed; see `carp_last_error`.
   */
  CARP_STATUS_RUN_FAILED = 5,
  /**
   * An internal invariant broke. The message from `carp_last_error`
   * is the panic payload.
   */
  CARP_STATUS_PANIC = 6,
} CarpStatus;

/**
 * Opaque run-configuration builder. Starts from the library defaults;
 * `carp_config_set` overrides one key at a time, keeping the same
 * key=value vocabulary as the CLI's config files.
 */
typedef struct CarpConfig CarpConfig;

/**
 * Opaque trained model loaded from a checkpoint.
 */
typedef struct CarpModel CarpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of this library as a static NUL-terminated string.
 */
const char *carp_version(void);

/**
 * Message for the most recent failure on the calling thread, UTF-8 and
 * NUL-terminated. Never null; empty when nothing has failed yet. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *carp_last_error(void);

/**
 * Allocate a configuration holding the library defaults. Returns null
 * only when allocation itself fails. Free with `carp_config_free`.
 */
struct CarpConfig *carp_config_new(void);

/**
 * Free a configuration. Null is a no-op.
 *
 * # Safety
 * `cfg` must be null or a live pointer from `carp_config_new`, and must
 * not be used afterwards.
 */
void carp_config_free(struct CarpConfig *cfg);

/**
 * Set one configuration key, e.g. ("epochs", "300"). The pair is
 * validated together with everything set so far; on failure the
 * configuration is left unchanged. Later sets of the same key win.
 *
 * # Safety
 * `cfg` must be a live pointer from `carp_config_new`; `key` and `value`
 * must be NUL-terminated strings.
 */
enum CarpStatus carp_config_set(struct CarpConfig *cfg, const char *key, const char *value);

/**
 * Replace the configuration with the contents of a config file (the same
 * format the CLI reads). On failure the configuration is left unchanged.
 *
 * # Safety
 * `cfg` must be a live pointer from `carp_config_new`; `path` must be a
 * NUL-terminated string.
 */
enum CarpStatus carp_config_load_file(struct CarpConfig *cfg, const char *path);

/**
 * Render the fully resolved configuration (defaults plus every override)
 * as the same key=value text the CLI writes to resolved-config.txt.
 * Returns a heap string to release with `carp_string_free`, or null on
 * failure.
 *
 * # Safety
 * `cfg` must be a live pointer from `carp_config_new`.
 */
char *carp_config_render(const struct CarpConfig *cfg);

/**
 * Free a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer returned by a `carp_*` call that
 * documents `carp_string_free`, and must not be used afterwards.
 */
void carp_string_free(char *s);

/**
 * Train with the given configuration and write the artifact set into
 * `out_dir` (created if needed): metrics.jsonl, student.ckpt,
 * teacher.ckpt, resolved-config.txt, plus eval.jsonl when eval_every > 0.
 * Identical configurations produce byte-identical artifacts.
 *
 * # Safety
 * `cfg` must be a live pointer from `carp_config_new`; `out_dir` must be
 * a NUL-terminated string.
 */
enum CarpStatus carp_train(const struct CarpConfig *cfg, const char *out_dir);

/**
 * Load a model from a checkpoint written by `carp_train` or the CLI
 * (student.ckpt / teacher.ckpt). Returns null on failure; see
 * `carp_last_error`. Free with `carp_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
struct CarpModel *carp_model_load(const char *path);

/**
 * Free a model. Null is a no-op.
 *
 * # Safety
 * `model` must be null or a live pointer from `carp_model_load`, and
 * must not be used afterwards.
 */
void carp_model_free(struct CarpModel *model);

/**
 * Input dimension the model expects, or 0 when `model` is null.
 *
 * # Safety
 * `model` must be null or a live pointer from `carp_model_load`.
 */
size_t carp_model_input_dim(const struct CarpModel *model);

/**
 * Dimension of the embeddings the model produces, or 0 when `model` is
 * null.
 *
 * # Safety
 * `model` must be null or a live pointer from `carp_model_load`.
 */
size_t carp_model_embedding_dim(const struct CarpModel *model);

/**
 * Embed `rows` samples of `cols` features each (row-major doubles) and
 * write `rows * carp_model_embedding_dim(model)` doubles to `out`,
 * row-major. Rows are l2-normalized, so dot products of outputs are
 * cosine similarities. `cols` must equal `carp_model_input_dim(model)`.
 *
 * # Safety
 * `model` must be a live pointer from `carp_model_load`. Unless
 * `rows == 0`, `samples` must point at `rows * cols` readable doubles and
 * `out` at `rows * carp_model_embedding_dim(model)` writable doubles.
 */
enum CarpStatus carp_model_embed(const struct CarpModel *model,
                                 const double *samples,
                                 size_t rows,
                                 size_t cols,
                                 double *out);

/**
 * Leave-one-out k-NN accuracy of the model's embeddings on a labeled
 * sample set: each sample is classified by its k nearest neighbors
 * (cosine similarity, exp(sim/tau) vote weights) among the other rows,
 * and the fraction classified correctly is written to `out_accuracy`.
 *
 * # Safety
 * `model` must be a live pointer from `carp_model_load`; `samples` must
 * point at `rows * cols` readable doubles, `labels` at `rows` readable
 * 32-bit labels, and `out_accuracy` at one writable double.
 */
enum CarpStatus carp_knn_accuracy(const struct CarpModel *model,
                                  const double *samples,
                                  const uint32_t *labels,
                                  size_t rows,
                                  size_t cols,
                                  size_t k,
                                  double tau,
                                  double *out_accuracy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CARP_H */
