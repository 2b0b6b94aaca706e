#ifndef UNCERTSEG_H
#define UNCERTSEG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum UsStatus {
  US_STATUS_OK = 0,
  US_STATUS_INVALID_ARGUMENT = 1,
  US_STATUS_SHAPE = 2,
  US_STATUS_NON_FINITE = 3,
  US_STATUS_FORMAT = 4,
  US_STATUS_IO = 5,
  US_STATUS_NULL_POINTER = 6,
  US_STATUS_PANIC = 7,
} UsStatus;

typedef enum UsVariant {
  US_VARIANT_UNET = 0,
  US_VARIANT_U2NET = 1,
  US_VARIANT_BUNET = 2,
} UsVariant;

/**
 * Network mode. Training uses batch statistics and dropout, evaluation
 * neither; MC sampling uses running statistics with dropout active.
 */
typedef enum UsMode {
  US_MODE_TRAIN = 0,
  US_MODE_EVAL = 1,
  US_MODE_MC_SAMPLE = 2,
} UsMode;

/**
 * Segmentation network with its weights and batch-norm statistics.
 */
typedef struct UsNetwork UsNetwork;

/**
 * Dense row-major f32 tensor.
 */
typedef struct UsTensor UsTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *us_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *us_last_error(void);

/**
 * Creates a tensor of the given shape. `data` holds the product of the
 * extents in row-major order, or is NULL for zeros.
 *
 * # Safety
 * `shape` must point to `ndim` values; `data`, when non-NULL, to as many
 * floats as the shape implies.
 */
enum UsStatus us_tensor_new(const size_t *shape,
                            size_t ndim,
                            const float *data,
                            struct UsTensor **out);

/**
 * # Safety
 * `t` must be NULL or a handle from this library not yet freed.
 */
void us_tensor_free(struct UsTensor *t);

/**
 * Number of dimensions, 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t us_tensor_ndim(const struct UsTensor *t);

/**
 * Number of elements, 0 for NULL.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
size_t us_tensor_len(const struct UsTensor *t);

/**
 * Copies the extents into `out`, which has room for `cap` values.
 *
 * # Safety
 * `t` must be a live handle and `out` writable for `cap` values.
 */
enum UsStatus us_tensor_shape(const struct UsTensor *t, size_t *out, size_t cap);

/**
 * Borrowed pointer to the elements, valid while the handle lives; NULL
 * for a NULL handle.
 *
 * # Safety
 * `t` must be NULL or a live handle.
 */
const float *us_tensor_data(const struct UsTensor *t);

/**
 * Reads a `.tnsr` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum UsStatus us_tensor_load(const char *path, struct UsTensor **out);

/**
 * Writes a `.tnsr` file.
 *
 * # Safety
 * `t` must be a live handle and `path` a NUL-terminated string.
 */
enum UsStatus us_tensor_save(const struct UsTensor *t, const char *path);

/**
 * Builds a freshly initialised network with `base_width` channels in the
 * first block. The network starts in eval mode.
 *
 * # Safety
 * `out` must be writable.
 */
enum UsStatus us_network_build(enum UsVariant variant,
                               size_t base_width,
                               uint64_t seed,
                               struct UsNetwork **out);

/**
 * Loads a checkpoint directory. The network starts in eval mode.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` writable.
 */
enum UsStatus us_network_load(const char *dir, struct UsNetwork **out);

/**
 * Writes a checkpoint directory.
 *
 * # Safety
 * `net` must be a live handle and `dir` a NUL-terminated string.
 */
enum UsStatus us_network_save(const struct UsNetwork *net, const char *dir);

/**
 * # Safety
 * `net` must be NULL or a handle from this library not yet freed.
 */
void us_network_free(struct UsNetwork *net);

/**
 * # Safety
 * `net` must be a live handle.
 */
enum UsStatus us_network_set_mode(struct UsNetwork *net, enum UsMode mode);

/**
 * Number of layers with a non-zero dropout rate, 0 for NULL.
 *
 * # Safety
 * `net` must be NULL or a live handle.
 */
size_t us_network_dropout_sites(const struct UsNetwork *net);

/**
 * Monte-Carlo prediction of one `[H, W]` B-scan: `samples` stochastic
 * passes, pixel-wise mean foreground probability and standard deviation.
 * The network must be in eval or MC-sample mode. Results do not depend on
 * `threads`.
 *
 * # Safety
 * `net` and `bscan` must be live handles; `out_mean` and `out_std`
 * writable.
 */
enum UsStatus us_mc_predict(const struct UsNetwork *net,
                            const struct UsTensor *bscan,
                            size_t samples,
                            uint64_t seed,
                            size_t threads,
                            struct UsTensor **out_mean,
                            struct UsTensor **out_std);

/**
 * Otsu binarisation of an `[H, W]` probability map into a `{0, 1}` mask.
 * `out_degenerate` (optional) is set to 1 when the map has fewer than two
 * occupied histogram bins, in which case the mask is empty.
 *
 * # Safety
 * `prob` must be a live handle, `out_mask` and `out_threshold` writable,
 * `out_degenerate` NULL or writable.
 */
enum UsStatus us_otsu_threshold(const struct UsTensor *prob,
                                struct UsTensor **out_mask,
                                float *out_threshold,
                                int32_t *out_degenerate);

/**
 * Dice overlap of two `[H, W]` `{0, 1}` masks; two empty masks score 1.
 *
 * # Safety
 * `a` and `b` must be live handles and `out` writable.
 */
enum UsStatus us_dice(const struct UsTensor *a, const struct UsTensor *b, double *out);

/**
 * Area under the precision-recall curve (average precision) of `n`
 * scores against labels (non-zero = positive).
 *
 * # Safety
 * `scores` and `labels` must point to `n` values and `out` be writable.
 */
enum UsStatus us_pr_auc(const float *scores, const uint8_t *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNCERTSEG_H */
