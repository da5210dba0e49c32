/* Generated by cbindgen from crates/ffi; do not edit. */

#ifndef SNIP_H
#define SNIP_H

#include <stdint.h>
#include <stddef.h>

/**
 * Result of every fallible call.
 */
typedef enum SnipStatus {
  SNIP_STATUS_OK = 0,
  SNIP_STATUS_NULL_ARGUMENT = 1,
  SNIP_STATUS_CONFIG = 2,
  SNIP_STATUS_DATA = 3,
  SNIP_STATUS_NUMERICS = 4,
  SNIP_STATUS_SHAPE = 5,
  SNIP_STATUS_DOMAIN = 6,
  SNIP_STATUS_STATE = 7,
  SNIP_STATUS_FORMAT = 8,
  SNIP_STATUS_IO = 9,
  SNIP_STATUS_PANIC = 10,
} SnipStatus;

/**
 * Images and labels loaded from an IDX file pair.
 */
typedef struct SnipDataset SnipDataset;

/**
 * A network with its weights and masks (f32).
 */
typedef struct SnipModel SnipModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *snip_last_error(void);

/**
 * Library version, static storage.
 */
const char *snip_version(void);

/**
 * Builds `model` ("lenet300", "lenet5caffe", "lstm_s", "gru_s") with
 * `init` ("rn", "tn", "vsx", "vsh") from `seed`.
 *
 * # Safety
 * `model` and `init` must be NUL-terminated strings; `out` must be writable.
 */
enum SnipStatus snip_model_new(const char *model,
                               const char *init,
                               uint64_t seed,
                               struct SnipModel **out);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SnipStatus snip_model_load(const char *path, struct SnipModel **out);

/**
 * Writes weights and masks to `path`.
 *
 * # Safety
 * `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum SnipStatus snip_model_save(const struct SnipModel *model, const char *path);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void snip_model_free(struct SnipModel *model);

/**
 * Parameter counts: all, prunable, and prunable entries currently retained.
 *
 * # Safety
 * `model` must come from this library; output pointers must be writable.
 */
enum SnipStatus snip_model_counts(const struct SnipModel *model,
                                  uint64_t *total,
                                  uint64_t *prunable,
                                  uint64_t *retained);

/**
 * Copies the prunable masks, flattened in parameter order, as 0/1 bytes.
 * `len` must equal the prunable count.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum SnipStatus snip_model_masks(const struct SnipModel *model, uint8_t *buf, uintptr_t len);

/**
 * Loads an IDX image/label file pair.
 *
 * # Safety
 * Paths must be NUL-terminated strings; `out` must be writable.
 */
enum SnipStatus snip_dataset_load(const char *images, const char *labels, struct SnipDataset **out);

/**
 * Number of examples.
 *
 * # Safety
 * `dataset` must come from this library; `out` must be writable.
 */
enum SnipStatus snip_dataset_len(const struct SnipDataset *dataset, uint64_t *out);

/**
 * Releases a dataset; null is ignored.
 *
 * # Safety
 * `dataset` must come from this library and not be used afterwards.
 */
void snip_dataset_free(struct SnipDataset *dataset);

/**
 * Prunes an untrained model in place to sparsity `kappa_bar` percent using
 * `criterion` ("snip", "magnitude", "grad_magnitude", "random") on
 * `saliency_batch` examples drawn from `dataset` with `seed`.
 *
 * # Safety
 * Handles must come from this library; `criterion` must be a NUL-terminated
 * string; `retained` may be null.
 */
enum SnipStatus snip_prune(struct SnipModel *model,
                           const struct SnipDataset *dataset,
                           const char *criterion,
                           double kappa_bar,
                           uintptr_t saliency_batch,
                           uint64_t seed,
                           uint64_t *retained);

/**
 * Trains with the default optimizer (SGD, momentum 0.9, lr 0.1, or 0.05
 * for lenet5caffe) for
 * `iterations` steps of batch 100, keeping masks fixed. Writes the final
 * test error (%) on `eval` to `test_err` if non-null.
 *
 * # Safety
 * Handles must come from this library; `test_err` may be null.
 */
enum SnipStatus snip_train(struct SnipModel *model,
                           const struct SnipDataset *train_set,
                           const struct SnipDataset *eval,
                           uint64_t iterations,
                           uint64_t seed,
                           double *test_err);

/**
 * Classification error (%) of `model` on `dataset`.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum SnipStatus snip_evaluate(const struct SnipModel *model,
                              const struct SnipDataset *dataset,
                              double *out);

/**
 * Runs the command-line front end with `argc` arguments (program name
 * first) and returns its exit code.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int snip_cli_run(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SNIP_H */
