#ifndef TARPRO_H
#define TARPRO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TarproStatus {
  TARPRO_STATUS_OK = 0,
  TARPRO_STATUS_NULL_POINTER = 1,
  TARPRO_STATUS_INVALID_INPUT = 2,
  TARPRO_STATUS_SHAPE = 3,
  TARPRO_STATUS_NUMERIC = 4,
  TARPRO_STATUS_PARSE = 5,
  TARPRO_STATUS_CONFIG = 6,
  TARPRO_STATUS_CHECKPOINT_NOT_FOUND = 7,
  TARPRO_STATUS_CHECKPOINT = 8,
  TARPRO_STATUS_IO = 9,
  TARPRO_STATUS_UTF8 = 10,
  TARPRO_STATUS_PANIC = 11,
} TarproStatus;

/**
 * Labelled dataset.
 */
typedef struct TarproDataset TarproDataset;

/**
 * Trained pipeline.
 */
typedef struct TarproPipeline TarproPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *tarpro_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tarpro_version(void);

/**
 * Generate the benchmark dataset described by `config` (NULL for defaults).
 */
enum TarproStatus tarpro_dataset_generate(const char *config, struct TarproDataset **out);

/**
 * Build a dataset from row-major inputs, labels and domain ids.
 */
enum TarproStatus tarpro_dataset_from_arrays(const double *x,
                                             const size_t *labels,
                                             const size_t *domains,
                                             size_t n_rows,
                                             size_t n_cols,
                                             struct TarproDataset **out);

enum TarproStatus tarpro_dataset_load_csv(const char *path, struct TarproDataset **out);

void tarpro_dataset_free(struct TarproDataset *d);

/**
 * Number of rows and input columns.
 */
enum TarproStatus tarpro_dataset_shape(const struct TarproDataset *d,
                                       size_t *n_rows,
                                       size_t *n_cols);

/**
 * Copy inputs (row-major), labels and domain ids. Any output may be NULL
 * to skip it; `capacity` is the row capacity of the outputs.
 */
enum TarproStatus tarpro_dataset_copy(const struct TarproDataset *d,
                                      double *x,
                                      size_t *labels,
                                      size_t *domains,
                                      size_t capacity);

/**
 * Train a full pipeline on the configured source domains of `data`.
 */
enum TarproStatus tarpro_pipeline_train(const char *config,
                                        const struct TarproDataset *data,
                                        struct TarproPipeline **out);

enum TarproStatus tarpro_pipeline_load(const char *path, struct TarproPipeline **out);

enum TarproStatus tarpro_pipeline_save(const struct TarproPipeline *p, const char *path);

void tarpro_pipeline_free(struct TarproPipeline *p);

/**
 * Input width, feature width and class count.
 */
enum TarproStatus tarpro_pipeline_dims(const struct TarproPipeline *p,
                                       size_t *input_dim,
                                       size_t *feature_dim,
                                       size_t *num_classes);

/**
 * Hash of every model parameter.
 */
enum TarproStatus tarpro_pipeline_fingerprint(const struct TarproPipeline *p, uint64_t *out);

/**
 * Extractor features of `n_rows` inputs; `out` receives
 * `n_rows * feature_dim` values.
 */
enum TarproStatus tarpro_pipeline_embed(const struct TarproPipeline *p,
                                        const double *x,
                                        size_t n_rows,
                                        size_t n_cols,
                                        double *out,
                                        size_t out_len);

/**
 * Predicted labels for `n_rows` inputs. Targets are projected when the
 * pipeline has a sampler. `threads` = 0 uses the default pool size.
 */
enum TarproStatus tarpro_pipeline_infer(const struct TarproPipeline *p,
                                        const double *x,
                                        size_t n_rows,
                                        size_t n_cols,
                                        size_t threads,
                                        size_t *labels_out,
                                        size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TARPRO_H */
