#ifndef GOALFACTOR_H
#define GOALFACTOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_UTF8 = 2,
  GF_STATUS_IO = 3,
  GF_STATUS_FORMAT = 4,
  GF_STATUS_INVALID_ARGUMENT = 5,
  GF_STATUS_BUFFER_TOO_SMALL = 6,
  GF_STATUS_NUMERIC = 7,
  GF_STATUS_PANIC = 99,
} GfStatus;

typedef struct GfCorpus GfCorpus;

typedef struct GfMatrix GfMatrix;

typedef struct GfModel GfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// Valid until the next goalfactor call on the same thread.
const char *gf_last_error(void);

const char *gf_version(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum GfStatus gf_corpus_load(const char *path, struct GfCorpus **out);

// # Safety
// `corpus` must come from `gf_corpus_load` and not be freed.
size_t gf_corpus_len(const struct GfCorpus *corpus);

// # Safety
// `corpus` must come from `gf_corpus_load` (or be null) and is invalid afterwards.
void gf_corpus_free(struct GfCorpus *corpus);

// Reads an `ILFM` file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum GfStatus gf_matrix_load(const char *path, struct GfMatrix **out);

// Copies `rows * cols` row-major scores into a new real-valued matrix.
//
// # Safety
// `values` must point to `rows * cols` floats and `out` be writable.
enum GfStatus gf_matrix_new(size_t rows, size_t cols, const float *values, struct GfMatrix **out);

// # Safety
// `matrix` must be a live handle and `path` a NUL-terminated string.
enum GfStatus gf_matrix_save(const struct GfMatrix *matrix, const char *path);

// # Safety
// `matrix` must be a live handle or null.
size_t gf_matrix_rows(const struct GfMatrix *matrix);

// # Safety
// `matrix` must be a live handle or null.
size_t gf_matrix_cols(const struct GfMatrix *matrix);

// 1 when binarized, 0 otherwise (including null).
//
// # Safety
// `matrix` must be a live handle or null.
int32_t gf_matrix_is_binarized(const struct GfMatrix *matrix);

// Copies the row-major values into `buf`, which must hold `rows * cols` floats.
//
// # Safety
// `buf` must be writable for `len` floats.
enum GfStatus gf_matrix_values(const struct GfMatrix *matrix, float *buf, size_t len);

// New matrix with the top `round(fraction * rows * cols)` entries set to 1.
//
// # Safety
// `matrix` must be a live handle and `out` writable.
enum GfStatus gf_matrix_binarize(const struct GfMatrix *matrix,
                                 double fraction,
                                 struct GfMatrix **out);

// # Safety
// `matrix` must be a live handle or null and is invalid afterwards.
void gf_matrix_free(struct GfMatrix *matrix);

// Reads a model file written by `goalfactor discover`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum GfStatus gf_model_load(const char *path, struct GfModel **out);

// # Safety
// `model` must be a live handle or null.
size_t gf_model_num_factors(const struct GfModel *model);

// # Safety
// `model` must be a live handle or null.
size_t gf_model_num_properties(const struct GfModel *model);

// Latent coordinates of raw compatibility rows: gaussianize against the
// training reference, then project. `rows` is `n * num_properties` row-major;
// `z_out` receives `n * num_factors` values.
//
// # Safety
// Buffers must be valid for the stated lengths.
enum GfStatus gf_model_encode(const struct GfModel *model,
                              const double *rows,
                              size_t n,
                              double *z_out,
                              size_t z_len);

// # Safety
// `model` must be a live handle or null and is invalid afterwards.
void gf_model_free(struct GfModel *model);

// Gaussian total correlation (nats) of an `n x p` row-major sample.
//
// # Safety
// `data` must hold `n * p` doubles and `tc_out` be writable.
enum GfStatus gf_total_correlation(const double *data, size_t n, size_t p, double *tc_out);

// Rank-based inverse normal transform of each column of an `n x p`
// row-major sample, written to `out` (same shape).
//
// # Safety
// `data` and `out` must hold `n * p` doubles.
enum GfStatus gf_gaussianize(const double *data, size_t n, size_t p, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GOALFACTOR_H */
