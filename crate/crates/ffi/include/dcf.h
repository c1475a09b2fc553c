#ifndef DCF_H
#define DCF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every entry point.
typedef enum DcfStatus {
  DCF_STATUS_OK = 0,
  DCF_STATUS_NULL_POINTER = 1,
  DCF_STATUS_INVALID_ARGUMENT = 2,
  DCF_STATUS_DIMENSION_MISMATCH = 3,
  DCF_STATUS_EMPTY_DATASET = 4,
  DCF_STATUS_DATA_ERROR = 5,
  DCF_STATUS_IO_ERROR = 6,
  DCF_STATUS_FORMAT_ERROR = 7,
  DCF_STATUS_SOLVER_ERROR = 8,
  DCF_STATUS_PANIC = 9,
} DcfStatus;

// Opaque fitted model.
typedef struct DcfModel DcfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *dcf_version(void);

// Message for the last failed call on this thread, or an empty string.
// The pointer stays valid until the next call into the library on this thread.
const char *dcf_last_error_message(void);

// Fits a model on `n` row-major rows of `d` covariates `x` and responses `y`.
//
// `variant`, `kind` and `theta2` take the CLI names (for example
// `"symmetric"`, `"linf"`, `"strong"`); null selects `symmetric`, `linf`
// and `strong`. On success `*out` receives a handle owned by the caller.
//
// # Safety
// `x` must point to `n * d` doubles, `y` to `n` doubles, and string
// arguments must be null or NUL-terminated.
enum DcfStatus dcf_fit(const double *x,
                       const double *y,
                       size_t n,
                       size_t d,
                       const char *variant,
                       const char *kind,
                       const char *theta2,
                       uint64_t seed,
                       struct DcfModel **out);

// Loads a model saved by `dcf_model_save` or the `dcf fit` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum DcfStatus dcf_model_load(const char *path, struct DcfModel **out);

// Writes `model` as JSON to `path`.
//
// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum DcfStatus dcf_model_save(const struct DcfModel *model, const char *path);

// Evaluates `model` on `n` row-major rows of `d` covariates, writing `n` values to `out`.
//
// # Safety
// `x` must point to `n * d` doubles and `out` to room for `n` doubles.
enum DcfStatus dcf_model_predict(const struct DcfModel *model,
                                 const double *x,
                                 size_t n,
                                 size_t d,
                                 double *out);

// Covariate dimension of `model`.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DcfStatus dcf_model_dim(const struct DcfModel *model, size_t *out);

// Piece counts: `pieces[0]` for the first (or only) component and
// `pieces[1]` for the subtracted component, zero when absent.
//
// # Safety
// `model` must be a live handle and `pieces` must have room for two values.
enum DcfStatus dcf_model_num_pieces(const struct DcfModel *model, size_t *pieces);

// Total parameter count of `model`.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DcfStatus dcf_model_num_params(const struct DcfModel *model, size_t *out);

// Largest slope norm over the pieces of `model`.
//
// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum DcfStatus dcf_model_lip_stat(const struct DcfModel *model, double *out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void dcf_model_free(struct DcfModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCF_H */
