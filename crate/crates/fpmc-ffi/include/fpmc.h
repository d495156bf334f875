/* C interface for the fpmc library. Generated by cbindgen; do not edit. */

#ifndef FPMC_H
#define FPMC_H

/* This file is auto-generated from the fpmc-ffi crate. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum FpmcStatus {
  FPMC_STATUS_OK = 0,
  // Invalid arguments, bad shapes, violated preconditions.
  FPMC_STATUS_VALIDATION_ERROR = 2,
  // Non-finite values or diverged computations.
  FPMC_STATUS_NUMERICAL_ERROR = 3,
  // File format or I/O problems.
  FPMC_STATUS_IO_ERROR = 4,
  // A required pointer argument was null.
  FPMC_STATUS_NULL_POINTER = 5,
} FpmcStatus;

// Opaque dataset handle.
typedef struct FpmcDataset FpmcDataset;

// Opaque collection-model handle.
typedef struct FpmcModelHandle FpmcModelHandle;

// Opaque Wiener-model handle (paired with the schedule it will be
// evaluated against).
typedef struct FpmcWienerHandle FpmcWienerHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static C string.
const char *fpmc_version(void);

// Copy the last error message (UTF-8, NUL-terminated) into `buf`. Returns
// the number of bytes written, excluding the terminator; 0 when no error
// has been recorded or `buf_len` is 0.
//
// # Safety
// `buf` must point to `buf_len` writable bytes (or be null, a no-op).
uintptr_t fpmc_last_error_message(char *buf, uintptr_t buf_len);

// Load a dataset from a tensor container file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FpmcStatus fpmc_dataset_load(const char *path, struct FpmcDataset **out);

// Number of images in the dataset.
//
// # Safety
// `handle` must come from `fpmc_dataset_load` and not be freed.
uintptr_t fpmc_dataset_len(const struct FpmcDataset *handle);

// Flat dimension (width * height * channels) of each image.
//
// # Safety
// `handle` must come from `fpmc_dataset_load` and not be freed.
uintptr_t fpmc_dataset_dim(const struct FpmcDataset *handle);

// Destroy a dataset handle (null is a no-op).
//
// # Safety
// `handle` must come from `fpmc_dataset_load` and not be freed twice.
void fpmc_dataset_free(struct FpmcDataset *handle);

// Load a persisted collection model directory.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum FpmcStatus fpmc_model_load(const char *dir, struct FpmcModelHandle **out);

// Number of schedule steps.
//
// # Safety
// `handle` must come from `fpmc_model_load` and not be freed.
uintptr_t fpmc_model_num_steps(const struct FpmcModelHandle *handle);

// Flat dimension of the model's images.
//
// # Safety
// `handle` must come from `fpmc_model_load` and not be freed.
uintptr_t fpmc_model_dim(const struct FpmcModelHandle *handle);

// Grid time of one schedule step; NaN for an invalid index.
//
// # Safety
// `handle` must come from `fpmc_model_load` and not be freed.
double fpmc_model_step_t(const struct FpmcModelHandle *handle, uintptr_t step);

// Denoise `batch` rows of length `dim` at a schedule step. `zs` and `out`
// are row-major `batch * dim` buffers; `out` is fully overwritten.
//
// # Safety
// `handle` must be a live model handle; `zs` and `out` must point to
// `batch * dim` readable/writable f64 values.
enum FpmcStatus fpmc_model_denoise(const struct FpmcModelHandle *handle,
                                   uintptr_t step,
                                   const double *zs,
                                   uintptr_t batch,
                                   uintptr_t dim,
                                   double *out);

// Draw `batch` samples by deterministic PF-ODE integration over the
// model's own schedule, writing a row-major `batch * dim` buffer.
//
// # Safety
// `handle` must be a live model handle; `out` must hold `batch * dim`
// writable f64 values.
enum FpmcStatus fpmc_model_sample(const struct FpmcModelHandle *handle,
                                  uintptr_t batch,
                                  uint64_t seed,
                                  double *out);

// Destroy a model handle (null is a no-op).
//
// # Safety
// `handle` must come from `fpmc_model_load` and not be freed twice.
void fpmc_model_free(struct FpmcModelHandle *handle);

// Fit a Wiener model (mean plus covariance eigendecomposition) on a dataset.
//
// # Safety
// `dataset` must be a live dataset handle and `out` a valid pointer.
enum FpmcStatus fpmc_wiener_fit(const struct FpmcDataset *dataset, struct FpmcWienerHandle **out);

// Wiener-denoise `batch` rows at time `t` (alpha = 1, sigma = t).
//
// # Safety
// `handle` must be a live Wiener handle; `zs` and `out` must point to
// `batch * dim` readable/writable f64 values.
enum FpmcStatus fpmc_wiener_denoise(const struct FpmcWienerHandle *handle,
                                    double t,
                                    const double *zs,
                                    uintptr_t batch,
                                    uintptr_t dim,
                                    double *out);

// Destroy a Wiener handle (null is a no-op).
//
// # Safety
// `handle` must come from `fpmc_wiener_fit` and not be freed twice.
void fpmc_wiener_free(struct FpmcWienerHandle *handle);

// Fill `out` (length `num_steps`) with the rho-interpolated descending
// time grid.
//
// # Safety
// `out` must hold `num_steps` writable f64 values.
enum FpmcStatus fpmc_edm_time_grid(uintptr_t num_steps,
                                   double t_min,
                                   double t_max,
                                   double rho,
                                   double *out);

// Empirical posterior mean over a dataset for `batch` rows at time `t`.
//
// # Safety
// `dataset` must be a live dataset handle; `zs` and `out` must point to
// `batch * dim` readable/writable f64 values.
enum FpmcStatus fpmc_optimal_denoise(const struct FpmcDataset *dataset,
                                     double t,
                                     const double *zs,
                                     uintptr_t batch,
                                     uintptr_t dim,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPMC_H */
