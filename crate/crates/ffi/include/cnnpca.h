#ifndef CNNPCA_H
#define CNNPCA_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CnnpcaStatus {
  CNNPCA_STATUS_OK = 0,
  CNNPCA_STATUS_NULL_POINTER = 1,
  CNNPCA_STATUS_INVALID_ARGUMENT = 2,
  CNNPCA_STATUS_SHAPE = 3,
  CNNPCA_STATUS_IO = 4,
  CNNPCA_STATUS_FORMAT = 5,
  CNNPCA_STATUS_NUMERICAL = 6,
  CNNPCA_STATUS_CONFIG = 7,
  CNNPCA_STATUS_BUFFER_TOO_SMALL = 8,
  CNNPCA_STATUS_PANIC = 9,
} CnnpcaStatus;

/**
 * Opaque trained model transform net.
 */
typedef struct CnnpcaNet CnnpcaNet;

/**
 * Opaque PCA basis.
 */
typedef struct CnnpcaPca CnnpcaPca;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *cnnpca_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cnnpca_version(void);

/**
 * Number of trainable parameters of the model transform net.
 */
size_t cnnpca_transform_net_param_count(void);

/**
 * Loads a PCA basis checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CnnpcaStatus cnnpca_pca_load(const char *path_, struct CnnpcaPca **out);

/**
 * # Safety
 * `h` must come from [`cnnpca_pca_load`] and not be used afterwards; null is ignored.
 */
void cnnpca_pca_free(struct CnnpcaPca *h);

/**
 * Grid extents and latent dimension of a basis.
 *
 * # Safety
 * `h` must be a live handle; output pointers must be valid.
 */
enum CnnpcaStatus cnnpca_pca_dims(const struct CnnpcaPca *h, size_t *nx, size_t *ny, size_t *l);

/**
 * Writes the PCA model `m̄ + U Σ ξ` into `out` (`n_cells` values, row-major).
 *
 * # Safety
 * `xi` must hold `l` values and `out` `n_cells` values.
 */
enum CnnpcaStatus cnnpca_pca_sample(const struct CnnpcaPca *h,
                                    const double *xi,
                                    size_t l,
                                    double *out,
                                    size_t n_cells);

/**
 * Loads a transform-net checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CnnpcaStatus cnnpca_net_load(const char *path_, struct CnnpcaNet **out);

/**
 * Freshly initialized, untrained net.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CnnpcaStatus cnnpca_net_build(uint64_t seed, struct CnnpcaNet **out);

/**
 * # Safety
 * `h` must come from this library and not be used afterwards; null is ignored.
 */
void cnnpca_net_free(struct CnnpcaNet *h);

/**
 * CNN-PCA realization for latent `xi`. A `cutoff` in `[0, 1]` thresholds the
 * output; any other value (e.g. `-1`) returns it unthresholded.
 *
 * # Safety
 * Handles must be live; `xi` holds `l` values and `out` `n_cells` values.
 */
enum CnnpcaStatus cnnpca_net_generate(const struct CnnpcaNet *net,
                                      const struct CnnpcaPca *pca,
                                      const double *xi,
                                      size_t l,
                                      double cutoff,
                                      double *out,
                                      size_t n_cells);

/**
 * Binary O-PCA post-processing of `n` cell values.
 *
 * # Safety
 * `values` and `out` must each hold `n` values; they may alias.
 */
enum CnnpcaStatus cnnpca_opca_binary(const double *values, size_t n, double gamma, double *out);

/**
 * Simulates a facies model (`binary != 0`) or a log-permeability model with the
 * default reservoir, property map and four-well layout, and writes the history
 * vector up to `until_day`: per report time, injector rates then producer oil
 * and water rates. `*written` receives the vector length; when `cap` is too small
 * nothing is copied and `BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `values` holds `nx·ny` values, `out` holds `cap` values, `written` is valid.
 */
enum CnnpcaStatus cnnpca_simulate_history(const double *values,
                                          size_t nx,
                                          size_t ny,
                                          int32_t binary,
                                          double until_day,
                                          double *out,
                                          size_t cap,
                                          size_t *written);

/**
 * RML objective terms for simulated data `d` (length `n_d`) at latent `xi` (length `l`).
 *
 * # Safety
 * Array arguments must hold the stated lengths; output pointers must be valid.
 */
enum CnnpcaStatus cnnpca_rml_objective(const double *xi,
                                       const double *xi_star,
                                       size_t l,
                                       const double *d,
                                       const double *d_obs_star,
                                       const double *sigma,
                                       size_t n_d,
                                       double *data_term,
                                       double *model_term,
                                       double *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CNNPCA_H */
