/* C interface to the loadmix mixture-of-regressions library. */

#ifndef LOADMIX_H
#define LOADMIX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Samples per daily curve; every curve and coefficient buffer has this length.
#define LOADMIX_CURVE_LEN 48

// Result of every fallible call. Anything other than `Ok` leaves a message
// in `loadmix_last_error`.
typedef enum LoadmixStatus {
  LOADMIX_STATUS_OK = 0,
  LOADMIX_STATUS_NULL_ARGUMENT = 1,
  LOADMIX_STATUS_INVALID_ARGUMENT = 2,
  LOADMIX_STATUS_DATA_ERROR = 3,
  LOADMIX_STATUS_NUMERICAL_ERROR = 4,
  LOADMIX_STATUS_SELECTION_ERROR = 5,
  LOADMIX_STATUS_PANIC = 6,
} LoadmixStatus;

// Regression rows shared by the fitting calls.
typedef struct LoadmixDataset LoadmixDataset;

// Fitted mixture: weights, per-cluster coefficient matrices, and variances.
typedef struct LoadmixModel LoadmixModel;

// Tuning knobs for the EM fits. Zero-initialize and call
// `loadmix_fit_options_default` before overriding fields.
typedef struct LoadmixFitOptions {
  // Root seed for the randomized starts.
  uint64_t seed;
  // Responsibility starts per fit; the first is k-means based.
  size_t n_starts;
  // EM iteration cap.
  size_t max_iter;
  // Relative objective change that stops a fit.
  double tol;
} LoadmixFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message from the most recent failing call on this thread. The pointer
// stays valid until the next failing call on the same thread.
const char *loadmix_last_error(void);

// Orthonormal Haar transform of one curve.
//
// Coefficients land coarse to fine: 3 smooth, then 3 + 6 + 12 + 24 detail.
//
// # Safety
// `curve` and `coeffs` must each point to `LOADMIX_CURVE_LEN` doubles.
enum LoadmixStatus loadmix_haar_dwt(const double *curve, double *coeffs);

// Inverse of `loadmix_haar_dwt`.
//
// # Safety
// `coeffs` and `curve` must each point to `LOADMIX_CURVE_LEN` doubles.
enum LoadmixStatus loadmix_haar_idwt(const double *coeffs, double *curve);

// Build a dataset from row-major regressor and response matrices.
//
// # Safety
// `x` must point to `n * p` doubles, `y` to `n * q` doubles, and `out` to a
// writable pointer slot. A returned dataset must be released with
// `loadmix_dataset_free`.
enum LoadmixStatus loadmix_dataset_new(const double *x,
                                       const double *y,
                                       size_t n,
                                       size_t p,
                                       size_t q,
                                       struct LoadmixDataset **out);

// Release a dataset. A null pointer is ignored.
//
// # Safety
// `ds` must come from `loadmix_dataset_new` and not be used afterwards.
void loadmix_dataset_free(struct LoadmixDataset *ds);

// Row count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t loadmix_dataset_rows(const struct LoadmixDataset *ds);

// Regressor column count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t loadmix_dataset_inputs(const struct LoadmixDataset *ds);

// Response column count, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t loadmix_dataset_outputs(const struct LoadmixDataset *ds);

// Fill `opts` with the default fitting configuration.
//
// # Safety
// `opts` must point to a writable `LoadmixFitOptions`.
enum LoadmixStatus loadmix_fit_options_default(struct LoadmixFitOptions *opts);

// Smallest penalty at which a `k`-cluster fit from the uniform start keeps
// every coefficient at zero.
//
// # Safety
// `ds` must be a live dataset handle and `out` point to a writable double.
enum LoadmixStatus loadmix_lambda_max(const struct LoadmixDataset *ds, size_t k, double *out);

// Two-stage fit at one penalty level: an l1-penalized EM picks the active
// coefficients, then an unpenalized EM restricted to them removes the
// shrinkage. Clusters whose weight collapses are dropped, so the result may
// hold fewer than `k` clusters.
//
// # Safety
// `ds` must be a live dataset handle, `opts` null or a valid options
// struct, and `out` a writable pointer slot. A returned model must be
// released with `loadmix_model_free`.
enum LoadmixStatus loadmix_fit(const struct LoadmixDataset *ds,
                               size_t k,
                               double lambda,
                               const struct LoadmixFitOptions *opts,
                               struct LoadmixModel **out);

// Sweep cluster counts and penalty levels, then pick one model with the
// data-driven penalty calibration. `kappa_hat` receives the calibrated
// penalty weight and may be null.
//
// # Safety
// `ds` must be a live dataset handle, `k_set` point to `k_len` cluster
// counts, `opts` be null or valid, and `out` be a writable pointer slot. A
// returned model must be released with `loadmix_model_free`.
enum LoadmixStatus loadmix_select(const struct LoadmixDataset *ds,
                                  const size_t *k_set,
                                  size_t k_len,
                                  size_t grid_size,
                                  const struct LoadmixFitOptions *opts,
                                  struct LoadmixModel **out,
                                  double *kappa_hat);

// Release a model. A null pointer is ignored.
//
// # Safety
// `model` must come from a fitting call and not be used afterwards.
void loadmix_model_free(struct LoadmixModel *model);

// Cluster count, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t loadmix_model_clusters(const struct LoadmixModel *model);

// Regressor column count, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t loadmix_model_inputs(const struct LoadmixModel *model);

// Response column count, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t loadmix_model_outputs(const struct LoadmixModel *model);

// Free-parameter count of the model, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t loadmix_model_dimension(const struct LoadmixModel *model);

// Mean log-likelihood of the model on its training rows.
//
// # Safety
// `model` must be a live model handle and `out` point to a writable double.
enum LoadmixStatus loadmix_model_loglik(const struct LoadmixModel *model, double *out);

// Copy the mixing weights into `out`.
//
// # Safety
// `model` must be a live model handle and `out` point to
// `loadmix_model_clusters(model)` doubles.
enum LoadmixStatus loadmix_model_weights(const struct LoadmixModel *model, double *out);

// Copy one cluster's coefficient matrix into `out`, row-major with one row
// per response column.
//
// # Safety
// `model` must be a live model handle and `out` point to
// `loadmix_model_outputs(model) * loadmix_model_inputs(model)` doubles.
enum LoadmixStatus loadmix_model_beta(const struct LoadmixModel *model,
                                      size_t cluster,
                                      double *out);

// Copy one cluster's response variances into `out`.
//
// # Safety
// `model` must be a live model handle and `out` point to
// `loadmix_model_outputs(model)` doubles.
enum LoadmixStatus loadmix_model_sigma2(const struct LoadmixModel *model,
                                        size_t cluster,
                                        double *out);

// Most probable cluster per dataset row under the model.
//
// # Safety
// `model` and `ds` must be live handles and `out` point to
// `loadmix_dataset_rows(ds)` size_t slots.
enum LoadmixStatus loadmix_labels(const struct LoadmixModel *model,
                                  const struct LoadmixDataset *ds,
                                  size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOADMIX_H */
