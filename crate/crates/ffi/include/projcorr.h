/* Generated by cbindgen; do not edit. */

#ifndef PROJCORR_H
#define PROJCORR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PcStatus {
  PC_STATUS_OK = 0,
  PC_STATUS_NULL_POINTER = 1,
  PC_STATUS_DIMENSION = 2,
  PC_STATUS_DEGENERATE_OPERATOR = 3,
  PC_STATUS_PARAMETER = 4,
  PC_STATUS_SOLVER = 5,
  PC_STATUS_UNSUPPORTED = 6,
  PC_STATUS_RANK = 7,
  PC_STATUS_LOOKUP = 8,
  PC_STATUS_DIVERGENCE = 9,
  PC_STATUS_NON_FINITE = 10,
  PC_STATUS_FORMAT = 11,
  PC_STATUS_IO = 12,
  PC_STATUS_JSON = 13,
  PC_STATUS_PANIC = 14,
} PcStatus;

/**
 * Opaque pseudoinverse engine bound to one operator.
 */
typedef struct PcEngine PcEngine;

/**
 * Opaque sensing operator.
 */
typedef struct PcOperator PcOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pc_last_error(void);

/**
 * Dense `rows × cols` operator from row-major `data`.
 */
enum PcStatus pc_operator_dense(size_t rows,
                                size_t cols,
                                const double *data,
                                struct PcOperator **out);

/**
 * Random inpainting mask over a `channels × height × width` image.
 */
enum PcStatus pc_operator_mask(size_t height,
                               size_t width,
                               size_t channels,
                               double keep_probability,
                               uint64_t seed,
                               struct PcOperator **out);

/**
 * Periodic Gaussian blur with per-axis widths.
 */
enum PcStatus pc_operator_blur(size_t height,
                               size_t width,
                               size_t channels,
                               double sigma_row,
                               double sigma_col,
                               double truncation,
                               struct PcOperator **out);

/**
 * Single-pixel imaging operator with `m` random ±1 patterns of length `n`.
 */
enum PcStatus pc_operator_spi(size_t n, size_t m, uint64_t seed, struct PcOperator **out);

/**
 * Length of the signals the operator accepts; 0 for a null handle.
 */
size_t pc_operator_input_dim(const struct PcOperator *op);

/**
 * Length of the measurements the operator produces; 0 for a null handle.
 */
size_t pc_operator_output_dim(const struct PcOperator *op);

enum PcStatus pc_operator_apply(const struct PcOperator *op,
                                const double *x,
                                size_t x_len,
                                double *out,
                                size_t out_len);

enum PcStatus pc_operator_adjoint(const struct PcOperator *op,
                                  const double *u,
                                  size_t u_len,
                                  double *out,
                                  size_t out_len);

void pc_operator_free(struct PcOperator *op);

/**
 * Builds the pseudoinverse engine with the default method for the operator
 * kind. The operator handle may be freed afterwards.
 */
enum PcStatus pc_engine_new(const struct PcOperator *op, struct PcEngine **out);

void pc_engine_free(struct PcEngine *engine);

/**
 * `out = A⁺y`.
 */
enum PcStatus pc_engine_pinv(const struct PcEngine *e,
                             const double *y,
                             size_t y_len,
                             double *out,
                             size_t out_len);

/**
 * `out = A⁺Av`.
 */
enum PcStatus pc_engine_range_project(const struct PcEngine *e,
                                      const double *v,
                                      size_t v_len,
                                      double *out,
                                      size_t out_len);

/**
 * `out = v − A⁺Av`.
 */
enum PcStatus pc_engine_null_project(const struct PcEngine *e,
                                     const double *v,
                                     size_t v_len,
                                     double *out,
                                     size_t out_len);

/**
 * Replaces the range component of `fhat` with the one fixed by `y`.
 */
enum PcStatus pc_correct_exact(const struct PcEngine *e,
                               const double *y,
                               size_t y_len,
                               const double *fhat,
                               size_t fhat_len,
                               double *out,
                               size_t out_len);

/**
 * Regularized correction with data weight `lambda` under isotropic noise
 * of standard deviation `sigma`; `sigma <= 0` weights the data term with
 * the identity.
 */
enum PcStatus pc_correct_regularized(const struct PcEngine *e,
                                     const double *y,
                                     size_t y_len,
                                     const double *fhat,
                                     size_t fhat_len,
                                     double lambda,
                                     double sigma,
                                     double *out,
                                     size_t out_len);

enum PcStatus pc_mse(const double *a, const double *b, size_t len, double *out);

enum PcStatus pc_psnr(const double *a, const double *b, size_t len, double peak, double *out);

/**
 * Mean SSIM over channels with an 11×11 Gaussian window (σ = 1.5) and
 * data range 1. Images are planar `channels × height × width`.
 */
enum PcStatus pc_ssim(const double *a,
                      const double *b,
                      size_t height,
                      size_t width,
                      size_t channels,
                      double *out);

/**
 * `‖A(fhat − A⁺y)‖²`.
 */
enum PcStatus pc_nullspace_consistency(const struct PcEngine *e,
                                       const double *y,
                                       size_t y_len,
                                       const double *fhat,
                                       size_t fhat_len,
                                       double *out);

/**
 * `Tr(A⁺ΣA⁺ᵀ)` for isotropic noise; 0 when `sigma <= 0`.
 */
enum PcStatus pc_noise_bias_trace(const struct PcEngine *e, double sigma, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROJCORR_H */
