#ifndef NTK_LAB_H
#define NTK_LAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum NtkStatus {
  NTK_STATUS_OK = 0,
  NTK_STATUS_NULL_POINTER = 1,
  NTK_STATUS_INVALID_ARGUMENT = 2,
  NTK_STATUS_DIMENSION_MISMATCH = 3,
  NTK_STATUS_SINGULAR_KERNEL = 4,
  NTK_STATUS_DIVERGED = 5,
  NTK_STATUS_CONFIG = 6,
  NTK_STATUS_IO = 7,
  /**
   * A Rust panic was caught at the boundary.
   */
  NTK_STATUS_INTERNAL = 8,
} NtkStatus;

/**
 * Bias handling of a network.
 */
typedef enum NtkBiasMode {
  /**
   * Biases pinned at zero (σ-homogeneous ReLU nets).
   */
  NTK_BIAS_MODE_ZERO = 0,
  /**
   * Trainable biases drawn from N(0, 1).
   */
  NTK_BIAS_MODE_STANDARD_NORMAL = 1,
} NtkBiasMode;

/**
 * Minimum-complexity interpolator of a training set, bound to the
 * network parameters it was fitted at.
 */
typedef struct NtkInterpolator NtkInterpolator;

/**
 * Empirical NTK `ΦΦᵀ` of a network on a training set.
 */
typedef struct NtkKernel NtkKernel;

/**
 * A ReLU network in NTK parametrization together with its parameters.
 */
typedef struct NtkNetwork NtkNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a
 * successful one. Valid until the next call on the same thread.
 */
const char *ntk_last_error(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *ntk_version(void);

/**
 * Creates a network of `depth` weight layers with parameters drawn from
 * `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum NtkStatus ntk_network_new(size_t depth,
                               size_t input_dim,
                               size_t width,
                               double sigma,
                               enum NtkBiasMode bias_mode,
                               uint64_t seed,
                               struct NtkNetwork **out);

/**
 * # Safety
 * `net` must be null or a handle from [`ntk_network_new`] not yet freed.
 */
void ntk_network_free(struct NtkNetwork *net);

/**
 * Number of parameters `P`, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t ntk_network_param_count(const struct NtkNetwork *net);

/**
 * Copies the `P` parameters into `out`.
 *
 * # Safety
 * `net` must be a live handle; `out` must point to `len` writable values.
 */
enum NtkStatus ntk_network_get_params(const struct NtkNetwork *net, double *out, size_t len);

/**
 * Replaces the `P` parameters.
 *
 * # Safety
 * `net` must be a live handle; `values` must point to `len` values.
 */
enum NtkStatus ntk_network_set_params(struct NtkNetwork *net, const double *values, size_t len);

/**
 * Changes the output scale σ without touching the raw parameters.
 *
 * # Safety
 * `net` must be a live handle.
 */
enum NtkStatus ntk_network_set_sigma(struct NtkNetwork *net, double sigma);

/**
 * Outputs `f(x_i)` for the `n` rows of `x` (`n × input_dim`).
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values and
 * `out` `n` writable values.
 */
enum NtkStatus ntk_network_forward(const struct NtkNetwork *net,
                                   const double *x,
                                   size_t n,
                                   double *out);

/**
 * Feature map `Φ` (`n × P`, row-major): row `i` is `∂f(x_i)/∂θ`.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values and
 * `out` `n · P` writable values.
 */
enum NtkStatus ntk_network_features(const struct NtkNetwork *net,
                                    const double *x,
                                    size_t n,
                                    double *out);

/**
 * Empirical NTK of `net` on the `n` rows of `x`.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values;
 * `out` must be writable.
 */
enum NtkStatus ntk_kernel_new(const struct NtkNetwork *net,
                              const double *x,
                              size_t n,
                              struct NtkKernel **out);

/**
 * # Safety
 * `k` must be null or a live kernel handle.
 */
void ntk_kernel_free(struct NtkKernel *k);

/**
 * Side length `N`, or 0 for a null handle.
 *
 * # Safety
 * `k` must be null or a live kernel handle.
 */
size_t ntk_kernel_size(const struct NtkKernel *k);

/**
 * Kernel entries (`N × N`, row-major).
 *
 * # Safety
 * `k` must be a live kernel handle; `out` must hold `len` writable values.
 */
enum NtkStatus ntk_kernel_entries(const struct NtkKernel *k, double *out, size_t len);

/**
 * Extreme eigenvalues and the diagonal jitter used to factor the kernel.
 *
 * # Safety
 * `k` must be a live kernel handle; the three outputs must be writable
 * (any of them may be null to skip it).
 */
enum NtkStatus ntk_kernel_spectrum(const struct NtkKernel *k,
                                   double *lambda_min,
                                   double *lambda_max,
                                   double *jitter);

/**
 * Fits the minimum-complexity interpolator of `(x, y)` at the network's
 * current parameters.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values, `y`
 * `n` values; `out` must be writable.
 */
enum NtkStatus ntk_interpolator_fit(const struct NtkNetwork *net,
                                    const double *x,
                                    const double *y,
                                    size_t n,
                                    struct NtkInterpolator **out);

/**
 * # Safety
 * `w` must be null or a live interpolator handle.
 */
void ntk_interpolator_free(struct NtkInterpolator *w);

/**
 * Interpolator predictions at the `m` rows of `probe`.
 *
 * # Safety
 * `w` must be a live handle; `probe` must hold `m · input_dim` values and
 * `out` `m` writable values.
 */
enum NtkStatus ntk_interpolator_predict(const struct NtkInterpolator *w,
                                        const double *probe,
                                        size_t m,
                                        double *out);

/**
 * Limit of linearized gradient descent from the network's parameters on
 * `(x, y)`, evaluated at the `m` rows of `probe`.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values, `y`
 * `n` values, `probe` `m · input_dim` values and `out` `m` writable values.
 */
enum NtkStatus ntk_gd_closed_form(const struct NtkNetwork *net,
                                  const double *x,
                                  const double *y,
                                  size_t n,
                                  const double *probe,
                                  size_t m,
                                  double *out);

/**
 * Monte-Carlo estimate of `E‖f_{θ₀}(X)‖²` over `samples` fresh
 * initializations of the network's architecture (seeds `seed + s`), with
 * the exact expectation for comparison.
 *
 * # Safety
 * `net` must be a live handle; `x` must hold `n · input_dim` values; the
 * outputs must be writable (any may be null to skip it).
 */
enum NtkStatus ntk_mc_init_norm(const struct NtkNetwork *net,
                                const double *x,
                                size_t n,
                                size_t samples,
                                uint64_t seed,
                                double *mean,
                                double *stderr,
                                double *expected);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NTK_LAB_H */
