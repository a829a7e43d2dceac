#ifndef SPDC_CHSH_H
#define SPDC_CHSH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpdcModePolicy {
  /**
   * Exactly `modes` modes.
   */
  SPDC_MODE_POLICY_FIXED = 0,
  SPDC_MODE_POLICY_POISSON_LIMIT = 1,
  /**
   * Every mode count `1..=modes`.
   */
  SPDC_MODE_POLICY_SWEEP_FINITE = 2,
  /**
   * All mode counts up to the default sweep limit and the Poisson limit.
   */
  SPDC_MODE_POLICY_FREE = 3,
} SpdcModePolicy;

typedef enum SpdcStatus {
  SPDC_STATUS_OK = 0,
  SPDC_STATUS_NULL_POINTER = 1,
  SPDC_STATUS_INVALID_PARAMETER = 2,
  SPDC_STATUS_CONSISTENCY = 3,
  SPDC_STATUS_OPTIMIZATION = 4,
  SPDC_STATUS_TRUNCATION = 5,
  SPDC_STATUS_PANIC = 6,
} SpdcStatus;

/**
 * An experiment: source, detectors and two analyser settings per party.
 */
typedef struct SpdcConfig SpdcConfig;

/**
 * Outcome of [`spdc_optimize`].
 */
typedef struct SpdcOptimization SpdcOptimization;

/**
 * CHSH value under one binning.
 */
typedef struct SpdcChsh {
  double s;
  double ch;
  /**
   * `E(x, y)` at index `2x + y`.
   */
  double correlators[4];
  /**
   * Strategy index: Alice's map plus 16 times Bob's.
   */
  uint32_t binning;
} SpdcChsh;

typedef struct SpdcOptimizeOptions {
  double eta;
  double p_dc;
  /**
   * One of the [`SpdcModePolicy`] values.
   */
  uint32_t policy;
  /**
   * Mode count for `Fixed`, largest count for `SweepFinite`, else ignored.
   */
  uint32_t modes;
  bool equal_squeezing;
  /**
   * Random starts per cell; 0 keeps the library default.
   */
  uint32_t restarts;
  uint64_t seed;
} SpdcOptimizeOptions;

typedef struct SpdcOptimizationSummary {
  struct SpdcChsh chsh;
  /**
   * `(g, ḡ)`, or `(Γ, Γ̄)` when `poisson` is set.
   */
  double strength;
  double strength_bar;
  /**
   * Mode count of the optimum; 0 in the Poisson limit.
   */
  uint32_t modes;
  bool poisson;
  double squeezing_ratio;
  bool converged;
  uint64_t searches;
  uint64_t evaluations;
} SpdcOptimizationSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create a finite-mode configuration with all analyser angles and phases zero.
 *
 * # Safety
 * `out` must be null or valid for a pointer write.
 */
enum SpdcStatus spdc_config_new_finite(double g,
                                       double g_bar,
                                       uint32_t modes,
                                       double eta,
                                       double p_dc,
                                       struct SpdcConfig **out);

/**
 * Create a Poisson-limit configuration with all analyser angles and phases zero.
 *
 * # Safety
 * `out` must be null or valid for a pointer write.
 */
enum SpdcStatus spdc_config_new_poisson(double gamma,
                                        double gamma_bar,
                                        double eta,
                                        double p_dc,
                                        struct SpdcConfig **out);

/**
 * Set analyser `index` (0 or 1) of `party` (0 Alice, 1 Bob), in radians.
 *
 * # Safety
 * `config` must be null or a live handle from this library.
 */
enum SpdcStatus spdc_config_set_setting(struct SpdcConfig *config,
                                        uint32_t party,
                                        uint32_t index,
                                        double angle,
                                        double phase);

/**
 * Copy of a configuration.
 *
 * # Safety
 * `config` must be null or a live handle; `out` null or valid for a write.
 */
enum SpdcStatus spdc_config_clone(const struct SpdcConfig *config, struct SpdcConfig **out);

/**
 * Release a configuration; null is ignored.
 *
 * # Safety
 * `config` must be null or a live handle not used afterwards.
 */
void spdc_config_free(struct SpdcConfig *config);

/**
 * CHSH value under the best of the 256 binnings.
 *
 * # Safety
 * `config` must be null or a live handle; `out` null or valid for a write.
 */
enum SpdcStatus spdc_evaluate(const struct SpdcConfig *config, struct SpdcChsh *out);

/**
 * CHSH value under strategy `binning` (below 256).
 *
 * # Safety
 * `config` must be null or a live handle; `out` null or valid for a write.
 */
enum SpdcStatus spdc_evaluate_binning(const struct SpdcConfig *config,
                                      uint32_t binning,
                                      struct SpdcChsh *out);

/**
 * The 16 click-pattern probabilities for settings `(x, y)`. Pattern bits
 * are A, A⊥, B, B⊥ from the least significant, 1 meaning a click.
 *
 * # Safety
 * `config` must be null or a live handle; `out` null or valid for 16 writes.
 */
enum SpdcStatus spdc_joint_distribution(const struct SpdcConfig *config,
                                        uint32_t x,
                                        uint32_t y,
                                        double *out);

/**
 * Maximize the CHSH value.
 *
 * # Safety
 * `options` must be null or valid for a read; `out` null or valid for a write.
 */
enum SpdcStatus spdc_optimize(const struct SpdcOptimizeOptions *options,
                              struct SpdcOptimization **out);

/**
 * # Safety
 * `result` must be null or a live handle; `out` null or valid for a write.
 */
enum SpdcStatus spdc_optimization_summary(const struct SpdcOptimization *result,
                                          struct SpdcOptimizationSummary *out);

/**
 * New configuration handle holding the optimum.
 *
 * # Safety
 * `result` must be null or a live handle; `out` null or valid for a write.
 */
enum SpdcStatus spdc_optimization_config(const struct SpdcOptimization *result,
                                         struct SpdcConfig **out);

/**
 * Release an optimization result; null is ignored.
 *
 * # Safety
 * `result` must be null or a live handle not used afterwards.
 */
void spdc_optimization_free(struct SpdcOptimization *result);

/**
 * Copy the last error message of this thread into `buf` (nul-terminated,
 * truncated to `len`). Returns the full message length without the nul;
 * 0 when no error was recorded.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t spdc_last_error_message(char *buf, size_t len);

/**
 * Static name of a status code; unknown codes get `"unknown status"`.
 */
const char *spdc_status_name(int32_t status);

/**
 * Library version as a static nul-terminated string.
 */
const char *spdc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPDC_CHSH_H */
