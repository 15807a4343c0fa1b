#ifndef UQE_H
#define UQE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define UQE_LINK_LOGIT 0

#define UQE_LINK_PROBIT 1

#define UQE_LINK_SERIES 2

#define UQE_BANDWIDTH_SILVERMAN 0

#define UQE_BANDWIDTH_FIXED 1

#define UQE_BANDWIDTH_UNDERSMOOTH 2

#define UQE_DESIGN_PLAIN 0

#define UQE_DESIGN_COVARIATE 1

typedef enum UqeStatus {
  UQE_STATUS_OK = 0,
  UQE_STATUS_NULL_POINTER = 1,
  UQE_STATUS_INVALID_INPUT = 2,
  UQE_STATUS_ESTIMATION_FAILURE = 3,
  UQE_STATUS_INTERNAL_CONSISTENCY = 4,
  UQE_STATUS_PANIC = 5,
} UqeStatus;

/**
 * Observed sample.
 */
typedef struct UqeDataset UqeDataset;

/**
 * Result of one estimation, including the influence values.
 */
typedef struct UqeEstimate UqeEstimate;

/**
 * Estimation settings; obtain defaults from `uqe_config_default`.
 */
typedef struct UqeConfig {
  double tau;
  /**
   * One of the UQE_LINK_* constants.
   */
  int32_t link;
  uint32_t degree;
  double lambda;
  /**
   * One of the UQE_BANDWIDTH_* constants.
   */
  int32_t bandwidth_rule;
  /**
   * Bandwidth for FIXED, exponent for UNDERSMOOTH; ignored otherwise.
   */
  double bandwidth_value;
  double ci_level;
} UqeConfig;

typedef struct UqeSummary {
  double tau;
  double y_tau;
  double pi_hat;
  double se;
  double ci_lo;
  double ci_hi;
  double ci_level;
  double h;
  double f_hat;
  double f_prime;
  double t1;
  double t2;
  double v_tau;
  double clamp_rate;
  size_t n;
} UqeSummary;

typedef struct UqeNoEffect {
  double tau;
  double t2;
  double v2;
  double statistic;
  double p_value;
  /**
   * 1 if the 5% test rejects, else 0.
   */
  int32_t reject_5pct;
} UqeNoEffect;

typedef struct UqeOracleValues {
  double y_tau;
  double f_y_tau;
  double pi_tau;
  double a_tau;
  double b1_tau;
  double b2_tau;
} UqeOracleValues;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Fills `out` with the default settings (tau 0.5, probit, cubic series,
 * Silverman bandwidth, 95% level).
 */
enum UqeStatus uqe_config_default(struct UqeConfig *out);

/**
 * Copies a sample of `n` observations. `z` is row-major n x dz (dz >= 1,
 * first column is the intervention coordinate); `x` is row-major n x dx
 * and may be null when dx = 0. `d` holds 0/1 values.
 */
enum UqeStatus uqe_dataset_new(const double *y,
                               const uint8_t *d,
                               const double *z,
                               size_t dz,
                               const double *x,
                               size_t dx,
                               size_t n,
                               struct UqeDataset **out);

/**
 * Number of observations, or 0 for a null handle.
 */
size_t uqe_dataset_len(const struct UqeDataset *data);

void uqe_dataset_free(struct UqeDataset *data);

/**
 * Estimates the effect at `config->tau`. On success `*out` owns a new handle.
 */
enum UqeStatus uqe_estimate(const struct UqeDataset *data,
                            const struct UqeConfig *config,
                            struct UqeEstimate **out);

enum UqeStatus uqe_estimate_summary(const struct UqeEstimate *est, struct UqeSummary *out);

/**
 * Copies the per-observation influence values into `buf`. `*written`
 * receives the number of values (n); if `len < n` nothing is copied and
 * INVALID_INPUT is returned, so callers can size the buffer by first
 * passing `len = 0`.
 */
enum UqeStatus uqe_estimate_influence(const struct UqeEstimate *est,
                                      double *buf,
                                      size_t len,
                                      size_t *written);

void uqe_estimate_free(struct UqeEstimate *est);

/**
 * Test of no effect at `config->tau`.
 */
enum UqeStatus uqe_test_no_effect(const struct UqeDataset *data,
                                  const struct UqeConfig *config,
                                  struct UqeNoEffect *out);

/**
 * Population quantities of the simulation design (`UQE_DESIGN_*`).
 */
enum UqeStatus uqe_oracle(int32_t design,
                          double beta,
                          double rho,
                          double tau,
                          struct UqeOracleValues *out);

/**
 * Message of the last failure on this thread ("" after a success). The
 * pointer stays valid until the next call into this library on the thread.
 */
const char *uqe_last_error_message(void);

const char *uqe_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQE_H */
