/* C ABI for the posterior-transition reweighting engine.
 *
 * Every function returns a status code (PTR_OK on success) and writes
 * results through out-pointers. Handles are opaque; free them with the
 * matching _free function. All strings returned are static and must
 * not be freed.
 */
#ifndef PTR_FFI_H
#define PTR_FFI_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
    PTR_OK = 0,
    PTR_ERR_NULL = 1,
    PTR_ERR_INVALID = 2,
    PTR_ERR_NONFINITE = 3,
    PTR_ERR_EMPTY = 4,
    PTR_ERR_INTERNAL = 5
};

typedef struct PtrWeightConfig PtrWeightConfig;
typedef struct PtrController PtrController;

typedef struct PtrWeightParts {
    double raw;
    double clipped;
    double mixed;
} PtrWeightParts;

typedef struct PtrScore {
    double t_score; /* log(p0 * set size) */
    double p0;      /* matched-candidate posterior probability (floored) */
    double margin;  /* p0 minus the best negative probability */
    int32_t top1;   /* 1 when the matched candidate is the argmax */
    int32_t floored;/* 1 when the probability floor engaged */
} PtrScore;

const char *ptr_status_name(int32_t code);
const char *ptr_version(void);

/* Weight mapping: w = 1 + alpha * (clip(exp(t/beta)) - 1). */
int32_t ptr_weight_config_new(double alpha, double beta, double w_min,
                              double w_max, PtrWeightConfig **out);
int32_t ptr_weight_config_default(PtrWeightConfig **out);
void ptr_weight_config_free(PtrWeightConfig *cfg);
int32_t ptr_weight_parts(const PtrWeightConfig *cfg, double t_score,
                         PtrWeightParts *out);
int32_t ptr_kl_bound(const PtrWeightConfig *cfg, double *out);
int32_t ptr_source_ratio_bounds(const PtrWeightConfig *cfg, double *out_lo,
                                double *out_hi);

/* Weight vectors. */
int32_t ptr_empirical_kl(const double *weights, size_t n, double *out);
int32_t ptr_normalize_weights(const double *weights, size_t n, double *out);

/* Contrastive identification. Candidates are row-major n x dim with the
 * matched target in row 0; posterior_out may be NULL or length n. */
int32_t ptr_score(const double *query, size_t dim, const double *candidates,
                  size_t n, double tau, double logit_clamp, double p_floor,
                  PtrScore *out, double *posterior_out);

/* Temperature/advantage controller with default adaptation thresholds. */
int32_t ptr_controller_new(double tau_init, double beta_init,
                           PtrController **out);
void ptr_controller_free(PtrController *ctrl);
int32_t ptr_controller_observe(PtrController *ctrl, double accuracy,
                               double mean_margin, double mean_t,
                               double valid_ratio);
int32_t ptr_controller_state(const PtrController *ctrl, double *out_tau,
                             double *out_beta, double *out_hard_ratio);

#ifdef __cplusplus
}
#endif

#endif /* PTR_FFI_H */
