//! C ABI over the scoring, weighting, and controller core.
//!
//! Handles are opaque boxes; every function returns a status code from
//! `ptr_status` and writes results through out-pointers. The header in
//! `include/ptr_ffi.h` mirrors this surface and is covered by a parity
//! test.

use ptr_core::controller::{ControllerConfig, ControllerState};
use ptr_core::error::PtrError;
use ptr_core::pool::CandidateSet;
use ptr_core::reweight::{
    empirical_kl, kl_bound, normalize, source_ratio_bounds, weight, WeightConfig,
};
use ptr_core::scorer::{score_candidates, BatchStats, ScorerConfig};
use std::os::raw::c_char;

pub const PTR_OK: i32 = 0;
pub const PTR_ERR_NULL: i32 = 1;
pub const PTR_ERR_INVALID: i32 = 2;
pub const PTR_ERR_NONFINITE: i32 = 3;
pub const PTR_ERR_EMPTY: i32 = 4;
pub const PTR_ERR_INTERNAL: i32 = 5;

fn status_of(err: &PtrError) -> i32 {
    match err {
        PtrError::NonFinite(_) | PtrError::NonFiniteLoss { .. } => PTR_ERR_NONFINITE,
        PtrError::EmptyInput(_) => PTR_ERR_EMPTY,
        PtrError::InvalidConfig(_) | PtrError::InvalidArgument(_) => PTR_ERR_INVALID,
        _ => PTR_ERR_INTERNAL,
    }
}

/// Returns a static, NUL-terminated name for a status code.
#[no_mangle]
pub extern "C" fn ptr_status_name(code: i32) -> *const c_char {
    let name: &'static [u8] = match code {
        PTR_OK => b"ok\0",
        PTR_ERR_NULL => b"null pointer\0",
        PTR_ERR_INVALID => b"invalid argument\0",
        PTR_ERR_NONFINITE => b"non-finite value\0",
        PTR_ERR_EMPTY => b"empty input\0",
        PTR_ERR_INTERNAL => b"internal error\0",
        _ => b"unknown status\0",
    };
    name.as_ptr() as *const c_char
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ptr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

pub struct PtrWeightConfig(WeightConfig);
pub struct PtrController {
    cfg: ControllerConfig,
    state: ControllerState,
}

/// Allocates a validated weight config.
///
/// # Safety
/// `out` must be a valid pointer; the result must be released with
/// `ptr_weight_config_free`.
#[no_mangle]
pub unsafe extern "C" fn ptr_weight_config_new(
    alpha: f64,
    beta: f64,
    w_min: f64,
    w_max: f64,
    out: *mut *mut PtrWeightConfig,
) -> i32 {
    if out.is_null() {
        return PTR_ERR_NULL;
    }
    let cfg = WeightConfig {
        alpha,
        beta,
        w_min,
        w_max,
    };
    if let Err(e) = cfg.validate() {
        return status_of(&e);
    }
    *out = Box::into_raw(Box::new(PtrWeightConfig(cfg)));
    PTR_OK
}

/// Allocates the default weight config.
///
/// # Safety
/// `out` must be a valid pointer; the result must be released with
/// `ptr_weight_config_free`.
#[no_mangle]
pub unsafe extern "C" fn ptr_weight_config_default(out: *mut *mut PtrWeightConfig) -> i32 {
    if out.is_null() {
        return PTR_ERR_NULL;
    }
    *out = Box::into_raw(Box::new(PtrWeightConfig(WeightConfig::default())));
    PTR_OK
}

/// Releases a weight config; NULL is a no-op.
///
/// # Safety
/// `cfg` must come from `ptr_weight_config_new`/`_default` and not be
/// freed twice.
#[no_mangle]
pub unsafe extern "C" fn ptr_weight_config_free(cfg: *mut PtrWeightConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Raw, clipped, and trust-mixed weight for one score.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PtrWeightParts {
    pub raw: f64,
    pub clipped: f64,
    pub mixed: f64,
}

/// Maps a transition score to its weight decomposition.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ptr_weight_parts(
    cfg: *const PtrWeightConfig,
    t_score: f64,
    out: *mut PtrWeightParts,
) -> i32 {
    if cfg.is_null() || out.is_null() {
        return PTR_ERR_NULL;
    }
    match weight(t_score, &(*cfg).0) {
        Ok(b) => {
            *out = PtrWeightParts {
                raw: b.raw,
                clipped: b.clipped,
                mixed: b.mixed,
            };
            PTR_OK
        }
        Err(e) => status_of(&e),
    }
}

/// Worst-case KL divergence of the implied sampling distribution from
/// uniform under the config's clip range.
///
/// # Safety
/// `cfg` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ptr_kl_bound(cfg: *const PtrWeightConfig, out: *mut f64) -> i32 {
    if cfg.is_null() || out.is_null() {
        return PTR_ERR_NULL;
    }
    *out = kl_bound(&(*cfg).0);
    PTR_OK
}

/// Bounds on the effective-weight ratio between any two sources.
///
/// # Safety
/// `cfg`, `out_lo`, and `out_hi` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ptr_source_ratio_bounds(
    cfg: *const PtrWeightConfig,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> i32 {
    if cfg.is_null() || out_lo.is_null() || out_hi.is_null() {
        return PTR_ERR_NULL;
    }
    let (lo, hi) = source_ratio_bounds(&(*cfg).0);
    *out_lo = lo;
    *out_hi = hi;
    PTR_OK
}

/// KL divergence of the normalized weight vector from uniform.
///
/// # Safety
/// `weights` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptr_empirical_kl(weights: *const f64, n: usize, out: *mut f64) -> i32 {
    if weights.is_null() || out.is_null() {
        return PTR_ERR_NULL;
    }
    let ws = std::slice::from_raw_parts(weights, n);
    match empirical_kl(ws) {
        Ok(v) => {
            *out = v;
            PTR_OK
        }
        Err(e) => status_of(&e),
    }
}

/// Self-normalizes weights so they sum to 1; `out` may alias `weights`.
///
/// # Safety
/// `weights` and `out` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ptr_normalize_weights(
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    if weights.is_null() || out.is_null() {
        return PTR_ERR_NULL;
    }
    let ws = std::slice::from_raw_parts(weights, n);
    match normalize(ws) {
        Ok(v) => {
            std::ptr::copy_nonoverlapping(v.as_ptr(), out, n);
            PTR_OK
        }
        Err(e) => status_of(&e),
    }
}

/// Posterior summary for one query against a candidate set.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PtrScore {
    /// log(p0 * set size)
    pub t_score: f64,
    /// matched-candidate posterior probability (floored)
    pub p0: f64,
    /// p0 minus the best negative probability
    pub margin: f64,
    /// 1 when the matched candidate is the argmax
    pub top1: i32,
    /// 1 when the probability floor engaged
    pub floored: i32,
}

/// Scores a query vector against candidates (row 0 = matched target,
/// rows 1.. = negatives, row-major `n` x `dim`). Writes the posterior
/// into `posterior_out` (length `n`) when it is non-NULL.
///
/// # Safety
/// `query` must point to `dim` doubles, `candidates` to `n*dim` doubles,
/// `out` must be valid, and `posterior_out` NULL or length `n`.
#[no_mangle]
pub unsafe extern "C" fn ptr_score(
    query: *const f64,
    dim: usize,
    candidates: *const f64,
    n: usize,
    tau: f64,
    logit_clamp: f64,
    p_floor: f64,
    out: *mut PtrScore,
    posterior_out: *mut f64,
) -> i32 {
    if query.is_null() || candidates.is_null() || out.is_null() {
        return PTR_ERR_NULL;
    }
    if dim == 0 || n == 0 {
        return PTR_ERR_EMPTY;
    }
    let cfg = ScorerConfig {
        tau,
        logit_clamp,
        p_floor,
    };
    if let Err(e) = cfg.validate() {
        return status_of(&e);
    }
    let u = std::slice::from_raw_parts(query, dim);
    let flat = std::slice::from_raw_parts(candidates, n * dim);
    let set = CandidateSet {
        matched_uid: 0,
        embeddings: flat.chunks(dim).map(|row| row.to_vec()).collect(),
    };
    match score_candidates(u, &set, &cfg) {
        Ok(eval) => {
            *out = PtrScore {
                t_score: eval.t_score,
                p0: eval.p0,
                margin: eval.margin,
                top1: eval.top1 as i32,
                floored: eval.floored as i32,
            };
            if !posterior_out.is_null() {
                std::ptr::copy_nonoverlapping(eval.posterior.as_ptr(), posterior_out, n);
            }
            PTR_OK
        }
        Err(e) => status_of(&e),
    }
}

/// Allocates a temperature/advantage controller with the default
/// adaptation thresholds.
///
/// # Safety
/// `out` must be valid; release the handle with `ptr_controller_free`.
#[no_mangle]
pub unsafe extern "C" fn ptr_controller_new(
    tau_init: f64,
    beta_init: f64,
    out: *mut *mut PtrController,
) -> i32 {
    if out.is_null() {
        return PTR_ERR_NULL;
    }
    if !(tau_init.is_finite() && beta_init.is_finite()) || tau_init <= 0.0 || beta_init <= 0.0 {
        return PTR_ERR_INVALID;
    }
    *out = Box::into_raw(Box::new(PtrController {
        cfg: ControllerConfig::default(),
        state: ControllerState::new(tau_init, beta_init),
    }));
    PTR_OK
}

/// Releases a controller; NULL is a no-op.
///
/// # Safety
/// `ctrl` must come from `ptr_controller_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ptr_controller_free(ctrl: *mut PtrController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Feeds one logging-step batch summary: EMAs update, then tau, beta,
/// and the hard-negative ratio adapt.
///
/// # Safety
/// `ctrl` must be a valid controller handle.
#[no_mangle]
pub unsafe extern "C" fn ptr_controller_observe(
    ctrl: *mut PtrController,
    accuracy: f64,
    mean_margin: f64,
    mean_t: f64,
    valid_ratio: f64,
) -> i32 {
    if ctrl.is_null() {
        return PTR_ERR_NULL;
    }
    let stats = [accuracy, mean_margin, mean_t, valid_ratio];
    if stats.iter().any(|v| !v.is_finite()) {
        return PTR_ERR_NONFINITE;
    }
    let c = &mut *ctrl;
    c.state.update_stats(
        &BatchStats {
            accuracy,
            mean_margin,
            mean_t,
            valid_ratio,
        },
        &c.cfg,
    );
    c.state.adapt(&c.cfg);
    PTR_OK
}

/// Reads the controller's current temperature, advantage scale, and
/// hard-negative ratio.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ptr_controller_state(
    ctrl: *const PtrController,
    out_tau: *mut f64,
    out_beta: *mut f64,
    out_hard_ratio: *mut f64,
) -> i32 {
    if ctrl.is_null() || out_tau.is_null() || out_beta.is_null() || out_hard_ratio.is_null() {
        return PTR_ERR_NULL;
    }
    let c = &*ctrl;
    *out_tau = c.state.tau;
    *out_beta = c.state.beta;
    *out_hard_ratio = c.state.hard_ratio;
    PTR_OK
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;

    #[test]
    fn weight_roundtrip_matches_core() {
        unsafe {
            let mut cfg: *mut PtrWeightConfig = std::ptr::null_mut();
            assert_eq!(ptr_weight_config_default(&mut cfg), PTR_OK);
            let mut parts = PtrWeightParts::default();
            assert_eq!(ptr_weight_parts(cfg, 0.7, &mut parts), PTR_OK);
            let direct = weight(0.7, &WeightConfig::default()).unwrap();
            assert_eq!(parts.raw, direct.raw);
            assert_eq!(parts.clipped, direct.clipped);
            assert_eq!(parts.mixed, direct.mixed);
            let mut bound = 0.0;
            assert_eq!(ptr_kl_bound(cfg, &mut bound), PTR_OK);
            assert_eq!(bound, kl_bound(&WeightConfig::default()));
            ptr_weight_config_free(cfg);
        }
    }

    #[test]
    fn invalid_config_is_rejected_with_a_code() {
        unsafe {
            let mut cfg: *mut PtrWeightConfig = std::ptr::null_mut();
            assert_eq!(
                ptr_weight_config_new(1.0, 1.5, 4.0, 0.25, &mut cfg),
                PTR_ERR_INVALID
            );
            assert!(cfg.is_null());
            assert_eq!(ptr_weight_config_new(1.0, 1.5, 0.25, 4.0, std::ptr::null_mut()), PTR_ERR_NULL);
        }
    }

    #[test]
    fn score_matches_core_scorer() {
        let u = [0.3, -0.7, 0.64];
        let cands = [0.31, -0.68, 0.60, -0.9, 0.1, 0.2, 0.05, 0.99, -0.3];
        unsafe {
            let mut out = PtrScore::default();
            let mut post = [0.0; 3];
            let code = ptr_score(
                u.as_ptr(),
                3,
                cands.as_ptr(),
                3,
                0.12,
                20.0,
                1e-30,
                &mut out,
                post.as_mut_ptr(),
            );
            assert_eq!(code, PTR_OK);
            let set = CandidateSet {
                matched_uid: 0,
                embeddings: cands.chunks(3).map(|r| r.to_vec()).collect(),
            };
            let direct = score_candidates(&u, &set, &ScorerConfig::default()).unwrap();
            assert_eq!(out.t_score, direct.t_score);
            assert_eq!(out.p0, direct.p0);
            assert_eq!(out.top1, 1);
            let sum: f64 = post.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn controller_walks_to_the_softer_clamp_under_low_accuracy() {
        unsafe {
            let mut ctrl: *mut PtrController = std::ptr::null_mut();
            assert_eq!(ptr_controller_new(0.12, 1.5, &mut ctrl), PTR_OK);
            for _ in 0..200 {
                assert_eq!(ptr_controller_observe(ctrl, 0.0, 0.0, 0.0, 1.0), PTR_OK);
            }
            let (mut tau, mut beta, mut hard) = (0.0, 0.0, 0.0);
            assert_eq!(ptr_controller_state(ctrl, &mut tau, &mut beta, &mut hard), PTR_OK);
            assert_eq!(tau, ControllerConfig::default().tau_max);
            assert_eq!(hard, 0.0);
            assert!(beta > 1.5);
            ptr_controller_free(ctrl);
        }
    }

    #[test]
    fn strings_are_nul_terminated_statics() {
        unsafe {
            let v = CStr::from_ptr(ptr_version());
            assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
            let name = CStr::from_ptr(ptr_status_name(PTR_ERR_NONFINITE));
            assert_eq!(name.to_str().unwrap(), "non-finite value");
            assert!(!ptr_status_name(99).is_null());
        }
    }

    #[test]
    fn normalize_and_empirical_kl_agree_with_core() {
        let ws = [4.0, 1.0, 1.0, 2.0];
        unsafe {
            let mut out = [0.0; 4];
            assert_eq!(ptr_normalize_weights(ws.as_ptr(), 4, out.as_mut_ptr()), PTR_OK);
            assert_eq!(out.to_vec(), normalize(&ws).unwrap());
            let mut kl = 0.0;
            assert_eq!(ptr_empirical_kl(ws.as_ptr(), 4, &mut kl), PTR_OK);
            assert_eq!(kl, empirical_kl(&ws).unwrap());
            assert_eq!(
                ptr_empirical_kl(std::ptr::null(), 4, &mut kl),
                PTR_ERR_NULL
            );
        }
    }
}
