//! C ABI over `uqe_core`.
//!
//! Every function returns a `UqeStatus`; on failure the message is available
//! from `uqe_last_error_message` on the same thread. Handles are opaque and
//! must be released with the matching `_free` function. Panics never cross
//! the boundary: they are reported as `UQE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use uqe_core::dgp::{true_uqe, DgpSpec, Variant};
use uqe_core::estimator::{EstimationConfig, FirstStage, PsKind, UqeEstimate as CoreEstimate};
use uqe_core::nalgebra::DMatrix;
use uqe_core::stats::BandwidthRule;
use uqe_core::{Dataset, UqeError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UqeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    EstimationFailure = 3,
    InternalConsistency = 4,
    Panic = 5,
}

pub const UQE_LINK_LOGIT: i32 = 0;
pub const UQE_LINK_PROBIT: i32 = 1;
pub const UQE_LINK_SERIES: i32 = 2;

pub const UQE_BANDWIDTH_SILVERMAN: i32 = 0;
pub const UQE_BANDWIDTH_FIXED: i32 = 1;
pub const UQE_BANDWIDTH_UNDERSMOOTH: i32 = 2;

pub const UQE_DESIGN_PLAIN: i32 = 0;
pub const UQE_DESIGN_COVARIATE: i32 = 1;

/// Observed sample.
pub struct UqeDataset(Dataset);

/// Result of one estimation, including the influence values.
pub struct UqeEstimate(CoreEstimate);

/// Estimation settings; obtain defaults from `uqe_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UqeConfig {
    pub tau: f64,
    /// One of the UQE_LINK_* constants.
    pub link: i32,
    pub degree: u32,
    pub lambda: f64,
    /// One of the UQE_BANDWIDTH_* constants.
    pub bandwidth_rule: i32,
    /// Bandwidth for FIXED, exponent for UNDERSMOOTH; ignored otherwise.
    pub bandwidth_value: f64,
    pub ci_level: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UqeSummary {
    pub tau: f64,
    pub y_tau: f64,
    pub pi_hat: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_level: f64,
    pub h: f64,
    pub f_hat: f64,
    pub f_prime: f64,
    pub t1: f64,
    pub t2: f64,
    pub v_tau: f64,
    pub clamp_rate: f64,
    pub n: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UqeNoEffect {
    pub tau: f64,
    pub t2: f64,
    pub v2: f64,
    pub statistic: f64,
    pub p_value: f64,
    /// 1 if the 5% test rejects, else 0.
    pub reject_5pct: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UqeOracleValues {
    pub y_tau: f64,
    pub f_y_tau: f64,
    pub pi_tau: f64,
    pub a_tau: f64,
    pub b1_tau: f64,
    pub b2_tau: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &UqeError) -> UqeStatus {
    match err.exit_code() {
        3 => UqeStatus::EstimationFailure,
        4 => UqeStatus::InternalConsistency,
        _ => UqeStatus::InvalidInput,
    }
}

/// Runs `f`, recording errors and containing panics.
fn guard(f: impl FnOnce() -> Result<(), UqeStatus>) -> UqeStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UqeStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            UqeStatus::Panic
        }
    }
}

fn fail(err: UqeError) -> UqeStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null(what: &str) -> UqeStatus {
    set_error(&format!("{what} is null"));
    UqeStatus::NullPointer
}

fn invalid(msg: String) -> UqeStatus {
    set_error(&msg);
    UqeStatus::InvalidInput
}

fn to_config(c: &UqeConfig) -> Result<EstimationConfig, UqeStatus> {
    let mut cfg = EstimationConfig::default().with_tau(c.tau);
    cfg.link = match c.link {
        UQE_LINK_LOGIT => PsKind::Logit,
        UQE_LINK_PROBIT => PsKind::Probit,
        UQE_LINK_SERIES => PsKind::Series,
        other => return Err(invalid(format!("unknown link code {other}"))),
    };
    cfg.basis.degree = c.degree;
    cfg.basis.lambda = c.lambda;
    cfg.bandwidth = match c.bandwidth_rule {
        UQE_BANDWIDTH_SILVERMAN => BandwidthRule::Silverman,
        UQE_BANDWIDTH_FIXED => BandwidthRule::Fixed(c.bandwidth_value),
        UQE_BANDWIDTH_UNDERSMOOTH => BandwidthRule::Undersmoothed { exponent: c.bandwidth_value },
        other => return Err(invalid(format!("unknown bandwidth rule code {other}"))),
    };
    cfg.ci_level = c.ci_level;
    cfg.validate().map_err(fail)?;
    Ok(cfg)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], UqeStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Fills `out` with the default settings (tau 0.5, probit, cubic series,
/// Silverman bandwidth, 95% level).
#[no_mangle]
pub unsafe extern "C" fn uqe_config_default(out: *mut UqeConfig) -> UqeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let d = EstimationConfig::default();
        *out = UqeConfig {
            tau: d.tau,
            link: UQE_LINK_PROBIT,
            degree: d.basis.degree,
            lambda: d.basis.lambda,
            bandwidth_rule: UQE_BANDWIDTH_SILVERMAN,
            bandwidth_value: 0.0,
            ci_level: d.ci_level,
        };
        Ok(())
    })
}

/// Copies a sample of `n` observations. `z` is row-major n x dz (dz >= 1,
/// first column is the intervention coordinate); `x` is row-major n x dx
/// and may be null when dx = 0. `d` holds 0/1 values.
#[no_mangle]
pub unsafe extern "C" fn uqe_dataset_new(
    y: *const f64,
    d: *const u8,
    z: *const f64,
    dz: usize,
    x: *const f64,
    dx: usize,
    n: usize,
    out: *mut *mut UqeDataset,
) -> UqeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n == 0 {
            return Err(invalid("dataset needs at least one observation".into()));
        }
        let y = slice(y, n, "y")?;
        let d = slice(d, n, "d")?;
        let zs = slice(z, n.checked_mul(dz).ok_or_else(|| invalid("dimension overflow".into()))?, "z")?;
        let xs = slice(x, n.checked_mul(dx).ok_or_else(|| invalid("dimension overflow".into()))?, "x")?;
        let data = Dataset::new(
            y.to_vec(),
            d.to_vec(),
            DMatrix::from_row_slice(n, dz, zs),
            DMatrix::from_row_slice(n, dx, xs),
        )
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(UqeDataset(data)));
        Ok(())
    })
}

/// Number of observations, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn uqe_dataset_len(data: *const UqeDataset) -> usize {
    data.as_ref().map(|d| d.0.n()).unwrap_or(0)
}

#[no_mangle]
pub unsafe extern "C" fn uqe_dataset_free(data: *mut UqeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Estimates the effect at `config->tau`. On success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn uqe_estimate(data: *const UqeDataset, config: *const UqeConfig, out: *mut *mut UqeEstimate) -> UqeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let data = &data.as_ref().ok_or_else(|| null("data"))?.0;
        let cfg = to_config(config.as_ref().ok_or_else(|| null("config"))?)?;
        let est = FirstStage::fit(data, &cfg)
            .and_then(|f| f.at_tau(data, &cfg))
            .and_then(|s| s.estimate())
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(UqeEstimate(est)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uqe_estimate_summary(est: *const UqeEstimate, out: *mut UqeSummary) -> UqeStatus {
    guard(|| {
        let e = &est.as_ref().ok_or_else(|| null("estimate"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = UqeSummary {
            tau: e.tau,
            y_tau: e.y_tau,
            pi_hat: e.pi_hat,
            se: e.se,
            ci_lo: e.ci.0,
            ci_hi: e.ci.1,
            ci_level: e.ci_level,
            h: e.h,
            f_hat: e.f_hat,
            f_prime: e.f_prime,
            t1: e.t1,
            t2: e.t2,
            v_tau: e.v_tau,
            clamp_rate: e.clamp_rate,
            n: e.n,
        };
        Ok(())
    })
}

/// Copies the per-observation influence values into `buf`. `*written`
/// receives the number of values (n); if `len < n` nothing is copied and
/// INVALID_INPUT is returned, so callers can size the buffer by first
/// passing `len = 0`.
#[no_mangle]
pub unsafe extern "C" fn uqe_estimate_influence(est: *const UqeEstimate, buf: *mut f64, len: usize, written: *mut usize) -> UqeStatus {
    guard(|| {
        let e = &est.as_ref().ok_or_else(|| null("estimate"))?.0;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let n = e.influence.len();
        *written = n;
        if len < n {
            return Err(invalid(format!("buffer holds {len} values, need {n}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&e.influence);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn uqe_estimate_free(est: *mut UqeEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Test of no effect at `config->tau`.
#[no_mangle]
pub unsafe extern "C" fn uqe_test_no_effect(data: *const UqeDataset, config: *const UqeConfig, out: *mut UqeNoEffect) -> UqeStatus {
    guard(|| {
        let data = &data.as_ref().ok_or_else(|| null("data"))?.0;
        let cfg = to_config(config.as_ref().ok_or_else(|| null("config"))?)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let t = FirstStage::fit(data, &cfg)
            .and_then(|f| f.at_tau(data, &cfg))
            .and_then(|s| s.no_effect_test())
            .map_err(fail)?;
        *out = UqeNoEffect {
            tau: t.tau,
            t2: t.t2,
            v2: t.v2,
            statistic: t.statistic,
            p_value: t.p_value,
            reject_5pct: t.reject_5pct as i32,
        };
        Ok(())
    })
}

/// Population quantities of the simulation design (`UQE_DESIGN_*`).
#[no_mangle]
pub unsafe extern "C" fn uqe_oracle(design: i32, beta: f64, rho: f64, tau: f64, out: *mut UqeOracleValues) -> UqeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let variant = match design {
            UQE_DESIGN_PLAIN => Variant::Plain,
            UQE_DESIGN_COVARIATE => Variant::Covariate,
            other => return Err(invalid(format!("unknown design code {other}"))),
        };
        let r = true_uqe(&DgpSpec { variant, beta, rho, seed: 0 }, tau).map_err(fail)?;
        *out = UqeOracleValues {
            y_tau: r.y_tau,
            f_y_tau: r.f_y_tau,
            pi_tau: r.pi_tau,
            a_tau: r.a_tau,
            b1_tau: r.b1_tau,
            b2_tau: r.b2_tau,
        };
        Ok(())
    })
}

/// Message of the last failure on this thread ("" after a success). The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn uqe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn uqe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
