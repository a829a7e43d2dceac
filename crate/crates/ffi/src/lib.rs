//! C ABI over `spdc-chsh`.
//!
//! Configurations and optimization results cross the boundary as opaque
//! handles owned by the caller and released with the matching `*_free`.
//! Every fallible call returns an [`SpdcStatus`]; the message of the most
//! recent failure on the calling thread is kept for
//! [`spdc_last_error_message`]. Panics are caught and reported as
//! [`SpdcStatus::Panic`] instead of unwinding into C.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spdc_chsh::distribution::{all_distributions, best_binning, chsh, BinningStrategy, ChshResult};
use spdc_chsh::error::ModelError;
use spdc_chsh::model::{DetectorParams, ExperimentConfig, MeasurementSetting, SourceParams};
use spdc_chsh::optimizer::{optimize, ModePolicy, OptimizationProblem, OptimizationResult};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Consistency = 3,
    Optimization = 4,
    Truncation = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdcModePolicy {
    /// Exactly `modes` modes.
    Fixed = 0,
    PoissonLimit = 1,
    /// Every mode count `1..=modes`.
    SweepFinite = 2,
    /// All mode counts up to the default sweep limit and the Poisson limit.
    Free = 3,
}

/// An experiment: source, detectors and two analyser settings per party.
pub struct SpdcConfig(ExperimentConfig);

/// Outcome of [`spdc_optimize`].
pub struct SpdcOptimization(OptimizationResult);

/// CHSH value under one binning.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdcChsh {
    pub s: f64,
    pub ch: f64,
    /// `E(x, y)` at index `2x + y`.
    pub correlators: [f64; 4],
    /// Strategy index: Alice's map plus 16 times Bob's.
    pub binning: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdcOptimizeOptions {
    pub eta: f64,
    pub p_dc: f64,
    /// One of the [`SpdcModePolicy`] values.
    pub policy: u32,
    /// Mode count for `Fixed`, largest count for `SweepFinite`, else ignored.
    pub modes: u32,
    pub equal_squeezing: bool,
    /// Random starts per cell; 0 keeps the library default.
    pub restarts: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdcOptimizationSummary {
    pub chsh: SpdcChsh,
    /// `(g, ḡ)`, or `(Γ, Γ̄)` when `poisson` is set.
    pub strength: f64,
    pub strength_bar: f64,
    /// Mode count of the optimum; 0 in the Poisson limit.
    pub modes: u32,
    pub poisson: bool,
    pub squeezing_ratio: f64,
    pub converged: bool,
    pub searches: u64,
    pub evaluations: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|e| {
        let mut bytes = e.into_vec();
        bytes.retain(|b| *b != 0);
        CString::new(bytes).expect("nul bytes removed")
    });
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &ModelError) -> SpdcStatus {
    match e {
        ModelError::InvalidParameter { .. } => SpdcStatus::InvalidParameter,
        ModelError::Consistency { .. } => SpdcStatus::Consistency,
        ModelError::Optimization(_) => SpdcStatus::Optimization,
        ModelError::Truncation { .. } => SpdcStatus::Truncation,
    }
}

/// Run `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (SpdcStatus, String)>) -> SpdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpdcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside spdc-chsh".into());
            SpdcStatus::Panic
        }
    }
}

fn model(e: ModelError) -> (SpdcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SpdcStatus, String) {
    (SpdcStatus::NullPointer, format!("`{what}` is null"))
}

fn chsh_out(r: &ChshResult) -> SpdcChsh {
    SpdcChsh {
        s: r.s,
        ch: r.ch(),
        correlators: [r.correlators[0][0], r.correlators[0][1], r.correlators[1][0], r.correlators[1][1]],
        binning: r.binning.index() as u32,
    }
}

unsafe fn new_config(config: ExperimentConfig, out: *mut *mut SpdcConfig) -> SpdcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        config.validate().map_err(model)?;
        *out = Box::into_raw(Box::new(SpdcConfig(config)));
        Ok(())
    })
}

fn with_source(source: SourceParams, eta: f64, p_dc: f64) -> ExperimentConfig {
    ExperimentConfig { source, detectors: DetectorParams::new(eta, p_dc), ..ExperimentConfig::vacuum() }
}

/// Create a finite-mode configuration with all analyser angles and phases zero.
///
/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn spdc_config_new_finite(
    g: f64,
    g_bar: f64,
    modes: u32,
    eta: f64,
    p_dc: f64,
    out: *mut *mut SpdcConfig,
) -> SpdcStatus {
    new_config(with_source(SourceParams::finite(g, g_bar, modes), eta, p_dc), out)
}

/// Create a Poisson-limit configuration with all analyser angles and phases zero.
///
/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn spdc_config_new_poisson(
    gamma: f64,
    gamma_bar: f64,
    eta: f64,
    p_dc: f64,
    out: *mut *mut SpdcConfig,
) -> SpdcStatus {
    new_config(with_source(SourceParams::poisson(gamma, gamma_bar), eta, p_dc), out)
}

/// Set analyser `index` (0 or 1) of `party` (0 Alice, 1 Bob), in radians.
///
/// # Safety
/// `config` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spdc_config_set_setting(
    config: *mut SpdcConfig,
    party: u32,
    index: u32,
    angle: f64,
    phase: f64,
) -> SpdcStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        if party > 1 || index > 1 {
            return Err((SpdcStatus::InvalidParameter, format!("no analyser {index} for party {party}")));
        }
        let mut next = c.0;
        let settings = if party == 0 { &mut next.alice_settings } else { &mut next.bob_settings };
        settings[index as usize] = MeasurementSetting::new(angle, phase);
        next.validate().map_err(model)?;
        c.0 = next;
        Ok(())
    })
}

/// Copy of a configuration.
///
/// # Safety
/// `config` must be null or a live handle; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_config_clone(config: *const SpdcConfig, out: *mut *mut SpdcConfig) -> SpdcStatus {
    match config.as_ref() {
        Some(c) => new_config(c.0, out),
        None => guard(|| Err(null("config"))),
    }
}

/// Release a configuration; null is ignored.
///
/// # Safety
/// `config` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spdc_config_free(config: *mut SpdcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// CHSH value under the best of the 256 binnings.
///
/// # Safety
/// `config` must be null or a live handle; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_evaluate(config: *const SpdcConfig, out: *mut SpdcChsh) -> SpdcStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let v = c.0.validate().map_err(model)?;
        *out = chsh_out(&best_binning(&v).map_err(model)?.1);
        Ok(())
    })
}

/// CHSH value under strategy `binning` (below 256).
///
/// # Safety
/// `config` must be null or a live handle; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_evaluate_binning(config: *const SpdcConfig, binning: u32, out: *mut SpdcChsh) -> SpdcStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if binning >= 256 {
            return Err((SpdcStatus::InvalidParameter, format!("binning {binning} is not below 256")));
        }
        let v = c.0.validate().map_err(model)?;
        *out = chsh_out(&chsh(&v, BinningStrategy::from_index(binning as usize)).map_err(model)?);
        Ok(())
    })
}

/// The 16 click-pattern probabilities for settings `(x, y)`. Pattern bits
/// are A, A⊥, B, B⊥ from the least significant, 1 meaning a click.
///
/// # Safety
/// `config` must be null or a live handle; `out` null or valid for 16 writes.
#[no_mangle]
pub unsafe extern "C" fn spdc_joint_distribution(
    config: *const SpdcConfig,
    x: u32,
    y: u32,
    out: *mut f64,
) -> SpdcStatus {
    guard(|| {
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if x > 1 || y > 1 {
            return Err((SpdcStatus::InvalidParameter, format!("no setting pair ({x}, {y})")));
        }
        let v = c.0.validate().map_err(model)?;
        let d = all_distributions(&v).map_err(model)?;
        ptr::copy_nonoverlapping(d[x as usize][y as usize].probs().as_ptr(), out, 16);
        Ok(())
    })
}

/// Maximize the CHSH value.
///
/// # Safety
/// `options` must be null or valid for a read; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_optimize(
    options: *const SpdcOptimizeOptions,
    out: *mut *mut SpdcOptimization,
) -> SpdcStatus {
    guard(|| {
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let policy = match o.policy {
            p if p == SpdcModePolicy::Fixed as u32 => ModePolicy::Fixed(o.modes),
            p if p == SpdcModePolicy::PoissonLimit as u32 => ModePolicy::PoissonLimit,
            p if p == SpdcModePolicy::SweepFinite as u32 => ModePolicy::SweepFinite(o.modes),
            p if p == SpdcModePolicy::Free as u32 => ModePolicy::Free,
            p => return Err((SpdcStatus::InvalidParameter, format!("unknown mode policy {p}"))),
        };
        let mut problem = OptimizationProblem::new(DetectorParams::new(o.eta, o.p_dc), policy);
        problem.force_equal_squeezing = o.equal_squeezing;
        problem.seed = o.seed;
        if o.restarts > 0 {
            problem.restarts = o.restarts as usize;
        }
        let r = optimize(&problem).map_err(model)?;
        *out = Box::into_raw(Box::new(SpdcOptimization(r)));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a live handle; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_optimization_summary(
    result: *const SpdcOptimization,
    out: *mut SpdcOptimizationSummary,
) -> SpdcStatus {
    guard(|| {
        let r = &result.as_ref().ok_or_else(|| null("result"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (strength, strength_bar) = r.config.source.strengths();
        let modes = match r.config.source {
            SourceParams::Finite { modes, .. } => modes,
            SourceParams::PoissonLimit { .. } => 0,
        };
        *out = SpdcOptimizationSummary {
            chsh: chsh_out(&r.chsh),
            strength,
            strength_bar,
            modes,
            poisson: r.config.source.is_poisson(),
            squeezing_ratio: r.squeezing_ratio(),
            converged: r.converged,
            searches: r.restarts as u64,
            evaluations: r.evaluations as u64,
        };
        Ok(())
    })
}

/// New configuration handle holding the optimum.
///
/// # Safety
/// `result` must be null or a live handle; `out` null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn spdc_optimization_config(
    result: *const SpdcOptimization,
    out: *mut *mut SpdcConfig,
) -> SpdcStatus {
    match result.as_ref() {
        Some(r) => new_config(r.0.config, out),
        None => guard(|| Err(null("result"))),
    }
}

/// Release an optimization result; null is ignored.
///
/// # Safety
/// `result` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn spdc_optimization_free(result: *mut SpdcOptimization) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Copy the last error message of this thread into `buf` (nul-terminated,
/// truncated to `len`). Returns the full message length without the nul;
/// 0 when no error was recorded.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn spdc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static name of a status code; unknown codes get `"unknown status"`.
#[no_mangle]
pub extern "C" fn spdc_status_name(status: i32) -> *const c_char {
    let s: &'static [u8] = match status {
        0 => b"ok\0",
        1 => b"null pointer\0",
        2 => b"invalid parameter\0",
        3 => b"internal consistency error\0",
        4 => b"optimization failed\0",
        5 => b"fock truncation too coarse\0",
        6 => b"panic\0",
        _ => b"unknown status\0",
    };
    s.as_ptr().cast()
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn spdc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
