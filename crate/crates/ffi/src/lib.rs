//! C ABI over `projcorr`.
//!
//! Operators and pseudoinverse engines are opaque heap handles released with
//! their `_free` function. Every fallible call returns a [`PcStatus`]; on
//! failure [`pc_last_error`] gives a message for the calling thread. Output
//! buffers are caller-allocated and their length must match the dimension
//! the call produces exactly.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use projcorr::correction::{exact_correction, regularized_correction, CorrectionConfig, NoiseModel};
use projcorr::diagnostics::{mse, noise_bias_trace, nullspace_consistency, psnr, ssim, SsimParams};
use projcorr::linops::{make_gaussian_blur, make_inpainting_mask, make_spi_operator, Geometry, SensingOperator};
use projcorr::pinv::PinvEngine;
use projcorr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    DegenerateOperator = 3,
    Parameter = 4,
    Solver = 5,
    Unsupported = 6,
    Rank = 7,
    Lookup = 8,
    Divergence = 9,
    NonFinite = 10,
    Format = 11,
    Io = 12,
    Json = 13,
    Panic = 14,
}

impl From<&Error> for PcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => PcStatus::Dimension,
            Error::DegenerateOperator(_) => PcStatus::DegenerateOperator,
            Error::Parameter(_) => PcStatus::Parameter,
            Error::Solver { .. } => PcStatus::Solver,
            Error::Unsupported(_) => PcStatus::Unsupported,
            Error::Rank(_) => PcStatus::Rank,
            Error::Lookup(_) => PcStatus::Lookup,
            Error::Divergence { .. } => PcStatus::Divergence,
            Error::NonFinite(_) => PcStatus::NonFinite,
            Error::Format(_) => PcStatus::Format,
            Error::Io(_) => PcStatus::Io,
            Error::Json(_) => PcStatus::Json,
        }
    }
}

/// Opaque sensing operator.
pub struct PcOperator(Arc<SensingOperator>);

/// Opaque pseudoinverse engine bound to one operator.
pub struct PcEngine(PinvEngine);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(PcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PcStatus::from(&e), e.to_string())
    }
}

type Call<T = ()> = std::result::Result<T, Failure>;

fn null(what: &str) -> Failure {
    Failure(PcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Call) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside projcorr".into());
            PcStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Call<&'a [f64]> {
    if len == 0 {
        Ok(&[])
    } else if p.is_null() {
        Err(null(what))
    } else {
        Ok(unsafe { std::slice::from_raw_parts(p, len) })
    }
}

unsafe fn output(out: *mut f64, out_len: usize, values: &[f64]) -> Call {
    if out_len != values.len() {
        return Err(Failure(
            PcStatus::Dimension,
            format!("output buffer: expected length {}, got {out_len}", values.len()),
        ));
    }
    if out.is_null() && out_len > 0 {
        return Err(null("output buffer"));
    }
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, out_len) };
    Ok(())
}

unsafe fn scalar_out(out: *mut f64, value: f64) -> Call {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = value };
    Ok(())
}

unsafe fn operator<'a>(op: *const PcOperator) -> Call<&'a SensingOperator> {
    unsafe { op.as_ref() }.map(|o| o.0.as_ref()).ok_or_else(|| null("operator"))
}

unsafe fn engine<'a>(e: *const PcEngine) -> Call<&'a PinvEngine> {
    unsafe { e.as_ref() }.map(|e| &e.0).ok_or_else(|| null("engine"))
}

unsafe fn store_operator(out: *mut *mut PcOperator, op: SensingOperator) -> Call {
    if out.is_null() {
        return Err(null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(PcOperator(Arc::new(op)))) };
    Ok(())
}

fn noise(sigma: f64) -> NoiseModel {
    if sigma > 0.0 {
        NoiseModel::Isotropic { sigma }
    } else {
        NoiseModel::None
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn pc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Dense `rows × cols` operator from row-major `data`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_dense(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut PcOperator,
) -> PcStatus {
    guard(|| {
        let data = unsafe { input(data, rows.saturating_mul(cols), "data") }?;
        let op = SensingOperator::dense_from_rows(rows, cols, data)?;
        unsafe { store_operator(out, op) }
    })
}

/// Random inpainting mask over a `channels × height × width` image.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_mask(
    height: usize,
    width: usize,
    channels: usize,
    keep_probability: f64,
    seed: u64,
    out: *mut *mut PcOperator,
) -> PcStatus {
    guard(|| {
        let g = Geometry::new(height, width, channels)?;
        unsafe { store_operator(out, make_inpainting_mask(g, keep_probability, seed)?) }
    })
}

/// Periodic Gaussian blur with per-axis widths.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_blur(
    height: usize,
    width: usize,
    channels: usize,
    sigma_row: f64,
    sigma_col: f64,
    truncation: f64,
    out: *mut *mut PcOperator,
) -> PcStatus {
    guard(|| {
        let g = Geometry::new(height, width, channels)?;
        unsafe { store_operator(out, make_gaussian_blur(g, (sigma_row, sigma_col), truncation)?) }
    })
}

/// Single-pixel imaging operator with `m` random ±1 patterns of length `n`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_spi(n: usize, m: usize, seed: u64, out: *mut *mut PcOperator) -> PcStatus {
    guard(|| unsafe { store_operator(out, make_spi_operator(n, m, seed)?) })
}

/// Length of the signals the operator accepts; 0 for a null handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_input_dim(op: *const PcOperator) -> usize {
    unsafe { op.as_ref() }.map_or(0, |o| o.0.input_dim())
}

/// Length of the measurements the operator produces; 0 for a null handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_output_dim(op: *const PcOperator) -> usize {
    unsafe { op.as_ref() }.map_or(0, |o| o.0.output_dim())
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_apply(
    op: *const PcOperator,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let y = operator(op)?.apply(input(x, x_len, "x")?)?;
        output(out, out_len, &y)
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_adjoint(
    op: *const PcOperator,
    u: *const f64,
    u_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let x = operator(op)?.adjoint(input(u, u_len, "u")?)?;
        output(out, out_len, &x)
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_operator_free(op: *mut PcOperator) {
    if !op.is_null() {
        drop(unsafe { Box::from_raw(op) });
    }
}

/// Builds the pseudoinverse engine with the default method for the operator
/// kind. The operator handle may be freed afterwards.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_engine_new(op: *const PcOperator, out: *mut *mut PcEngine) -> PcStatus {
    guard(|| {
        let op = unsafe { op.as_ref() }.ok_or_else(|| null("operator"))?;
        if out.is_null() {
            return Err(null("output handle"));
        }
        let engine = PinvEngine::new(Arc::clone(&op.0))?;
        unsafe { *out = Box::into_raw(Box::new(PcEngine(engine))) };
        Ok(())
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_engine_free(engine: *mut PcEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// `out = A⁺y`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_engine_pinv(
    e: *const PcEngine,
    y: *const f64,
    y_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let x = engine(e)?.pinv_apply(input(y, y_len, "y")?)?;
        output(out, out_len, &x)
    })
}

/// `out = A⁺Av`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_engine_range_project(
    e: *const PcEngine,
    v: *const f64,
    v_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let r = engine(e)?.range_projector_apply(input(v, v_len, "v")?)?;
        output(out, out_len, &r)
    })
}

/// `out = v − A⁺Av`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_engine_null_project(
    e: *const PcEngine,
    v: *const f64,
    v_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let r = engine(e)?.nullspace_projector_apply(input(v, v_len, "v")?)?;
        output(out, out_len, &r)
    })
}

/// Replaces the range component of `fhat` with the one fixed by `y`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_correct_exact(
    e: *const PcEngine,
    y: *const f64,
    y_len: usize,
    fhat: *const f64,
    fhat_len: usize,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let x = exact_correction(engine(e)?, input(y, y_len, "y")?, input(fhat, fhat_len, "fhat")?)?;
        output(out, out_len, &x)
    })
}

/// Regularized correction with data weight `lambda` under isotropic noise
/// of standard deviation `sigma`; `sigma <= 0` weights the data term with
/// the identity.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_correct_regularized(
    e: *const PcEngine,
    y: *const f64,
    y_len: usize,
    fhat: *const f64,
    fhat_len: usize,
    lambda: f64,
    sigma: f64,
    out: *mut f64,
    out_len: usize,
) -> PcStatus {
    guard(|| unsafe {
        let config = CorrectionConfig::regularized(lambda, noise(sigma));
        let x = regularized_correction(engine(e)?, input(y, y_len, "y")?, input(fhat, fhat_len, "fhat")?, &config)?;
        output(out, out_len, &x)
    })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_mse(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> PcStatus {
    guard(|| unsafe { scalar_out(out, mse(input(a, len, "a")?, input(b, len, "b")?)?) })
}

#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_psnr(a: *const f64, b: *const f64, len: usize, peak: f64, out: *mut f64) -> PcStatus {
    guard(|| unsafe { scalar_out(out, psnr(input(a, len, "a")?, input(b, len, "b")?, peak)?) })
}

/// Mean SSIM over channels with an 11×11 Gaussian window (σ = 1.5) and
/// data range 1. Images are planar `channels × height × width`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_ssim(
    a: *const f64,
    b: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| unsafe {
        let g = Geometry::new(height, width, channels)?;
        let value = ssim(input(a, g.len(), "a")?, input(b, g.len(), "b")?, g, &SsimParams::default())?;
        scalar_out(out, value)
    })
}

/// `‖A(fhat − A⁺y)‖²`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_nullspace_consistency(
    e: *const PcEngine,
    y: *const f64,
    y_len: usize,
    fhat: *const f64,
    fhat_len: usize,
    out: *mut f64,
) -> PcStatus {
    guard(|| unsafe {
        let value = nullspace_consistency(engine(e)?, input(y, y_len, "y")?, input(fhat, fhat_len, "fhat")?)?;
        scalar_out(out, value)
    })
}

/// `Tr(A⁺ΣA⁺ᵀ)` for isotropic noise; 0 when `sigma <= 0`.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn pc_noise_bias_trace(e: *const PcEngine, sigma: f64, out: *mut f64) -> PcStatus {
    guard(|| unsafe { scalar_out(out, noise_bias_trace(engine(e)?, &noise(sigma))?) })
}
