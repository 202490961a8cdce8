//! C ABI over the heatpack library.
//!
//! Conventions: every function returns an [`HpStatus`] code; outputs go
//! through pointers. Frames are opaque handles created by `hp_frame_build`
//! or `hp_frame_from_json` and released with `hp_frame_free`. String
//! returns stay valid until the next call on the same thread.

use heatpack::design;
use heatpack::grid::{BoxDomain, FieldValues, GridField, ObservationSet};
use heatpack::oracle;
use heatpack::packet::{self, EpsilonPolicy, Frame, HeatPacket, TruncationMode};
use heatpack::Error;
use libc::{c_char, c_double, c_int};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes mirroring the library's error classes.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HpStatus {
    Ok = 0,
    PreconditionViolation = 2,
    NumericalNonconvergence = 3,
    InvariantFailure = 4,
    NullPointer = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Truncation set geometry for `hp_frame_build`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HpTruncationMode {
    Box = 0,
    Band = 1,
    Spectral = 2,
}

/// Opaque packet-frame handle.
pub struct HpFrame {
    inner: Frame,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> HpStatus {
    match err.exit_code() {
        2 => HpStatus::PreconditionViolation,
        3 => HpStatus::NumericalNonconvergence,
        _ => HpStatus::InvariantFailure,
    }
}

fn guard<F: FnOnce() -> Result<(), (HpStatus, String)>>(f: F) -> HpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (HpStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn slice_arg<'a>(ptr: *const c_double, len: usize) -> Result<&'a [f64], (HpStatus, String)> {
    if ptr.is_null() {
        return Err((HpStatus::NullPointer, "null pointer argument".into()));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message for the most recent failure on this thread. Valid until the next
/// FFI call from the same thread.
#[no_mangle]
pub extern "C" fn hp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a packet frame for the built-in bump profile and certifies its
/// reconstruction error on the given grid.
///
/// # Safety
/// `lo`, `hi` (length `d`), `x0` (length `d`) and `res` (length `d`) must be
/// readable; `out_frame` must be a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_build(
    d: usize,
    epsilon0: c_double,
    delta: c_double,
    eta: c_double,
    epsilon: c_double,
    mode: HpTruncationMode,
    x0: *const c_double,
    lo: *const c_double,
    hi: *const c_double,
    res: *const usize,
    out_frame: *mut *mut HpFrame,
) -> HpStatus {
    guard(|| {
        if out_frame.is_null() || res.is_null() {
            return Err((HpStatus::NullPointer, "null pointer argument".into()));
        }
        let x0 = slice_arg(x0, d)?.to_vec();
        let lo = slice_arg(lo, d)?.to_vec();
        let hi = slice_arg(hi, d)?.to_vec();
        let res = std::slice::from_raw_parts(res, d).to_vec();
        let bump = heatpack::BumpSpec::new(epsilon0, x0, delta);
        let domain = BoxDomain::new(lo, hi).map_err(lib_err)?;
        let mode = match mode {
            HpTruncationMode::Box => TruncationMode::Box,
            HpTruncationMode::Band => TruncationMode::Band,
            HpTruncationMode::Spectral => TruncationMode::Spectral,
        };
        let built = packet::build_frame_full(
            &bump,
            eta,
            EpsilonPolicy::Fixed(epsilon),
            mode,
            &domain,
            &res,
        )
        .map_err(lib_err)?;
        *out_frame = Box::into_raw(Box::new(HpFrame { inner: built.frame }));
        Ok(())
    })
}

/// Parses a frame from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_frame` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_from_json(
    json: *const c_char,
    out_frame: *mut *mut HpFrame,
) -> HpStatus {
    guard(|| {
        if json.is_null() || out_frame.is_null() {
            return Err((HpStatus::NullPointer, "null pointer argument".into()));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (HpStatus::InvalidArgument, "json is not UTF-8".into()))?;
        let frame = Frame::from_json(text).map_err(lib_err)?;
        *out_frame = Box::into_raw(Box::new(HpFrame { inner: frame }));
        Ok(())
    })
}

/// Serializes the frame to JSON; the returned string is owned by the
/// library and stays valid until the next call on this thread.
///
/// # Safety
/// `frame` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_to_json(frame: *const HpFrame) -> *const c_char {
    if frame.is_null() {
        set_error("null frame");
        return std::ptr::null();
    }
    let text = (*frame).inner.to_json();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
        slot.borrow().as_ptr()
    })
}

/// Number of retained lattice modes.
///
/// # Safety
/// `frame` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_len(frame: *const HpFrame) -> usize {
    if frame.is_null() {
        return 0;
    }
    (*frame).inner.len()
}

/// Certified L2 reconstruction error of the frame.
///
/// # Safety
/// `frame` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_measured_error(frame: *const HpFrame) -> c_double {
    if frame.is_null() {
        return f64::NAN;
    }
    (*frame).inner.measured_error
}

/// Releases a frame handle. Passing NULL is a no-op.
///
/// # Safety
/// `frame` must have been produced by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn hp_frame_free(frame: *mut HpFrame) {
    if !frame.is_null() {
        drop(Box::from_raw(frame));
    }
}

/// Evaluates one heat packet phi(t, x); real and imaginary parts are
/// written to the output pointers.
///
/// # Safety
/// `x0`, `xi`, `x` must point to `d` readable doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn hp_packet_value(
    d: usize,
    x0: *const c_double,
    xi: *const c_double,
    sigma: c_double,
    t: c_double,
    x: *const c_double,
    out_re: *mut c_double,
    out_im: *mut c_double,
) -> HpStatus {
    guard(|| {
        if out_re.is_null() || out_im.is_null() {
            return Err((HpStatus::NullPointer, "null output pointer".into()));
        }
        if t < 0.0 {
            return Err((HpStatus::InvalidArgument, "t must be >= 0".into()));
        }
        let p = HeatPacket::new(
            slice_arg(x0, d)?.to_vec(),
            slice_arg(xi, d)?.to_vec(),
            sigma,
        );
        let v = p.value(t, slice_arg(x, d)?);
        *out_re = v.re;
        *out_im = v.im;
        Ok(())
    })
}

/// Superposition of the frame's packets at (t, x).
///
/// # Safety
/// `frame` live handle; `x` points to `d` doubles; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn hp_superpose(
    frame: *const HpFrame,
    t: c_double,
    x: *const c_double,
    out_re: *mut c_double,
    out_im: *mut c_double,
) -> HpStatus {
    guard(|| {
        if frame.is_null() || out_re.is_null() || out_im.is_null() {
            return Err((HpStatus::NullPointer, "null pointer argument".into()));
        }
        let f = &(*frame).inner;
        let x = slice_arg(x, f.bump.x0.len())?;
        let v = packet::superpose(f, t, x);
        *out_re = v.re;
        *out_im = v.im;
        Ok(())
    })
}

/// Free-space heat kernel.
///
/// # Safety
/// `x`, `y` point to `d` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_free_kernel(
    d: usize,
    t: c_double,
    x: *const c_double,
    y: *const c_double,
    out: *mut c_double,
) -> HpStatus {
    guard(|| {
        if out.is_null() {
            return Err((HpStatus::NullPointer, "null output pointer".into()));
        }
        let v = oracle::free_kernel(t, slice_arg(x, d)?, slice_arg(y, d)?).map_err(lib_err)?;
        *out = v;
        Ok(())
    })
}

/// Kac-principle bound on the kernel difference at y inside the box.
///
/// # Safety
/// `y`, `lo`, `hi` point to `d` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hp_kac_bound(
    d: usize,
    t: c_double,
    y: *const c_double,
    lo: *const c_double,
    hi: *const c_double,
    out: *mut c_double,
) -> HpStatus {
    guard(|| {
        if out.is_null() {
            return Err((HpStatus::NullPointer, "null output pointer".into()));
        }
        let domain =
            BoxDomain::new(slice_arg(lo, d)?.to_vec(), slice_arg(hi, d)?.to_vec())
                .map_err(lib_err)?;
        let v = oracle::kac_bound(t, slice_arg(y, d)?, &domain).map_err(lib_err)?;
        *out = v;
        Ok(())
    })
}

/// Rational erfc approximation (b >= 0).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hp_erfc_rational(b: c_double, out: *mut c_double) -> HpStatus {
    guard(|| {
        if out.is_null() {
            return Err((HpStatus::NullPointer, "null output pointer".into()));
        }
        *out = heatpack::gramian::erfc_rational(b).map_err(lib_err)?;
        Ok(())
    })
}

/// Solves the relaxed sensor-placement problem on the frame's domain grid.
/// The optimal density (values in [0,1], row-major over `res`) is written
/// into `out_mask`, which must hold `prod(res)` doubles.
///
/// # Safety
/// `frame` live handle; `lo`, `hi` length `d`; `res` length `d`; `out_mask`
/// writable with `prod(res)` doubles; the scalar outputs writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hp_design_solve(
    frame: *const HpFrame,
    d: usize,
    lo: *const c_double,
    hi: *const c_double,
    res: *const usize,
    m_fraction: c_double,
    t_end: c_double,
    n_radius: c_double,
    iters: usize,
    tol: c_double,
    out_mask: *mut c_double,
    out_value: *mut c_double,
    out_gap: *mut c_double,
    out_lambda: *mut c_double,
) -> HpStatus {
    guard(|| {
        if frame.is_null() || out_mask.is_null() || res.is_null() {
            return Err((HpStatus::NullPointer, "null pointer argument".into()));
        }
        let f = &(*frame).inner;
        let domain =
            BoxDomain::new(slice_arg(lo, d)?.to_vec(), slice_arg(hi, d)?.to_vec())
                .map_err(lib_err)?;
        let res = std::slice::from_raw_parts(res, d).to_vec();
        let densities = design::densities_for_frame(f, n_radius, t_end, &domain, &res)
            .map_err(lib_err)?;
        let sol = design::saddle_solve(&densities, m_fraction, iters, tol, 1.0)
            .map_err(lib_err)?;
        let n: usize = res.iter().product();
        let out = std::slice::from_raw_parts_mut(out_mask, n);
        out.copy_from_slice(sol.mask.real());
        if !out_value.is_null() {
            *out_value = sol.value;
        }
        if !out_gap.is_null() {
            *out_gap = sol.gap;
        }
        if !out_lambda.is_null() {
            *out_lambda = sol.lambda;
        }
        Ok(())
    })
}

/// Randomized packet observability constant for a mask given as row-major
/// density values on the grid (pass `prod(res)` doubles).
///
/// # Safety
/// `frame` live handle; `lo`, `hi`, `res` length `d`; `mask` readable with
/// `prod(res)` doubles; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hp_c_rand_packets(
    frame: *const HpFrame,
    d: usize,
    lo: *const c_double,
    hi: *const c_double,
    res: *const usize,
    mask: *const c_double,
    t_end: c_double,
    out: *mut c_double,
) -> HpStatus {
    guard(|| {
        if frame.is_null() || out.is_null() || res.is_null() {
            return Err((HpStatus::NullPointer, "null pointer argument".into()));
        }
        let f = &(*frame).inner;
        let domain =
            BoxDomain::new(slice_arg(lo, d)?.to_vec(), slice_arg(hi, d)?.to_vec())
                .map_err(lib_err)?;
        let res = std::slice::from_raw_parts(res, d).to_vec();
        let n: usize = res.iter().product();
        let values = slice_arg(mask, n)?.to_vec();
        let field = GridField {
            domain,
            res,
            values: FieldValues::Real(values),
        };
        let omega = ObservationSet::masked(field).map_err(lib_err)?;
        let (v, _) = heatpack::observability::c_rand_packets(f, &omega, t_end).map_err(lib_err)?;
        *out = v;
        Ok(())
    })
}

/// Library version as understood by the C header.
#[no_mangle]
pub extern "C" fn hp_version() -> c_int {
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build_default_frame() -> *mut HpFrame {
        let mut frame: *mut HpFrame = std::ptr::null_mut();
        let status = unsafe {
            hp_frame_build(
                1,
                0.1,
                0.5,
                0.1,
                (-std::f64::consts::E).exp(),
                HpTruncationMode::Spectral,
                [0.0].as_ptr(),
                [-1.0].as_ptr(),
                [1.0].as_ptr(),
                [256usize].as_ptr(),
                &mut frame,
            )
        };
        assert_eq!(status, HpStatus::Ok);
        assert!(!frame.is_null());
        frame
    }

    #[test]
    fn frame_lifecycle_and_json() {
        let frame = build_default_frame();
        unsafe {
            assert!(hp_frame_len(frame) > 40);
            let err = hp_frame_measured_error(frame);
            assert!(err > 0.0 && err <= 0.1);
            let json = hp_frame_to_json(frame);
            assert!(!json.is_null());
            let text = CStr::from_ptr(json).to_owned();
            let mut frame2: *mut HpFrame = std::ptr::null_mut();
            assert_eq!(
                hp_frame_from_json(text.as_ptr(), &mut frame2),
                HpStatus::Ok
            );
            assert_eq!(hp_frame_len(frame2), hp_frame_len(frame));
            hp_frame_free(frame2);
            hp_frame_free(frame);
        }
    }

    #[test]
    fn scalar_entry_points() {
        unsafe {
            let mut v = 0.0;
            assert_eq!(
                hp_free_kernel(1, 0.25, [0.0].as_ptr(), [1.0].as_ptr(), &mut v),
                HpStatus::Ok
            );
            assert!((v - 0.207554).abs() < 1e-5);
            // negative time is a precondition violation with a message
            assert_eq!(
                hp_free_kernel(1, -1.0, [0.0].as_ptr(), [1.0].as_ptr(), &mut v),
                HpStatus::PreconditionViolation
            );
            let msg = CStr::from_ptr(hp_last_error_message());
            assert!(msg.to_str().unwrap().contains("positive"));

            assert_eq!(
                hp_kac_bound(
                    1,
                    0.1,
                    [0.4].as_ptr(),
                    [-1.0].as_ptr(),
                    [1.0].as_ptr(),
                    &mut v
                ),
                HpStatus::Ok
            );
            assert!(v > 0.0);

            assert_eq!(hp_erfc_rational(1.0, &mut v), HpStatus::Ok);
            assert!((v - 0.15730).abs() < 1e-4);
            assert_eq!(hp_erfc_rational(-1.0, &mut v), HpStatus::InvariantFailure);

            let (mut re, mut im) = (0.0, 0.0);
            assert_eq!(
                hp_packet_value(
                    1,
                    [0.0].as_ptr(),
                    [0.0].as_ptr(),
                    1.0,
                    1.0,
                    [0.0].as_ptr(),
                    &mut re,
                    &mut im
                ),
                HpStatus::Ok
            );
            let expect = (1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 2.0)).sqrt();
            assert!((re - expect).abs() < 1e-14);
            assert_eq!(im, 0.0);
        }
    }

    #[test]
    fn design_and_observability_round_trip() {
        let frame = build_default_frame();
        let res = [64usize];
        let mut mask = vec![0.0f64; 64];
        let (mut value, mut gap, mut lambda) = (0.0, 0.0, 0.0);
        unsafe {
            let status = hp_design_solve(
                frame,
                1,
                [-1.0].as_ptr(),
                [1.0].as_ptr(),
                res.as_ptr(),
                0.3,
                0.05,
                8.0,
                2000,
                1e-8,
                mask.as_mut_ptr(),
                &mut value,
                &mut gap,
                &mut lambda,
            );
            assert_eq!(status, HpStatus::Ok);
            assert!(value > 0.0);
            assert!(gap <= 1e-8);
            let mass: f64 = mask.iter().sum::<f64>() / 64.0 * 2.0;
            assert!((mass - 0.6).abs() < 2.0 * 2.0 / 64.0, "mass {mass}");

            let mut c = 0.0;
            let status = hp_c_rand_packets(
                frame,
                1,
                [-1.0].as_ptr(),
                [1.0].as_ptr(),
                res.as_ptr(),
                mask.as_ptr(),
                0.05,
                &mut c,
            );
            assert_eq!(status, HpStatus::Ok);
            assert!(c > 0.0);
            hp_frame_free(frame);
        }
    }

    #[test]
    fn null_pointer_safety() {
        unsafe {
            let mut v = 0.0;
            assert_eq!(
                hp_free_kernel(1, 0.1, std::ptr::null(), [0.0].as_ptr(), &mut v),
                HpStatus::NullPointer
            );
            assert_eq!(hp_frame_len(std::ptr::null()), 0);
            assert!(hp_frame_measured_error(std::ptr::null()).is_nan());
            hp_frame_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn generated_header_contains_surface() {
        let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("include")
            .join("heatpack.h");
        let text = std::fs::read_to_string(header).expect("header generated by build.rs");
        for symbol in [
            "hp_frame_build",
            "hp_design_solve",
            "hp_c_rand_packets",
            "hp_kac_bound",
            "HpStatus",
            "HpFrame",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
