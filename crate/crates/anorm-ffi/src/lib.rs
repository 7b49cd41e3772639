//! C ABI for the array normal library. Handles are opaque pointers;
//! every fallible call returns a status code and leaves a thread-local
//! message retrievable with `anorm_last_error`.
//!
//! The corresponding declarations live in `include/anorm.h`.

use anorm::array_normal::{ArrayNormal, SeparableCovariance};
use anorm::error::Error;
use anorm::linalg::RngStream;
use anorm::mle::{fit_mle, MleConfig, MleResult};
use anorm::tensor::DenseArray;
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CString};

pub const ANORM_OK: c_int = 0;
pub const ANORM_ERR_ARGUMENT: c_int = 1;
pub const ANORM_ERR_CONFIG: c_int = 2;
pub const ANORM_ERR_DATA: c_int = 3;
pub const ANORM_ERR_NUMERIC: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap());
}

fn code_of(e: &Error) -> c_int {
    match e {
        Error::InvalidConfig(_) | Error::InvalidMode { .. } | Error::InvalidDof { .. } => {
            ANORM_ERR_CONFIG
        }
        Error::Data(_)
        | Error::MissingData(_)
        | Error::Io(_)
        | Error::ShapeMismatch(_)
        | Error::InvalidIndex(_) => ANORM_ERR_DATA,
        Error::SamplerStep { source, .. } => code_of(source),
        _ => ANORM_ERR_NUMERIC,
    }
}

fn fail(e: Error) -> c_int {
    set_error(&e.to_string());
    code_of(&e)
}

fn bad_argument(msg: &str) -> c_int {
    set_error(msg);
    ANORM_ERR_ARGUMENT
}

/// Message from the most recent failing call on this thread. The pointer
/// stays valid until the next failing call.
#[no_mangle]
pub extern "C" fn anorm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

pub struct AnormArray(DenseArray);
pub struct AnormFit(MleResult);

/// Create a dense array. `data` is flat in storage order: the first mode
/// varies fastest. `data_len` must equal the product of `dims`.
#[no_mangle]
pub unsafe extern "C" fn anorm_array_new(
    dims: *const usize,
    order: usize,
    data: *const c_double,
    data_len: usize,
    out: *mut *mut AnormArray,
) -> c_int {
    if dims.is_null() || data.is_null() || out.is_null() || order == 0 {
        return bad_argument("null pointer or zero order");
    }
    let dims = std::slice::from_raw_parts(dims, order).to_vec();
    let data = std::slice::from_raw_parts(data, data_len).to_vec();
    match DenseArray::new(dims, data) {
        Ok(a) => {
            *out = Box::into_raw(Box::new(AnormArray(a)));
            ANORM_OK
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn anorm_array_free(array: *mut AnormArray) {
    if !array.is_null() {
        drop(Box::from_raw(array));
    }
}

#[no_mangle]
pub unsafe extern "C" fn anorm_array_order(array: *const AnormArray) -> usize {
    if array.is_null() {
        return 0;
    }
    (*array).0.order()
}

#[no_mangle]
pub unsafe extern "C" fn anorm_array_dim(array: *const AnormArray, mode: usize) -> usize {
    if array.is_null() {
        return 0;
    }
    let a = &(*array).0;
    if mode >= a.order() {
        return 0;
    }
    a.dims()[mode]
}

/// Copy the flat data into `buf` (`buf_len` must equal the cell count).
#[no_mangle]
pub unsafe extern "C" fn anorm_array_data(
    array: *const AnormArray,
    buf: *mut c_double,
    buf_len: usize,
) -> c_int {
    if array.is_null() || buf.is_null() {
        return bad_argument("null pointer");
    }
    let a = &(*array).0;
    if buf_len != a.len() {
        return bad_argument("buffer length does not match cell count");
    }
    std::slice::from_raw_parts_mut(buf, buf_len).copy_from_slice(a.data());
    ANORM_OK
}

/// Log density of `y` under the standard array normal (zero mean,
/// identity components).
#[no_mangle]
pub unsafe extern "C" fn anorm_standard_log_density(
    y: *const AnormArray,
    out: *mut c_double,
) -> c_int {
    if y.is_null() || out.is_null() {
        return bad_argument("null pointer");
    }
    let arr = &(*y).0;
    let dist = ArrayNormal::standard(arr.dims());
    match dist.log_density(arr) {
        Ok(v) => {
            *out = v;
            ANORM_OK
        }
        Err(e) => fail(e),
    }
}

/// Draw from the standard array normal of the given dims, seeded.
#[no_mangle]
pub unsafe extern "C" fn anorm_sample_standard(
    dims: *const usize,
    order: usize,
    seed: u64,
    out: *mut *mut AnormArray,
) -> c_int {
    if dims.is_null() || out.is_null() || order == 0 {
        return bad_argument("null pointer or zero order");
    }
    let dims = std::slice::from_raw_parts(dims, order);
    if dims.contains(&0) {
        return bad_argument("zero-length mode");
    }
    let mut rng = RngStream::new(seed);
    let draw = ArrayNormal::standard(dims).sample(&mut rng);
    *out = Box::into_raw(Box::new(AnormArray(draw)));
    ANORM_OK
}

/// Maximum-likelihood fit; the last mode of `ys` indexes i.i.d.
/// replicates. `max_iters == 0` selects the default.
#[no_mangle]
pub unsafe extern "C" fn anorm_fit_mle(
    ys: *const AnormArray,
    max_iters: usize,
    rel_tol: c_double,
    out: *mut *mut AnormFit,
) -> c_int {
    if ys.is_null() || out.is_null() {
        return bad_argument("null pointer");
    }
    let mut cfg = MleConfig::default();
    if max_iters > 0 {
        cfg.max_iters = max_iters;
    }
    if rel_tol > 0.0 {
        cfg.rel_tol = rel_tol;
    }
    match fit_mle(&(*ys).0, &cfg) {
        Ok(fit) => {
            *out = Box::into_raw(Box::new(AnormFit(fit)));
            ANORM_OK
        }
        Err(e) => fail(e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn anorm_fit_free(fit: *mut AnormFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

#[no_mangle]
pub unsafe extern "C" fn anorm_fit_converged(fit: *const AnormFit) -> c_int {
    if fit.is_null() {
        return 0;
    }
    (*fit).0.converged as c_int
}

#[no_mangle]
pub unsafe extern "C" fn anorm_fit_loglik(fit: *const AnormFit, out: *mut c_double) -> c_int {
    if fit.is_null() || out.is_null() {
        return bad_argument("null pointer");
    }
    *out = *(*fit).0.loglik_trace.last().unwrap();
    ANORM_OK
}

#[no_mangle]
pub unsafe extern "C" fn anorm_fit_mode_count(fit: *const AnormFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).0.cov_hat.order()
}

#[no_mangle]
pub unsafe extern "C" fn anorm_fit_mode_dim(fit: *const AnormFit, mode: usize) -> usize {
    if fit.is_null() {
        return 0;
    }
    let cov = &(*fit).0.cov_hat;
    if mode >= cov.order() {
        return 0;
    }
    cov.comp(mode).dim()
}

/// Copy the mode-`mode` covariance component into `buf`, row-major.
/// `buf_len` must equal `dim * dim`.
#[no_mangle]
pub unsafe extern "C" fn anorm_fit_component(
    fit: *const AnormFit,
    mode: usize,
    buf: *mut c_double,
    buf_len: usize,
) -> c_int {
    if fit.is_null() || buf.is_null() {
        return bad_argument("null pointer");
    }
    let cov = &(*fit).0.cov_hat;
    if mode >= cov.order() {
        return bad_argument("mode out of range");
    }
    let m = cov.comp(mode).dim();
    if buf_len != m * m {
        return bad_argument("buffer length does not match component size");
    }
    let values = cov.comp(mode).values();
    let out = std::slice::from_raw_parts_mut(buf, buf_len);
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = values[(i, j)];
        }
    }
    ANORM_OK
}

/// Copy the fitted mean into `buf` (flat storage order).
#[no_mangle]
pub unsafe extern "C" fn anorm_fit_mean(
    fit: *const AnormFit,
    buf: *mut c_double,
    buf_len: usize,
) -> c_int {
    if fit.is_null() || buf.is_null() {
        return bad_argument("null pointer");
    }
    let mean = &(*fit).0.mean_hat;
    if buf_len != mean.len() {
        return bad_argument("buffer length does not match mean size");
    }
    std::slice::from_raw_parts_mut(buf, buf_len).copy_from_slice(mean.data());
    ANORM_OK
}

/// Log density of `y` under an array normal assembled from `mean` and
/// per-mode covariance components (row-major, concatenated mode by mode).
#[no_mangle]
pub unsafe extern "C" fn anorm_log_density(
    y: *const AnormArray,
    mean: *const AnormArray,
    comps: *const c_double,
    comps_len: usize,
    out: *mut c_double,
) -> c_int {
    if y.is_null() || mean.is_null() || comps.is_null() || out.is_null() {
        return bad_argument("null pointer");
    }
    let yarr = &(*y).0;
    let marr = &(*mean).0;
    let expected: usize = yarr.dims().iter().map(|&d| d * d).sum();
    if comps_len != expected {
        return bad_argument("component buffer length does not match dims");
    }
    let flat = std::slice::from_raw_parts(comps, comps_len);
    let mut offset = 0;
    let mut mats = Vec::with_capacity(yarr.order());
    for &m in yarr.dims() {
        let block = &flat[offset..offset + m * m];
        offset += m * m;
        let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| block[i * m + j]);
        match anorm::linalg::SpdMatrix::new(mat) {
            Ok(s) => mats.push(s),
            Err(e) => return fail(e),
        }
    }
    let dist = match ArrayNormal::new(marr.clone(), SeparableCovariance::new(mats)) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    match dist.log_density(yarr) {
        Ok(v) => {
            *out = v;
            ANORM_OK
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn array_round_trip_through_the_abi() {
        unsafe {
            let dims = [2usize, 3];
            let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
            let mut h: *mut AnormArray = ptr::null_mut();
            assert_eq!(anorm_array_new(dims.as_ptr(), 2, data.as_ptr(), 6, &mut h), ANORM_OK);
            assert_eq!(anorm_array_order(h), 2);
            assert_eq!(anorm_array_dim(h, 1), 3);
            let mut buf = [0.0; 6];
            assert_eq!(anorm_array_data(h, buf.as_mut_ptr(), 6), ANORM_OK);
            assert_eq!(buf, data);
            anorm_array_free(h);
        }
    }

    #[test]
    fn shape_errors_surface_as_data_code_with_message() {
        unsafe {
            let dims = [2usize, 3];
            let data = [0.0; 5];
            let mut h: *mut AnormArray = ptr::null_mut();
            let code = anorm_array_new(dims.as_ptr(), 2, data.as_ptr(), 5, &mut h);
            assert_eq!(code, ANORM_ERR_DATA);
            let msg = std::ffi::CStr::from_ptr(anorm_last_error());
            assert!(!msg.to_bytes().is_empty());
        }
    }

    #[test]
    fn standard_log_density_matches_direct_evaluation() {
        unsafe {
            let dims = [2usize, 2];
            let mut h: *mut AnormArray = ptr::null_mut();
            assert_eq!(anorm_sample_standard(dims.as_ptr(), 2, 11, &mut h), ANORM_OK);
            let mut ffi_value = 0.0;
            assert_eq!(anorm_standard_log_density(h, &mut ffi_value), ANORM_OK);
            let mut buf = [0.0; 4];
            assert_eq!(anorm_array_data(h, buf.as_mut_ptr(), 4), ANORM_OK);
            let direct: f64 = buf
                .iter()
                .map(|v| -0.5 * (v * v + (2.0 * std::f64::consts::PI).ln()))
                .sum();
            assert!((ffi_value - direct).abs() < 1e-12);
            anorm_array_free(h);
        }
    }

    #[test]
    fn mle_fit_through_the_abi() {
        unsafe {
            let dims = [2usize, 2, 200];
            let mut h: *mut AnormArray = ptr::null_mut();
            assert_eq!(anorm_sample_standard(dims.as_ptr(), 3, 12, &mut h), ANORM_OK);
            let mut fit: *mut AnormFit = ptr::null_mut();
            assert_eq!(anorm_fit_mle(h, 0, 0.0, &mut fit), ANORM_OK);
            assert_eq!(anorm_fit_converged(fit), 1);
            assert_eq!(anorm_fit_mode_count(fit), 2);
            assert_eq!(anorm_fit_mode_dim(fit, 0), 2);
            let mut comp = [0.0; 4];
            assert_eq!(anorm_fit_component(fit, 0, comp.as_mut_ptr(), 4), ANORM_OK);
            // identity data, generous tolerance
            assert!((comp[0] - 1.0).abs() < 0.4 && comp[1].abs() < 0.4);
            let mut ll = 0.0;
            assert_eq!(anorm_fit_loglik(fit, &mut ll), ANORM_OK);
            assert!(ll.is_finite());
            anorm_fit_free(fit);
            anorm_array_free(h);
        }
    }

    #[test]
    fn header_declares_every_exported_symbol() {
        let header = include_str!("../include/anorm.h");
        for symbol in [
            "anorm_last_error",
            "anorm_array_new",
            "anorm_array_free",
            "anorm_array_order",
            "anorm_array_dim",
            "anorm_array_data",
            "anorm_standard_log_density",
            "anorm_sample_standard",
            "anorm_fit_mle",
            "anorm_fit_free",
            "anorm_fit_converged",
            "anorm_fit_loglik",
            "anorm_fit_mode_count",
            "anorm_fit_mode_dim",
            "anorm_fit_component",
            "anorm_fit_mean",
            "anorm_log_density",
        ] {
            assert!(header.contains(symbol), "header is missing {symbol}");
        }
    }
}
