//! C ABI over a few streamforge structures.
//!
//! Handles are opaque pointers created by a `*_new` function and released
//! by the matching `*_free`. Every fallible call returns an [`SfStatus`];
//! results come back through out-pointers. Handles are not thread-safe.

use std::ffi::{c_char, CStr};

use streamforge::experiment::oracle_answers;
use streamforge::forget_f1::{F1Config, NearUniformReservoir};
use streamforge::genops::{GenOpsConfig, GenOpsHH};
use streamforge::{ContractionOp, Error, SeededRng, Stream, StreamParams};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Unsupported = 3,
    EstimationFailed = 4,
    Parse = 5,
    Internal = 6,
}

impl From<&Error> for SfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Semantic(_) | Error::Blob(_) => SfStatus::Parse,
            Error::UnsupportedOp(_) => SfStatus::Unsupported,
            Error::Domain(_) | Error::Config(_) => SfStatus::InvalidArgument,
            Error::EstimationFailed(_)
            | Error::PromiseViolated(_)
            | Error::UndefinedDistribution
            | Error::UndefinedEntropy => SfStatus::EstimationFailed,
            Error::Io(_) | Error::Json(_) => SfStatus::Internal,
        }
    }
}

/// Contraction applied by [`sf_hh_apply`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfOp {
    Zero = 0,
    Halve = 1,
    /// `max(x - arg, 0)`.
    Subtract = 2,
    /// `min(x, arg)`.
    Cap = 3,
    SqrtFloor = 4,
}

impl SfOp {
    fn op(self, arg: u64) -> ContractionOp {
        match self {
            SfOp::Zero => ContractionOp::Zero,
            SfOp::Halve => ContractionOp::Halve,
            SfOp::Subtract => ContractionOp::Subtract(arg),
            SfOp::Cap => ContractionOp::Cap(arg),
            SfOp::SqrtFloor => ContractionOp::SqrtFloor,
        }
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn sf_status_message(status: SfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SfStatus::Ok => c"ok",
        SfStatus::NullPointer => c"null pointer argument",
        SfStatus::InvalidArgument => c"invalid argument",
        SfStatus::Unsupported => c"unsupported operation",
        SfStatus::EstimationFailed => c"estimation failed",
        SfStatus::Parse => c"malformed stream",
        SfStatus::Internal => c"internal error",
    };
    s.as_ptr()
}

fn boxed<T>(value: T, out: *mut *mut T) -> SfStatus {
    if out.is_null() {
        return SfStatus::NullPointer;
    }
    // SAFETY: `out` is non-null and the caller promises it is writable.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    SfStatus::Ok
}

/// # Safety
/// `handle` is null or came from `Box::into_raw` and is not used again.
unsafe fn release<T>(handle: *mut T) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// `F_1` under forgets.
pub struct SfF1 {
    reservoir: NearUniformReservoir,
    clock: u64,
}

/// Creates an `F_1` sketch. `alpha` is the promised forgotten fraction.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sf_f1_new(eps: f64, delta: f64, alpha: f64, m_bound: u64, seed: u64, out: *mut *mut SfF1) -> SfStatus {
    let params = StreamParams { m_bound, eps, delta, alpha, seed, ..Default::default() };
    match F1Config::new(&params) {
        Ok(cfg) => boxed(SfF1 { reservoir: NearUniformReservoir::new(&cfg, &SeededRng::new(seed, 0)), clock: 0 }, out),
        Err(e) => SfStatus::from(&e),
    }
}

/// # Safety
/// `handle` must come from [`sf_f1_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn sf_f1_insert(handle: *mut SfF1, index: u64, count: u64) -> SfStatus {
    let Some(h) = handle.as_mut() else { return SfStatus::NullPointer };
    h.reservoir.insert_run(index, count, h.clock + 1);
    h.clock += count;
    SfStatus::Ok
}

/// # Safety
/// `handle` must come from [`sf_f1_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn sf_f1_forget(handle: *mut SfF1, index: u64) -> SfStatus {
    let Some(h) = handle.as_mut() else { return SfStatus::NullPointer };
    h.reservoir.forget(index);
    h.clock += 1;
    SfStatus::Ok
}

/// # Safety
/// `handle` must come from [`sf_f1_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_f1_estimate(handle: *const SfF1, out: *mut f64) -> SfStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else { return SfStatus::NullPointer };
    let e = h.reservoir.estimate();
    *out = e.value;
    if e.flagged {
        SfStatus::EstimationFailed
    } else {
        SfStatus::Ok
    }
}

/// # Safety
/// `handle` must be null or come from [`sf_f1_new`], and is invalid after.
#[no_mangle]
pub unsafe extern "C" fn sf_f1_free(handle: *mut SfF1) {
    release(handle);
}

/// `l_2` heavy hitters under contractions.
pub struct SfHeavyHitters {
    inner: GenOpsHH,
}

/// Creates a heavy-hitter tracker for keys `1..=n`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sf_hh_new(eps: f64, alpha: f64, n: u64, seed: u64, out: *mut *mut SfHeavyHitters) -> SfStatus {
    match GenOpsConfig::l2(eps, alpha, n) {
        Ok(cfg) => boxed(SfHeavyHitters { inner: GenOpsHH::new(cfg, &SeededRng::new(seed, 0)) }, out),
        Err(e) => SfStatus::from(&e),
    }
}

/// # Safety
/// `handle` must come from [`sf_hh_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn sf_hh_insert(handle: *mut SfHeavyHitters, index: u64, count: u64) -> SfStatus {
    let Some(h) = handle.as_mut() else { return SfStatus::NullPointer };
    h.inner.insert(index, count);
    SfStatus::Ok
}

/// Applies a contraction to coordinate `index`; `arg` is read by
/// `SUBTRACT` and `CAP` only.
///
/// # Safety
/// `handle` must come from [`sf_hh_new`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn sf_hh_apply(handle: *mut SfHeavyHitters, index: u64, op: SfOp, arg: u64) -> SfStatus {
    let Some(h) = handle.as_mut() else { return SfStatus::NullPointer };
    h.inner.apply_op(index, op.op(arg));
    SfStatus::Ok
}

/// Estimate of coordinate `index`; 0 for coordinates never heavy.
///
/// # Safety
/// `handle` must come from [`sf_hh_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_hh_query(handle: *const SfHeavyHitters, index: u64, out: *mut u64) -> SfStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else { return SfStatus::NullPointer };
    *out = h.inner.query(index);
    SfStatus::Ok
}

/// # Safety
/// `handle` must be null or come from [`sf_hh_new`], and is invalid after.
#[no_mangle]
pub unsafe extern "C" fn sf_hh_free(handle: *mut SfHeavyHitters) {
    release(handle);
}

/// A parsed stream file.
pub struct SfStream {
    inner: Stream,
}

/// Parses stream text (NUL-terminated, UTF-8).
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_stream_parse(text: *const c_char, out: *mut *mut SfStream) -> SfStatus {
    if text.is_null() {
        return SfStatus::NullPointer;
    }
    let Ok(text) = CStr::from_ptr(text).to_str() else { return SfStatus::Parse };
    match Stream::parse(text) {
        Ok(inner) => boxed(SfStream { inner }, out),
        Err(e) => SfStatus::from(&e),
    }
}

/// Number of updates in a parsed stream.
///
/// # Safety
/// `handle` must come from [`sf_stream_parse`] and not be freed.
#[no_mangle]
pub unsafe extern "C" fn sf_stream_len(handle: *const SfStream) -> usize {
    handle.as_ref().map_or(0, |h| h.inner.updates.len())
}

/// Exact `F_p` of the stream after all deletions.
///
/// # Safety
/// `handle` must come from [`sf_stream_parse`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_stream_exact_fp(handle: *const SfStream, p: f64, out: *mut f64) -> SfStatus {
    let (Some(h), false) = (handle.as_ref(), out.is_null()) else { return SfStatus::NullPointer };
    match oracle_answers(&h.inner, p) {
        Ok(a) => {
            *out = a.fp;
            SfStatus::Ok
        }
        Err(e) => SfStatus::from(&e),
    }
}

/// # Safety
/// `handle` must be null or come from [`sf_stream_parse`], and is invalid
/// after.
#[no_mangle]
pub unsafe extern "C" fn sf_stream_free(handle: *mut SfStream) {
    release(handle);
}
