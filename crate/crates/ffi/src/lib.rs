//! C ABI over `hlc_core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_read` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`HlcStatus`]; on failure [`hlc_last_error`] describes the cause for the
//! calling thread. Audio buffers are 64-bit float samples at 44.1 kHz with an
//! RMS of 1.0 at 85 dB SPL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hlc_core::dpn::DpnParams;
use hlc_core::error::Error;
use hlc_core::hl::{Audiogram, Components, HlConfig, HlModel};
use hlc_core::metrics::{stoi_thr, ThresholdNoiseSpec};
use hlc_core::signal::Signal;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlcStatus {
    Ok = 0,
    /// A pointer was null, a string was not UTF-8 or a value was out of range.
    InvalidArgument = 1,
    /// A file could not be read.
    Io = 2,
    /// A file or string was malformed.
    Format = 3,
    /// The buffer sample rate is not supported.
    UnsupportedRate = 4,
    /// The buffer is too short for the requested analysis.
    InputTooShort = 5,
    /// The audiogram cannot be simulated.
    InvalidAudiogram = 6,
    /// Any other library error, including caught panics.
    Internal = 7,
}

/// Hearing-loss model.
pub struct HlcModel(HlModel);

/// Audiogram at the eight standard frequencies.
pub struct HlcAudiogram(Audiogram);

/// Compensation network parameters.
pub struct HlcParams(DpnParams);

/// Bit flags for [`hlc_simulate`].
pub const HLC_SMEARING: u32 = 1;
pub const HLC_RECRUITMENT: u32 = 2;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HlcStatus {
    match e {
        Error::Io { .. } => HlcStatus::Io,
        Error::Format { .. } | Error::Json(_) | Error::Wav(_) => HlcStatus::Format,
        Error::UnsupportedRate { .. } | Error::RateMismatch { .. } => HlcStatus::UnsupportedRate,
        Error::InputTooShort { .. } => HlcStatus::InputTooShort,
        Error::AudiogramExceedsCatchUp { .. } => HlcStatus::InvalidAudiogram,
        Error::InvalidParameter(_) | Error::TableMismatch { .. } | Error::SilentSignal => HlcStatus::InvalidArgument,
        _ => HlcStatus::Internal,
    }
}

struct Fail(HlcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(HlcStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HlcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HlcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HlcStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn signal_arg(p: *const f64, len: usize, rate: u32, what: &str) -> Result<Signal, Fail> {
    if p.is_null() || len == 0 {
        return Err(invalid(&format!("{what} is null or empty")));
    }
    Ok(Signal::new(std::slice::from_raw_parts(p, len).to_vec(), rate)?)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn write_signal(y: &Signal, out: *mut f64, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output buffer is null"));
    }
    if y.len() != len {
        return Err(Fail(HlcStatus::Internal, format!("output has {} samples, expected {len}", y.len())));
    }
    ptr::copy_nonoverlapping(y.samples().as_ptr(), out, len);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn hlc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hlc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the default hearing-loss model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_model_new(out: *mut *mut HlcModel) -> HlcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(HlcModel(HlModel::new(HlConfig::default())?)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`hlc_model_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hlc_model_free(model: *mut HlcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Looks up a standard audiogram (`N1`..`N6`, `S1`..`S3`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_audiogram_standard(name: *const c_char, out: *mut *mut HlcAudiogram) -> HlcStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(HlcAudiogram(Audiogram::standard(name)?)));
        Ok(())
    })
}

/// Builds an audiogram from thresholds in dB HL at 250, 500, 1k, 2k, 3k, 4k,
/// 6k and 8k Hz.
///
/// # Safety
/// `label` must be a NUL-terminated string, `thresholds` must point to eight
/// values and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_audiogram_new(
    label: *const c_char,
    thresholds: *const f64,
    out: *mut *mut HlcAudiogram,
) -> HlcStatus {
    guard(|| {
        let label = str_arg(label, "label")?;
        if thresholds.is_null() {
            return Err(invalid("thresholds is null"));
        }
        let mut t = [0.0; 8];
        t.copy_from_slice(std::slice::from_raw_parts(thresholds, 8));
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(HlcAudiogram(Audiogram::new(label, t)?)));
        Ok(())
    })
}

/// # Safety
/// `audiogram` must come from an audiogram constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hlc_audiogram_free(audiogram: *mut HlcAudiogram) {
    if !audiogram.is_null() {
        drop(Box::from_raw(audiogram));
    }
}

/// Reads a parameter JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_params_read(path: *const c_char, out: *mut *mut HlcParams) -> HlcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(HlcParams(DpnParams::read(path.as_ref())?)));
        Ok(())
    })
}

/// Parses parameters from a JSON string.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_params_from_json(json: *const c_char, out: *mut *mut HlcParams) -> HlcStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(HlcParams(DpnParams::from_json(json)?)));
        Ok(())
    })
}

/// # Safety
/// `params` must come from a parameter constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hlc_params_free(params: *mut HlcParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Runs the hearing-loss model on `len` samples; `components` is a mask of
/// [`HLC_SMEARING`] and [`HLC_RECRUITMENT`]. Writes `len` samples to `out`.
///
/// # Safety
/// Handles must be valid; `input` and `out` must hold `len` samples.
#[no_mangle]
pub unsafe extern "C" fn hlc_simulate(
    model: *const HlcModel,
    audiogram: *const HlcAudiogram,
    components: u32,
    input: *const f64,
    len: usize,
    rate: u32,
    out: *mut f64,
) -> HlcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let a = ref_arg(audiogram, "audiogram")?;
        if components & !(HLC_SMEARING | HLC_RECRUITMENT) != 0 {
            return Err(invalid("unknown component flag"));
        }
        let c = Components {
            smearing: components & HLC_SMEARING != 0,
            recruitment: components & HLC_RECRUITMENT != 0,
        };
        let x = signal_arg(input, len, rate, "input")?;
        let y = model.0.apply(&x, &a.0, c)?;
        write_signal(&y, out, len)
    })
}

/// Applies compensation to `len` samples. `audiogram` may be null unless the
/// parameters are listener-independent. Writes `len` samples to `out`.
///
/// # Safety
/// `params` must be valid, `audiogram` valid or null; `input` and `out` must
/// hold `len` samples.
#[no_mangle]
pub unsafe extern "C" fn hlc_compensate(
    params: *const HlcParams,
    audiogram: *const HlcAudiogram,
    input: *const f64,
    len: usize,
    rate: u32,
    out: *mut f64,
) -> HlcStatus {
    guard(|| {
        let p = ref_arg(params, "params")?;
        let a = audiogram.as_ref().map(|a| &a.0);
        let x = signal_arg(input, len, rate, "input")?;
        let y = p.0.apply(&x, a)?;
        write_signal(&y, out, len)
    })
}

/// STOI of `reference` against `processed` plus threshold noise
/// `offset_db` below the hearing threshold, drawn from `seed`.
///
/// # Safety
/// Both buffers must hold `len` samples and `score` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hlc_stoi_thr(
    reference: *const f64,
    processed: *const f64,
    len: usize,
    rate: u32,
    offset_db: f64,
    seed: u64,
    score: *mut f64,
) -> HlcStatus {
    guard(|| {
        let x = signal_arg(reference, len, rate, "reference")?;
        let y = signal_arg(processed, len, rate, "processed")?;
        let out = out_arg(score, "score")?;
        *out = stoi_thr(&x, &y, &ThresholdNoiseSpec { offset_db, seed })?;
        Ok(())
    })
}
