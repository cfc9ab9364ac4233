//! C ABI over the `bwq` library.
//!
//! Models and reports are opaque handles owned by the caller and released
//! with their `*_free` function. Every fallible call returns a
//! [`BwqStatus`]; on failure [`bwq_last_error`] describes the cause for the
//! calling thread. Strings returned through out-parameters are released
//! with [`bwq_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bwq::cli::spec_for;
use bwq::format::{QuantModel, RunConfig};
use bwq::mapper::{layout, lut_bytes, utilization, Scheme};
use bwq::quant::compression_ratio;
use bwq::sim::{simulate, HardwareConfig, SimReport};
use bwq::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BwqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Model = 4,
    Layout = 5,
    Io = 6,
    Internal = 7,
}

/// A loaded quantized model.
pub struct BwqModel {
    inner: QuantModel,
}

/// Result of one simulated inference.
pub struct BwqReport {
    inner: SimReport,
    total_cycles: u64,
    verified: bool,
}

/// Dynamic energy of a simulated inference, in joules.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BwqEnergy {
    pub adc: f64,
    pub dac: f64,
    pub array: f64,
    pub buffer: f64,
    pub sa: f64,
    pub ctrl: f64,
    pub total: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> BwqStatus {
    match err {
        Error::Config(_) => BwqStatus::Config,
        Error::LayoutMismatch(_) | Error::Mapping(_) => BwqStatus::Layout,
        Error::Io(_) => BwqStatus::Io,
        Error::Json(_) | Error::Model(_) | Error::Shape { .. } => BwqStatus::Model,
        _ => BwqStatus::Internal,
    }
}

struct Failure(BwqStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Run `f`, turning errors and panics into a status and the thread's last
/// error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> BwqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            BwqStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BwqStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(BwqStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BwqStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(text: String) -> FfiResult<*mut c_char> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure(BwqStatus::Internal, "string holds a NUL byte".to_string()))
}

/// Message for the calling thread's most recent failure, or NULL after a
/// success. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn bwq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bwq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a model from JSON text.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_from_json(
    json: *const c_char,
    out: *mut *mut BwqModel,
) -> BwqStatus {
    guard(|| {
        let text = as_str(json, "json")?;
        let inner = QuantModel::from_json(text)?;
        write(out, Box::into_raw(Box::new(BwqModel { inner })))
    })
}

/// Load a model file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_load(path: *const c_char, out: *mut *mut BwqModel) -> BwqStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        let inner = QuantModel::load(Path::new(path))?;
        write(out, Box::into_raw(Box::new(BwqModel { inner })))
    })
}

/// Release a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_free(model: *mut BwqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_layer_count(
    model: *const BwqModel,
    out: *mut usize,
) -> BwqStatus {
    guard(|| write(out, as_ref(model, "model")?.inner.layers.len()))
}

/// Weight compression over 32-bit weights and activation compression over
/// 32-bit activations (using the narrowest layer).
///
/// # Safety
/// `model` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_compression(
    model: *const BwqModel,
    weight: *mut f64,
    act: *mut f64,
) -> BwqStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let act_min = m.act_bits().into_iter().min().unwrap_or(32);
        let ratio = compression_ratio(m.bit_layers(), act_min);
        write(weight, ratio.weight)?;
        write(act, ratio.act)
    })
}

/// Size of the per-block bitwidth table in bytes.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_lut_bytes(model: *const BwqModel, out: *mut u64) -> BwqStatus {
    guard(|| write(out, lut_bytes(&as_ref(model, "model")?.inner.grids())))
}

/// OU utilization under `scheme` ("aware", "consecutive" or "same-ou") on
/// the default crossbar with the model's OU size.
///
/// # Safety
/// `model` must be a live handle; `scheme` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_model_utilization(
    model: *const BwqModel,
    scheme: *const c_char,
    out: *mut f64,
) -> BwqStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let scheme: Scheme = as_str(scheme, "scheme")?.parse()?;
        let spec = spec_for(m, None)?;
        let l = layout(scheme, &m.grids(), &spec)?;
        write(out, utilization(&l))
    })
}

/// Simulate one inference over seeded random activations and check it
/// against the integer reference. `config_json` may be NULL for defaults.
///
/// # Safety
/// `model` must be a live handle; `config_json` NULL or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_simulate(
    model: *const BwqModel,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut BwqReport,
) -> BwqStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let cfg = if config_json.is_null() {
            None
        } else {
            Some(RunConfig::from_json(as_str(config_json, "config")?)?)
        };
        let spec = spec_for(m, cfg.as_ref())?;
        let hw = cfg
            .map(|c| c.hardware)
            .unwrap_or_else(HardwareConfig::default);
        hw.validate(&spec)?;
        let run = simulate(m, &spec, &hw, seed, true)?;
        let report = BwqReport {
            total_cycles: run.trace.total_events(),
            verified: run.verified == Some(true),
            inner: run.report,
        };
        write(out, Box::into_raw(Box::new(report)))
    })
}

/// Release a report. NULL is ignored.
///
/// # Safety
/// `report` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bwq_report_free(report: *mut BwqReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Total OU activations and end-to-end latency in seconds.
///
/// # Safety
/// `report` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_report_cycles(
    report: *const BwqReport,
    cycles: *mut u64,
    latency_s: *mut f64,
) -> BwqStatus {
    guard(|| {
        let r = as_ref(report, "report")?;
        write(cycles, r.total_cycles)?;
        write(latency_s, r.inner.total.latency_s)
    })
}

/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_report_energy(
    report: *const BwqReport,
    out: *mut BwqEnergy,
) -> BwqStatus {
    guard(|| {
        let e = as_ref(report, "report")?.inner.total.energy;
        write(
            out,
            BwqEnergy {
                adc: e.adc,
                dac: e.dac,
                array: e.array,
                buffer: e.buffer,
                sa: e.sa,
                ctrl: e.ctrl,
                total: e.total(),
            },
        )
    })
}

/// Whether the simulated outputs equalled the integer reference.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_report_verified(
    report: *const BwqReport,
    out: *mut bool,
) -> BwqStatus {
    guard(|| write(out, as_ref(report, "report")?.verified))
}

/// Per-layer CSV report; release the string with [`bwq_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bwq_report_to_csv(
    report: *const BwqReport,
    out: *mut *mut c_char,
) -> BwqStatus {
    guard(|| {
        let r = as_ref(report, "report")?;
        let mut buf = Vec::new();
        r.inner.write_csv(&mut buf)?;
        let text =
            String::from_utf8(buf).map_err(|e| Failure(BwqStatus::Internal, e.to_string()))?;
        write(out, into_c_string(text)?)
    })
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bwq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
