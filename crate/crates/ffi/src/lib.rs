//! C ABI over the `icl_guard` toolkit.
//!
//! Every fallible call returns an [`IclGuardStatus`]; on failure the message
//! is kept per thread and read with [`icl_guard_last_error`]. Records and
//! selections live behind opaque handles that the caller frees.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use icl_guard::harness::evaluate_policy;
use icl_guard::io::{self, SelectionFile, SELECTION_FORMAT_VERSION};
use icl_guard::sim::{simulate_dataset, SimProfile};
use icl_guard::{
    ConfidenceMeasure, Error, ExampleRecord, ExitPolicy, LambdaGrid, LossMode, LossSpec,
    RiskBudget, Threshold,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclGuardStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed distributions, shapes, bounds or settings.
    InvalidArgument = 3,
    /// Tolerance or delta outside its admissible range.
    Budget = 4,
    Empty = 5,
    /// A trace or selection file failed to parse; the message names the line.
    Parse = 6,
    Io = 7,
    Protocol = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclGuardLossMode {
    Scaled = 0,
    Clipped = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclGuardConfidence {
    Argmax = 0,
    Top2 = 1,
    Entropy = 2,
}

/// Exit threshold. When `zero_shot_only` is set `lambda` is ignored and
/// reported as NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IclGuardThreshold {
    pub zero_shot_only: bool,
    pub lambda: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IclGuardCalibrateOptions {
    pub epsilon: f64,
    pub delta: f64,
    pub mode: IclGuardLossMode,
    pub confidence: IclGuardConfidence,
    /// 0 picks half the trace depth.
    pub first_exit_layer: usize,
    /// Evenly spaced thresholds from 1 to 0, at least 2.
    pub grid_points: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IclGuardEvaluation {
    pub records: usize,
    pub raw_risk: f64,
    pub helpful: usize,
    pub neutral: usize,
    pub harmful: usize,
    pub accuracy: f64,
    pub zero_shot_accuracy: f64,
    pub final_layer_accuracy: f64,
    pub exit_rate: f64,
    pub mean_layers: f64,
    pub mean_layers_with_fallback: f64,
}

/// Owned set of trace records.
pub struct IclGuardRecords {
    inner: Vec<ExampleRecord>,
}

/// Calibrated threshold with its settings and certification trail.
pub struct IclGuardSelection {
    inner: SelectionFile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> IclGuardStatus {
    match err {
        Error::InvalidProbVector(_)
        | Error::Shape(_)
        | Error::Config(_)
        | Error::LossBound { .. }
        | Error::Tolerance(_) => IclGuardStatus::InvalidArgument,
        Error::Budget { .. } | Error::Delta(_) => IclGuardStatus::Budget,
        Error::Empty(_) => IclGuardStatus::Empty,
        Error::Parse { .. } => IclGuardStatus::Parse,
        Error::Io { .. } => IclGuardStatus::Io,
        Error::Protocol(_) => IclGuardStatus::Protocol,
    }
}

struct Fail(IclGuardStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IclGuardStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, record any failure and turn panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IclGuardStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            IclGuardStatus::Ok
        }
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IclGuardStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| {
        Fail(
            IclGuardStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn loss_mode(m: IclGuardLossMode) -> LossMode {
    match m {
        IclGuardLossMode::Scaled => LossMode::Scaled,
        IclGuardLossMode::Clipped => LossMode::Clipped,
    }
}

fn confidence(c: IclGuardConfidence) -> ConfidenceMeasure {
    match c {
        IclGuardConfidence::Argmax => ConfidenceMeasure::Argmax,
        IclGuardConfidence::Top2 => ConfidenceMeasure::Top2,
        IclGuardConfidence::Entropy => ConfidenceMeasure::Entropy,
    }
}

fn threshold_in(t: IclGuardThreshold) -> Threshold {
    if t.zero_shot_only {
        Threshold::ZeroShotOnly
    } else {
        Threshold::Lambda(t.lambda)
    }
}

fn threshold_out(t: Threshold) -> IclGuardThreshold {
    match t {
        Threshold::ZeroShotOnly => IclGuardThreshold {
            zero_shot_only: true,
            lambda: f64::NAN,
        },
        Threshold::Lambda(lambda) => IclGuardThreshold {
            zero_shot_only: false,
            lambda,
        },
    }
}

fn first_exit(records: &[ExampleRecord], requested: usize) -> usize {
    if requested == 0 {
        (records[0].num_layers() / 2).max(1)
    } else {
        requested
    }
}

fn evaluation_out(
    records: &[ExampleRecord],
    policy: &ExitPolicy,
) -> Result<IclGuardEvaluation, Fail> {
    let e = evaluate_policy(records, policy)?;
    Ok(IclGuardEvaluation {
        records: e.records,
        raw_risk: e.raw_risk,
        helpful: e.helpful,
        neutral: e.neutral,
        harmful: e.harmful,
        accuracy: e.accuracy,
        zero_shot_accuracy: e.zero_shot_accuracy,
        final_layer_accuracy: e.final_layer_accuracy,
        exit_rate: e.exit_rate,
        mean_layers: e.mean_layers,
        mean_layers_with_fallback: e.mean_layers_with_fallback,
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icl_guard_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn icl_guard_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Command line defaults, with a tolerance of 0.05.
#[no_mangle]
pub extern "C" fn icl_guard_calibrate_options_default() -> IclGuardCalibrateOptions {
    IclGuardCalibrateOptions {
        epsilon: 0.05,
        delta: 0.05,
        mode: IclGuardLossMode::Scaled,
        confidence: IclGuardConfidence::Argmax,
        first_exit_layer: 0,
        grid_points: LambdaGrid::DEFAULT_POINTS,
    }
}

/// Read a JSONL trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_load(
    path: *const c_char,
    out: *mut *mut IclGuardRecords,
) -> IclGuardStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let records = io::load_records(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(IclGuardRecords { inner: records }));
        Ok(())
    })
}

/// Write records as a JSONL trace file.
///
/// # Safety
/// `records` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_save(
    records: *const IclGuardRecords,
    path: *const c_char,
) -> IclGuardStatus {
    guard(|| {
        let records = ref_arg(records, "records")?;
        io::save_records(&records.inner, path_arg(path, "path")?, "icl-guard-ffi")?;
        Ok(())
    })
}

/// Draw `n` records from a TOML profile, or from the default profile when
/// `profile_path` is NULL.
///
/// # Safety
/// `profile_path` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_simulate(
    profile_path: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut IclGuardRecords,
) -> IclGuardStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let profile = if profile_path.is_null() {
            SimProfile::default()
        } else {
            SimProfile::load(path_arg(profile_path, "profile_path")?)?
        };
        let records = simulate_dataset(&profile, n, seed)?;
        *out = Box::into_raw(Box::new(IclGuardRecords { inner: records }));
        Ok(())
    })
}

/// Number of records; 0 for NULL.
///
/// # Safety
/// `records` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_len(records: *const IclGuardRecords) -> usize {
    records.as_ref().map_or(0, |r| r.inner.len())
}

/// Layers per trace; 0 for NULL or an empty set.
///
/// # Safety
/// `records` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_num_layers(records: *const IclGuardRecords) -> usize {
    records
        .as_ref()
        .and_then(|r| r.inner.first())
        .map_or(0, |r| r.num_layers())
}

/// # Safety
/// `records` must be NULL or come from this library, and is not used again.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_records_free(records: *mut IclGuardRecords) {
    if !records.is_null() {
        drop(Box::from_raw(records));
    }
}

/// Learn-then-Test selection on calibration records.
///
/// # Safety
/// `records` must come from this library, `options` must point to valid
/// options and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_calibrate(
    records: *const IclGuardRecords,
    options: *const IclGuardCalibrateOptions,
    out: *mut *mut IclGuardSelection,
) -> IclGuardStatus {
    guard(|| {
        let records = &ref_arg(records, "records")?.inner;
        let o = *ref_arg(options, "options")?;
        let out = out_arg(out, "out")?;
        if records.is_empty() {
            return Err(Error::Empty("calibration over an empty record set").into());
        }
        let mode = loss_mode(o.mode);
        let spec = LossSpec::classification(mode);
        let budget = RiskBudget::new(o.epsilon, o.delta, &spec)?;
        let first = first_exit(records, o.first_exit_layer);
        let conf = confidence(o.confidence);
        let template = ExitPolicy::lambda(1.0, first, conf)?;
        let grid = LambdaGrid::evenly_spaced(o.grid_points)?;
        let selection = icl_guard::ltt_select(records, &grid, &budget, &spec, &template)?;
        let file = SelectionFile {
            format_version: SELECTION_FORMAT_VERSION,
            lambda_hat: selection.lambda_hat,
            mode,
            epsilon: o.epsilon,
            delta: o.delta,
            loss_lower: spec.lower(),
            loss_upper: spec.upper(),
            test_level: budget.test_level(&spec),
            confidence: conf,
            first_exit_layer: first,
            grid_points: o.grid_points,
            calibration_records: records.len(),
            calibration_data: io::data_digest(records),
            trail: selection.trail,
        };
        *out = Box::into_raw(Box::new(IclGuardSelection { inner: file }));
        Ok(())
    })
}

/// Read a selection JSON file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_selection_load(
    path: *const c_char,
    out: *mut *mut IclGuardSelection,
) -> IclGuardStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let file = io::load_selection(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(IclGuardSelection { inner: file }));
        Ok(())
    })
}

/// # Safety
/// `selection` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_selection_save(
    selection: *const IclGuardSelection,
    path: *const c_char,
) -> IclGuardStatus {
    guard(|| {
        let selection = ref_arg(selection, "selection")?;
        io::save_json(&selection.inner, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `selection` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_selection_threshold(
    selection: *const IclGuardSelection,
    out: *mut IclGuardThreshold,
) -> IclGuardStatus {
    guard(|| {
        let selection = ref_arg(selection, "selection")?;
        *out_arg(out, "out")? = threshold_out(selection.inner.lambda_hat);
        Ok(())
    })
}

/// Length of the certified prefix of the tested sequence, sentinel
/// included; 0 for NULL.
///
/// # Safety
/// `selection` must be NULL or come from this library.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_selection_certified_count(
    selection: *const IclGuardSelection,
) -> usize {
    selection
        .as_ref()
        .map_or(0, |s| s.inner.selection().certified_count())
}

/// # Safety
/// `selection` must be NULL or come from this library, and is not used again.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_selection_free(selection: *mut IclGuardSelection) {
    if !selection.is_null() {
        drop(Box::from_raw(selection));
    }
}

/// Apply a fixed threshold. `first_exit_layer` 0 picks half the depth.
///
/// # Safety
/// `records` must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_evaluate(
    records: *const IclGuardRecords,
    threshold: IclGuardThreshold,
    first_exit_layer: usize,
    measure: IclGuardConfidence,
    out: *mut IclGuardEvaluation,
) -> IclGuardStatus {
    guard(|| {
        let records = &ref_arg(records, "records")?.inner;
        let out = out_arg(out, "out")?;
        if records.is_empty() {
            return Err(Error::Empty("evaluation over an empty record set").into());
        }
        let policy = ExitPolicy::new(
            threshold_in(threshold),
            first_exit(records, first_exit_layer),
            confidence(measure),
        )?;
        *out = evaluation_out(records, &policy)?;
        Ok(())
    })
}

/// Apply a calibrated selection with its own exit settings.
///
/// # Safety
/// `records` and `selection` must come from this library; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_evaluate_selection(
    records: *const IclGuardRecords,
    selection: *const IclGuardSelection,
    out: *mut IclGuardEvaluation,
) -> IclGuardStatus {
    guard(|| {
        let records = &ref_arg(records, "records")?.inner;
        let selection = ref_arg(selection, "selection")?;
        let out = out_arg(out, "out")?;
        *out = evaluation_out(records, &selection.inner.policy()?)?;
        Ok(())
    })
}

/// Hoeffding-Bentkus p-value for an observed mean loss in `[0, 1]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_hb_pvalue(
    risk_hat: f64,
    n: u64,
    level: f64,
    out: *mut f64,
) -> IclGuardStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = icl_guard::hb_pvalue(risk_hat, n, level)?;
        Ok(())
    })
}

/// Tolerance on the `[0, 1]` scale for the signed loss in `[-1, 1]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icl_guard_scale_epsilon(epsilon: f64, out: *mut f64) -> IclGuardStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = icl_guard::scale_epsilon(epsilon, &LossSpec::classification(LossMode::Scaled))?;
        Ok(())
    })
}
