//! C ABI over replay-lab: seeded RNG streams, the weighted replay buffer,
//! the statistical tests and single-trial execution.
//!
//! Every fallible function returns an [`RlStatus`]; on failure
//! [`rl_last_error_message`] describes the error for the calling thread.
//! Handles returned by `*_new` functions are owned by the caller and must be
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use replay_lab::buffer::{InsertOutcome, ReplayBuffer, ReplaySlot};
use replay_lab::config::parse_config;
use replay_lab::experiment::run_trial;
use replay_lab::rng::RngStream;
use replay_lab::stats::{mann_whitney_u, paired_t_test, spearman, TestMethod, TestResult};
use replay_lab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EmptyBuffer = 3,
    Undefined = 4,
    Config = 5,
    NonFinite = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> RlStatus {
    set_error(&e.to_string());
    match e {
        Error::EmptyBuffer => RlStatus::EmptyBuffer,
        Error::Undefined(_) => RlStatus::Undefined,
        Error::Config { .. } => RlStatus::Config,
        Error::NonFinite { .. } => RlStatus::NonFinite,
        Error::Io { .. } | Error::Csv { .. } => RlStatus::Internal,
        _ => RlStatus::InvalidArgument,
    }
}

fn null(what: &str) -> RlStatus {
    set_error(&format!("{what} is null"));
    RlStatus::NullPointer
}

fn guard(f: impl FnOnce() -> RlStatus) -> RlStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic");
        RlStatus::Internal
    })
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Message of the last error on this thread; empty if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque seeded random stream.
pub struct RlRng(RngStream);

/// Creates the stream for `(seed, label)`; `label` is a NUL-terminated UTF-8
/// string.
///
/// # Safety
/// `label` must be null or a valid C string; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn rl_rng_new(seed: u64, label: *const c_char, out: *mut *mut RlRng) -> RlStatus {
    guard(|| {
        if label.is_null() {
            return null("label");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(label) = CStr::from_ptr(label).to_str() else {
            set_error("label is not valid UTF-8");
            return RlStatus::InvalidArgument;
        };
        *out = Box::into_raw(Box::new(RlRng(RngStream::new(seed, label))));
        RlStatus::Ok
    })
}

/// # Safety
/// `rng` must be null or a handle from [`rl_rng_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_rng_free(rng: *mut RlRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// # Safety
/// `rng` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_rng_next_u64(rng: *mut RlRng, out: *mut u64) -> RlStatus {
    guard(|| match (rng.as_mut(), out.is_null()) {
        (Some(r), false) => {
            *out = r.0.next_u64();
            RlStatus::Ok
        }
        (None, _) => null("rng"),
        _ => null("out"),
    })
}

/// Uniform double in [0, 1).
///
/// # Safety
/// `rng` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_rng_next_f64(rng: *mut RlRng, out: *mut f64) -> RlStatus {
    guard(|| match (rng.as_mut(), out.is_null()) {
        (Some(r), false) => {
            *out = r.0.next_f64();
            RlStatus::Ok
        }
        (None, _) => null("rng"),
        _ => null("out"),
    })
}

/// Opaque weighted reservoir buffer holding `(sample_uid, label)` pairs.
pub struct RlBuffer(ReplayBuffer);

/// Creates a buffer with one positive slot weight per slot.
///
/// # Safety
/// `weights` must point to `capacity` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_new(weights: *const f64, capacity: usize, out: *mut *mut RlBuffer) -> RlStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let Some(w) = slice(weights, capacity) else {
            return null("weights");
        };
        match ReplayBuffer::new(w.to_vec()) {
            Ok(b) => {
                *out = Box::into_raw(Box::new(RlBuffer(b)));
                RlStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// # Safety
/// `buffer` must be null or a handle from [`rl_buffer_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_free(buffer: *mut RlBuffer) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}

/// Reservoir insertion. `out_slot` receives the slot index, or -1 when the
/// item was discarded.
///
/// # Safety
/// `buffer` and `stream` must be live handles; `out_slot` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_insert(
    buffer: *mut RlBuffer,
    sample_uid: u64,
    label: usize,
    stream: *mut RlRng,
    out_slot: *mut i64,
) -> RlStatus {
    guard(|| {
        let Some(b) = buffer.as_mut() else {
            return null("buffer");
        };
        let Some(s) = stream.as_mut() else {
            return null("stream");
        };
        if out_slot.is_null() {
            return null("out_slot");
        }
        let item = ReplaySlot {
            sample: Vec::new(),
            label,
            stored_logits: None,
            inserted_at: b.0.seen(),
            sample_uid,
        };
        *out_slot = match b.0.reservoir_insert(item, &mut s.0) {
            InsertOutcome::Stored(k) => k as i64,
            InsertOutcome::Discarded => -1,
        };
        RlStatus::Ok
    })
}

/// Number of occupied slots.
///
/// # Safety
/// `buffer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_occupied(buffer: *const RlBuffer, out: *mut usize) -> RlStatus {
    guard(|| match (buffer.as_ref(), out.is_null()) {
        (Some(b), false) => {
            *out = b.0.occupied();
            RlStatus::Ok
        }
        (None, _) => null("buffer"),
        _ => null("out"),
    })
}

/// Sample uid stored in `slot`.
///
/// # Safety
/// `buffer` must be a live handle; `out_uid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_slot_uid(buffer: *const RlBuffer, slot: usize, out_uid: *mut u64) -> RlStatus {
    guard(|| {
        let Some(b) = buffer.as_ref() else {
            return null("buffer");
        };
        if out_uid.is_null() {
            return null("out_uid");
        }
        match b.0.slot(slot) {
            Some(s) => {
                *out_uid = s.sample_uid;
                RlStatus::Ok
            }
            None => {
                set_error(&format!("slot {slot} is empty or out of range"));
                RlStatus::InvalidArgument
            }
        }
    })
}

/// Draws `batch_size` slot indices with replacement, proportional to the
/// slot weights of occupied slots.
///
/// # Safety
/// `buffer` and `stream` must be live handles; `out_indices` must point to
/// `batch_size` writable elements.
#[no_mangle]
pub unsafe extern "C" fn rl_buffer_sample(
    buffer: *const RlBuffer,
    batch_size: usize,
    stream: *mut RlRng,
    out_indices: *mut usize,
) -> RlStatus {
    guard(|| {
        let Some(b) = buffer.as_ref() else {
            return null("buffer");
        };
        let Some(s) = stream.as_mut() else {
            return null("stream");
        };
        if out_indices.is_null() && batch_size > 0 {
            return null("out_indices");
        }
        match b.0.sample_batch(batch_size, &mut s.0) {
            Ok(indices) => {
                if batch_size > 0 {
                    std::slice::from_raw_parts_mut(out_indices, batch_size).copy_from_slice(&indices);
                }
                RlStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlTestMethod {
    StudentT = 0,
    Exact = 1,
    NormalApproximation = 2,
    Degenerate = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub method: RlTestMethod,
}

impl From<TestResult> for RlTestResult {
    fn from(r: TestResult) -> Self {
        RlTestResult {
            statistic: r.statistic,
            p_value: r.p_value,
            n1: r.n1,
            n2: r.n2,
            method: match r.method {
                TestMethod::StudentT => RlTestMethod::StudentT,
                TestMethod::Exact => RlTestMethod::Exact,
                TestMethod::NormalApproximation => RlTestMethod::NormalApproximation,
                TestMethod::Degenerate => RlTestMethod::Degenerate,
            },
        }
    }
}

unsafe fn two_sample(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut RlTestResult,
    test: impl FnOnce(&[f64], &[f64]) -> replay_lab::Result<TestResult>,
) -> RlStatus {
    guard(|| {
        let Some(a) = slice(a, na) else { return null("a") };
        let Some(b) = slice(b, nb) else { return null("b") };
        if out.is_null() {
            return null("out");
        }
        match test(a, b) {
            Ok(r) => {
                *out = r.into();
                RlStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Two-sided paired t-test of `a` against `b`, both of length `n`.
///
/// # Safety
/// `a` and `b` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_paired_t_test(a: *const f64, b: *const f64, n: usize, out: *mut RlTestResult) -> RlStatus {
    two_sample(a, n, b, n, out, paired_t_test)
}

/// Spearman rank correlation with a two-sided p-value.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_spearman(x: *const f64, y: *const f64, n: usize, out: *mut RlTestResult) -> RlStatus {
    two_sample(x, n, y, n, out, spearman)
}

/// Mann-Whitney U of `a` against `b`; exact for small samples without ties.
///
/// # Safety
/// `a` must point to `na` and `b` to `nb` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rl_mann_whitney_u(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut RlTestResult,
) -> RlStatus {
    two_sample(a, na, b, nb, out, mann_whitney_u)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlTrialSummary {
    pub final_average_accuracy: f64,
    pub update_count: u64,
    pub replay_draws: u64,
    pub occupied_slots: usize,
}

/// Runs one trial. `config_text` uses the `key = value` config format and may
/// be empty for defaults; `trial_id` equal to `trials_nonuniform` selects the
/// uniform baseline.
///
/// # Safety
/// `config_text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rl_run_trial(
    config_text: *const c_char,
    run_seed: u64,
    trial_id: u32,
    out: *mut RlTrialSummary,
) -> RlStatus {
    guard(|| {
        if config_text.is_null() {
            return null("config_text");
        }
        if out.is_null() {
            return null("out");
        }
        let Ok(text) = CStr::from_ptr(config_text).to_str() else {
            set_error("config_text is not valid UTF-8");
            return RlStatus::InvalidArgument;
        };
        let result = parse_config(text, Path::new("<config_text>"))
            .and_then(|c| {
                if trial_id > c.trials_nonuniform {
                    return Err(Error::InvalidArgument(format!(
                        "trial_id {trial_id} exceeds trials_nonuniform {}",
                        c.trials_nonuniform
                    )));
                }
                Ok(c.trial_config(run_seed, trial_id))
            })
            .and_then(|trial| run_trial(&trial));
        match result {
            Ok(r) => {
                *out = RlTrialSummary {
                    final_average_accuracy: r.final_average_accuracy,
                    update_count: r.update_count,
                    replay_draws: r.replay_draws,
                    occupied_slots: r.per_slot_metrics.len(),
                };
                RlStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}
