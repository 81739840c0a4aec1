//! C ABI over the xrd library.
//!
//! Every fallible function returns an [`XrdStatus`]; on failure a description is
//! available from [`xrd_last_error`] until the next call on the same thread.
//! Worlds are opaque handles released with [`xrd_world_free`]; strings returned
//! by this library are released with [`xrd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use xrd::harness::{availability_sim, RoundReport, World, WorldConfig};
use xrd::topology;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XrdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    BufferTooSmall = 4,
    Internal = 5,
}

/// Aggregate counts of one simulated round.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct XrdRoundSummary {
    pub round: u64,
    pub active_conversations: u64,
    pub delivered_conversations: u64,
    pub failed_conversations: u64,
    pub loopbacks_sent: u64,
    pub loopbacks_returned: u64,
    pub detections: u64,
    pub aborted_chains: u64,
}

/// Opaque simulator handle.
pub struct XrdWorld {
    world: World,
    last: Option<RoundReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: XrdStatus, msg: impl Into<String>) -> XrdStatus {
    set_error(msg);
    status
}

fn from_error(e: xrd::Error) -> XrdStatus {
    let status = match e {
        xrd::Error::Config(_) => XrdStatus::Config,
        xrd::Error::Internal(_) | xrd::Error::Io(_) | xrd::Error::Csv(_) => XrdStatus::Internal,
        _ => XrdStatus::InvalidArgument,
    };
    fail(status, e.to_string())
}

/// Clears the error slot, runs `f` and turns panics into `Internal`.
fn guarded(f: impl FnOnce() -> XrdStatus) -> XrdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(XrdStatus::Internal, "panic in xrd"))
}

/// Message for the last failed call on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn xrd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Smallest chain length `k` with `n · f^k < 2^-lambda`.
///
/// # Safety
/// `out_k` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xrd_compute_chain_length(f: f64, n: u64, lambda: u32, out_k: *mut u32) -> XrdStatus {
    guarded(|| {
        if out_k.is_null() {
            return fail(XrdStatus::NullPointer, "out_k is null");
        }
        match topology::compute_chain_length(f, n, lambda) {
            Ok(k) => {
                *out_k = k;
                XrdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Smallest `ell` with `ell(ell+1)/2 >= n`.
#[no_mangle]
pub extern "C" fn xrd_compute_ell(n: u32) -> u32 {
    topology::compute_ell(n)
}

/// Writes the chain set of `group` into `out` (capacity `cap`) and its length
/// into `out_len`. With too little room, only `out_len` is written.
///
/// # Safety
/// `out` must be valid for `cap` writes unless `cap` is 0; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xrd_chains_for_group(
    group: u32,
    ell: u32,
    n: u32,
    out: *mut u32,
    cap: usize,
    out_len: *mut usize,
) -> XrdStatus {
    guarded(|| {
        if out_len.is_null() || (out.is_null() && cap > 0) {
            return fail(XrdStatus::NullPointer, "output pointer is null");
        }
        let chains = match topology::chains_for_group(group, ell, n) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        *out_len = chains.len();
        if chains.len() > cap {
            return fail(XrdStatus::BufferTooSmall, format!("need room for {} chains", chains.len()));
        }
        ptr::copy_nonoverlapping(chains.as_ptr(), out, chains.len());
        XrdStatus::Ok
    })
}

/// The chain two groups meet on.
///
/// # Safety
/// `out_chain` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xrd_intersect_chain(
    group_a: u32,
    group_b: u32,
    ell: u32,
    n: u32,
    out_chain: *mut u32,
) -> XrdStatus {
    guarded(|| {
        if out_chain.is_null() {
            return fail(XrdStatus::NullPointer, "out_chain is null");
        }
        match topology::intersect_chain(group_a, group_b, ell, n) {
            Ok(c) => {
                *out_chain = c;
                XrdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Monte-Carlo fraction of conversations whose chain contains a failed server.
///
/// # Safety
/// `out_fraction` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xrd_availability_sim(
    servers: u32,
    k: u32,
    q: f64,
    trials: u64,
    seed: u64,
    out_fraction: *mut f64,
) -> XrdStatus {
    guarded(|| {
        if out_fraction.is_null() {
            return fail(XrdStatus::NullPointer, "out_fraction is null");
        }
        match availability_sim(servers, k, q, trials, seed) {
            Ok(r) => {
                *out_fraction = r.failure_fraction;
                XrdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds a world from a TOML configuration.
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string; `out_world` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xrd_world_new(config_toml: *const c_char, out_world: *mut *mut XrdWorld) -> XrdStatus {
    guarded(|| {
        if config_toml.is_null() || out_world.is_null() {
            return fail(XrdStatus::NullPointer, "null argument");
        }
        *out_world = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(config_toml).to_str() else {
            return fail(XrdStatus::InvalidArgument, "configuration is not UTF-8");
        };
        let world = match WorldConfig::from_toml(text).and_then(World::new) {
            Ok(w) => w,
            Err(e) => return from_error(e),
        };
        *out_world = Box::into_raw(Box::new(XrdWorld { world, last: None }));
        XrdStatus::Ok
    })
}

/// Runs the next round.
///
/// # Safety
/// `world` must come from [`xrd_world_new`]; `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xrd_world_run_round(world: *mut XrdWorld, out: *mut XrdRoundSummary) -> XrdStatus {
    guarded(|| {
        let Some(w) = world.as_mut() else {
            return fail(XrdStatus::NullPointer, "world is null");
        };
        let report = match w.world.run_round() {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        if !out.is_null() {
            *out = XrdRoundSummary {
                round: report.round,
                active_conversations: report.active_conversations as u64,
                delivered_conversations: report.delivered_conversations as u64,
                failed_conversations: report.failed_conversations as u64,
                loopbacks_sent: report.loopbacks_sent as u64,
                loopbacks_returned: report.loopbacks_returned as u64,
                detections: report.detections.len() as u64,
                aborted_chains: report.aborted_chains() as u64,
            };
        }
        w.last = Some(report);
        XrdStatus::Ok
    })
}

/// The last round's full report as one line of JSON; free with [`xrd_string_free`].
///
/// # Safety
/// `world` must come from [`xrd_world_new`]; `out_json` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xrd_world_last_report_json(world: *const XrdWorld, out_json: *mut *mut c_char) -> XrdStatus {
    guarded(|| {
        let (Some(w), false) = (world.as_ref(), out_json.is_null()) else {
            return fail(XrdStatus::NullPointer, "null argument");
        };
        let Some(report) = &w.last else {
            return fail(XrdStatus::InvalidArgument, "no round has run yet");
        };
        *out_json = CString::new(report.to_json_line()).expect("JSON has no NUL").into_raw();
        XrdStatus::Ok
    })
}

/// Releases a world. Null is ignored.
///
/// # Safety
/// `world` must be null or come from [`xrd_world_new`] and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn xrd_world_free(world: *mut XrdWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or come from this library and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn xrd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
