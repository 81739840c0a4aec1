use std::ffi::{CStr, CString};
use std::ptr;

use xrd_ffi::*;

const SAMPLE: &str = include_str!("../../core/configs/sample16.toml");

fn last_error() -> String {
    let p = xrd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn chain_length_and_errors() {
    let mut k = 0u32;
    assert_eq!(unsafe { xrd_compute_chain_length(0.2, 6000, 64, &mut k) }, XrdStatus::Ok);
    assert_eq!(k, 33);
    assert!(xrd_last_error().is_null());

    assert_eq!(unsafe { xrd_compute_chain_length(1.5, 6000, 64, &mut k) }, XrdStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { xrd_compute_chain_length(0.2, 6000, 64, ptr::null_mut()) }, XrdStatus::NullPointer);
}

#[test]
fn topology_queries() {
    assert_eq!(xrd_compute_ell(100), 14);
    let (ell, n) = (xrd_compute_ell(100), 100);

    let mut len = 0usize;
    assert_eq!(unsafe { xrd_chains_for_group(1, ell, n, ptr::null_mut(), 0, &mut len) }, XrdStatus::BufferTooSmall);
    assert_eq!(len, ell as usize);

    let mut a = vec![0u32; len];
    let mut b = vec![0u32; len];
    assert_eq!(unsafe { xrd_chains_for_group(3, ell, n, a.as_mut_ptr(), a.len(), &mut len) }, XrdStatus::Ok);
    assert_eq!(unsafe { xrd_chains_for_group(10, ell, n, b.as_mut_ptr(), b.len(), &mut len) }, XrdStatus::Ok);
    let mut meet = u32::MAX;
    assert_eq!(unsafe { xrd_intersect_chain(3, 10, ell, n, &mut meet) }, XrdStatus::Ok);
    assert!(a.contains(&meet) && b.contains(&meet));

    assert_eq!(unsafe { xrd_intersect_chain(3, ell + 2, ell, n, &mut meet) }, XrdStatus::InvalidArgument);
}

#[test]
fn availability_matches_closed_form() {
    let mut frac = 0.0;
    assert_eq!(unsafe { xrd_availability_sim(5000, 32, 0.01, 20_000, 7, &mut frac) }, XrdStatus::Ok);
    assert!((frac - 0.2750).abs() < 0.015, "{frac}");
}

#[test]
fn world_lifecycle() {
    let cfg = CString::new(SAMPLE).unwrap();
    let mut world: *mut XrdWorld = ptr::null_mut();
    assert_eq!(unsafe { xrd_world_new(cfg.as_ptr(), &mut world) }, XrdStatus::Ok);
    assert!(!world.is_null());

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { xrd_world_last_report_json(world, &mut json) }, XrdStatus::InvalidArgument);

    let mut summary = XrdRoundSummary::default();
    assert_eq!(unsafe { xrd_world_run_round(world, &mut summary) }, XrdStatus::Ok);
    assert!(summary.active_conversations > 0);
    assert_eq!(summary.delivered_conversations, summary.active_conversations);
    assert_eq!(summary.failed_conversations, 0);
    assert_eq!(summary.aborted_chains, 0);
    assert_eq!(summary.loopbacks_returned, summary.loopbacks_sent);

    assert_eq!(unsafe { xrd_world_last_report_json(world, &mut json) }, XrdStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { xrd_string_free(json) };
    assert!(text.starts_with('{') && text.contains("\"round\""));

    let mut next = XrdRoundSummary::default();
    assert_eq!(unsafe { xrd_world_run_round(world, &mut next) }, XrdStatus::Ok);
    assert_eq!(next.round, summary.round + 1);
    unsafe { xrd_world_free(world) };
}

#[test]
fn world_rejects_bad_config() {
    let cfg = CString::new("[params]\nservers = 0\n").unwrap();
    let mut world: *mut XrdWorld = ptr::null_mut();
    assert_eq!(unsafe { xrd_world_new(cfg.as_ptr(), &mut world) }, XrdStatus::Config);
    assert!(world.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { xrd_world_new(ptr::null(), &mut world) }, XrdStatus::NullPointer);
    unsafe {
        xrd_world_free(ptr::null_mut());
        xrd_string_free(ptr::null_mut());
    }
}
