use std::ffi::CStr;
use std::ptr;

use raterkit_ffi::*;

fn last_error() -> String {
    let p = rk_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Stack(*mut RkStack);

impl Drop for Stack {
    fn drop(&mut self) {
        unsafe { rk_stack_free(self.0) }
    }
}

fn stack(w: usize, h: usize, masks: &[(&CStr, &[u8])]) -> Stack {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { rk_stack_new(w, h, &mut s) }, RkStatus::Ok);
    for (id, m) in masks {
        assert_eq!(
            unsafe { rk_stack_add(s, id.as_ptr(), m.as_ptr(), m.len()) },
            RkStatus::Ok
        );
    }
    Stack(s)
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(rk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn agreement_and_vote_match_counts() {
    let a = [1u8, 1, 0, 0];
    let b = [1u8, 0, 1, 0];
    let c = [1u8, 1, 0, 0];
    let s = stack(2, 2, &[(c"a", &a), (c"b", &b), (c"c", &c)]);
    let mut n = 0;
    assert_eq!(unsafe { rk_stack_len(s.0, &mut n) }, RkStatus::Ok);
    assert_eq!(n, 3);

    let mut counts = [0u16; 4];
    assert_eq!(
        unsafe { rk_agreement(s.0, counts.as_mut_ptr(), 4) },
        RkStatus::Ok
    );
    assert_eq!(counts, [3, 2, 1, 0]);

    let mut gt = [9u8; 4];
    assert_eq!(
        unsafe { rk_fuse_vote(s.0, 0.5, gt.as_mut_ptr(), 4) },
        RkStatus::Ok
    );
    assert_eq!(gt, [1, 1, 0, 0]);

    // Disagreement at two pixels: min(2,1) + min(1,2) = 2 over 3 * 4 decisions.
    let mut bound = 0.0;
    assert_eq!(unsafe { rk_smyth_bound(s.0, &mut bound) }, RkStatus::Ok);
    assert!((bound - 2.0 / 12.0).abs() < 1e-12);
}

#[test]
fn roi_zeroes_outside_counts() {
    let a = [1u8, 1, 1, 1];
    let s = stack(2, 2, &[(c"a", &a), (c"b", &a)]);
    let roi = [1u8, 0, 0, 1];
    assert_eq!(
        unsafe { rk_stack_set_roi(s.0, roi.as_ptr(), 4) },
        RkStatus::Ok
    );
    let mut counts = [0u16; 4];
    assert_eq!(
        unsafe { rk_agreement(s.0, counts.as_mut_ptr(), 4) },
        RkStatus::Ok
    );
    assert_eq!(counts, [2, 0, 0, 2]);
}

#[test]
fn errors_set_status_and_message() {
    let a = [1u8, 0, 0, 0];
    let s = stack(2, 2, &[(c"a", &a)]);
    let short = [1u8, 0];
    assert_eq!(
        unsafe { rk_stack_add(s.0, c"b".as_ptr(), short.as_ptr(), 2) },
        RkStatus::DimensionMismatch
    );
    assert!(last_error().contains("dimension"));
    assert_eq!(
        unsafe { rk_stack_add(s.0, c"a".as_ptr(), a.as_ptr(), 4) },
        RkStatus::InvalidArgument
    );
    assert!(last_error().contains("duplicate"));
    assert_eq!(
        unsafe { rk_stack_add(s.0, ptr::null(), a.as_ptr(), 4) },
        RkStatus::NullPointer
    );

    let mut gt = [0u8; 4];
    assert_eq!(
        unsafe { rk_fuse_vote(s.0, 1.5, gt.as_mut_ptr(), 4) },
        RkStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { rk_fuse_vote(s.0, 0.5, gt.as_mut_ptr(), 3) },
        RkStatus::DimensionMismatch
    );

    assert_eq!(
        unsafe { rk_fuse_vote(s.0, 0.5, gt.as_mut_ptr(), 4) },
        RkStatus::Ok
    );
    assert!(rk_last_error().is_null());
}

#[test]
fn null_handles_are_rejected() {
    let mut n = 0;
    assert_eq!(
        unsafe { rk_stack_len(ptr::null(), &mut n) },
        RkStatus::NullPointer
    );
    assert_eq!(
        unsafe { rk_stack_new(2, 2, ptr::null_mut()) },
        RkStatus::NullPointer
    );
    unsafe { rk_stack_free(ptr::null_mut()) };
}

#[test]
fn staple_on_agreeing_raters() {
    let m = [1u8, 1, 0, 0, 0, 0, 1, 0, 0];
    let s = stack(3, 3, &[(c"a", &m), (c"b", &m), (c"c", &m)]);
    let mut gt = [0u8; 9];
    let mut post = [0f64; 9];
    let mut sens = [0f64; 3];
    let mut spec = [0f64; 3];
    let mut info = RkStapleInfo {
        iterations: 0,
        converged: 0,
        prior: 0.0,
    };
    let status = unsafe {
        rk_fuse_staple(
            s.0,
            gt.as_mut_ptr(),
            post.as_mut_ptr(),
            9,
            sens.as_mut_ptr(),
            spec.as_mut_ptr(),
            3,
            &mut info,
        )
    };
    assert_eq!(status, RkStatus::Ok);
    assert_eq!(gt, m);
    assert_eq!(info.converged, 1);
    assert!((info.prior - 3.0 / 9.0).abs() < 1e-12);
    for k in 0..3 {
        assert!(sens[k] > 0.999 && spec[k] > 0.999);
    }
}

#[test]
fn staple_rejects_blank_stack() {
    let m = [0u8; 4];
    let s = stack(2, 2, &[(c"a", &m), (c"b", &m)]);
    let mut gt = [0u8; 4];
    let status = unsafe {
        rk_fuse_staple(
            s.0,
            gt.as_mut_ptr(),
            ptr::null_mut(),
            4,
            ptr::null_mut(),
            ptr::null_mut(),
            0,
            ptr::null_mut(),
        )
    };
    assert_ne!(status, RkStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn pbar_limits() {
    let mut v = 0.0;
    assert_eq!(
        unsafe { rk_pbar(10.0, 0.0, 0.1, 0.5, 1.0, &mut v) },
        RkStatus::Ok
    );
    assert_eq!(v, 1.0);
    assert_eq!(
        unsafe { rk_pbar(0.0, 10.0, 0.1, 0.5, 1.0, &mut v) },
        RkStatus::Ok
    );
    assert_eq!(v, 0.0);
    // Equal counts and phi = 1: precision is pi everywhere, so the average is the midpoint.
    assert_eq!(
        unsafe { rk_pbar(5.0, 5.0, 0.1, 0.5, 1.0, &mut v) },
        RkStatus::Ok
    );
    assert!((v - 0.3).abs() < 1e-9, "{v}");
    assert_eq!(
        unsafe { rk_pbar(1.0, 1.0, 0.5, 0.1, 1.0, &mut v) },
        RkStatus::InvalidArgument
    );
}

#[test]
fn auc_of_a_perfect_detector_is_one() {
    let gt = [1u8, 0, 0, 1, 0, 0, 0, 0, 1];
    let resp: Vec<f64> = gt.iter().map(|&g| g as f64).collect();
    let mut auc = 0.0;
    let status = unsafe {
        rk_auc(
            resp.as_ptr(),
            gt.as_ptr(),
            ptr::null(),
            3,
            3,
            0.1,
            0.5,
            0.0,
            0.0,
            &mut auc,
        )
    };
    assert_eq!(status, RkStatus::Ok);
    assert!((auc - 1.0).abs() < 1e-12, "{auc}");

    let bad = [f64::NAN; 9];
    let status = unsafe {
        rk_auc(
            bad.as_ptr(),
            gt.as_ptr(),
            ptr::null(),
            3,
            3,
            0.1,
            0.5,
            0.0,
            0.0,
            &mut auc,
        )
    };
    assert_eq!(status, RkStatus::Domain);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/raterkit.h");
    for f in [
        "rk_version",
        "rk_last_error",
        "rk_stack_new",
        "rk_stack_free",
        "rk_stack_add",
        "rk_stack_set_roi",
        "rk_stack_len",
        "rk_agreement",
        "rk_smyth_bound",
        "rk_fuse_vote",
        "rk_fuse_staple",
        "rk_pbar",
        "rk_auc",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct RkStack RkStack;"));
}
