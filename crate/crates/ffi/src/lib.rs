//! C interface to raterkit.
//!
//! Masks cross the boundary as row-major `uint8_t` buffers (nonzero = marked),
//! responses as `double` buffers. Every call returns an [`RkStatus`]; on
//! failure [`rk_last_error`] describes the cause until the next call on the
//! same thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use raterkit::eval::{pbar_counts, pr_curve, MatchPlan, MatchTolerance, Phi, SkewSpec, Thresholds};
use raterkit::features::ScalarField;
use raterkit::fusion::{fuse_staple, fuse_vote, StapleConfig};
use raterkit::mask::{
    agreement_map, smyth_bound, Annotation, AnnotationStack, BinaryMask, ImageGrid,
};
use raterkit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Domain = 4,
    EmptyAnnotation = 5,
    Undefined = 6,
    NotConverged = 7,
    Panic = 99,
}

impl From<&Error> for RkStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Dimension { .. } => RkStatus::DimensionMismatch,
            Error::EmptyAnnotation => RkStatus::EmptyAnnotation,
            Error::Domain(_) | Error::NonFinite { .. } => RkStatus::Domain,
            Error::UndefinedCorrelation(_) | Error::UndefinedRecall => RkStatus::Undefined,
            _ => RkStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(RkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(RkStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RkStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RkStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RkStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn write<T>(p: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

/// Annotations of one image under construction.
pub struct RkStack {
    grid: ImageGrid,
    annotators: Vec<Annotation>,
    roi: Option<BinaryMask>,
}

impl RkStack {
    fn build(&self) -> Result<AnnotationStack, Fail> {
        Ok(AnnotationStack::new(
            self.annotators.clone(),
            self.roi.clone(),
        )?)
    }

    fn mask(&self, data: *const u8, len: usize, what: &str) -> Result<BinaryMask, Fail> {
        let bytes = unsafe { input(data, len, what)? };
        Ok(BinaryMask::from_nonzero(self.grid, bytes)?)
    }
}

unsafe fn stack_ref<'a>(s: *const RkStack) -> Result<&'a RkStack, Fail> {
    s.as_ref().ok_or_else(|| null("stack"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next raterkit call on the same thread.
#[no_mangle]
pub extern "C" fn rk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create an empty stack for a `width` x `height` image.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rk_stack_new(
    width: usize,
    height: usize,
    out: *mut *mut RkStack,
) -> RkStatus {
    guard(|| {
        let grid = ImageGrid::new(width, height)?;
        let stack = Box::new(RkStack {
            grid,
            annotators: Vec::new(),
            roi: None,
        });
        write(out, Box::into_raw(stack), "out")
    })
}

/// Release a stack. Passing NULL is a no-op.
///
/// # Safety
/// `stack` must come from [`rk_stack_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rk_stack_free(stack: *mut RkStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Append one annotation of `len` bytes, which must equal width * height.
///
/// # Safety
/// `id` must be a NUL-terminated string and `mask` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rk_stack_add(
    stack: *mut RkStack,
    id: *const c_char,
    mask: *const u8,
    len: usize,
) -> RkStatus {
    guard(|| {
        let s = stack.as_mut().ok_or_else(|| null("stack"))?;
        if id.is_null() {
            return Err(null("id"));
        }
        let id = CStr::from_ptr(id)
            .to_str()
            .map_err(|_| Fail(RkStatus::InvalidArgument, "id is not UTF-8".into()))?
            .to_owned();
        if s.annotators.iter().any(|a| a.id == id) {
            return Err(Fail(
                RkStatus::InvalidArgument,
                format!("duplicate annotator id `{id}`"),
            ));
        }
        let mask = s.mask(mask, len, "mask")?;
        s.annotators.push(Annotation { id, mask });
        Ok(())
    })
}

/// Restrict all statistics to a region of interest. NULL clears it.
///
/// # Safety
/// `roi` must be NULL or point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rk_stack_set_roi(
    stack: *mut RkStack,
    roi: *const u8,
    len: usize,
) -> RkStatus {
    guard(|| {
        let s = stack.as_mut().ok_or_else(|| null("stack"))?;
        s.roi = if roi.is_null() {
            None
        } else {
            Some(s.mask(roi, len, "roi")?)
        };
        Ok(())
    })
}

/// Number of annotations added so far.
///
/// # Safety
/// `stack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_stack_len(stack: *const RkStack, out: *mut usize) -> RkStatus {
    guard(|| write(out, stack_ref(stack)?.annotators.len(), "out"))
}

/// Per-pixel count of annotators marking each pixel (0 outside the ROI).
///
/// # Safety
/// `out` must point to `len` writable `uint16_t` values.
#[no_mangle]
pub unsafe extern "C" fn rk_agreement(
    stack: *const RkStack,
    out: *mut u16,
    len: usize,
) -> RkStatus {
    guard(|| {
        let a = agreement_map(&stack_ref(stack)?.build()?);
        let out = output(out, len, "out")?;
        if len != a.counts().len() {
            return Err(Error::Dimension {
                expected: a.counts().len().to_string(),
                found: len.to_string(),
            }
            .into());
        }
        out.copy_from_slice(a.counts());
        Ok(())
    })
}

/// Lower bound on the mean annotator error implied by the disagreement.
///
/// # Safety
/// `stack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_smyth_bound(stack: *const RkStack, out: *mut f64) -> RkStatus {
    guard(|| {
        let bound = smyth_bound(&agreement_map(&stack_ref(stack)?.build()?));
        write(out, bound, "out")
    })
}

fn check_len(expected: usize, len: usize) -> Result<(), Fail> {
    if expected != len {
        return Err(Error::Dimension {
            expected: expected.to_string(),
            found: len.to_string(),
        }
        .into());
    }
    Ok(())
}

/// Pixels marked by at least a fraction `tau` of the annotators, written as 0/1.
///
/// # Safety
/// `out` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rk_fuse_vote(
    stack: *const RkStack,
    tau: f64,
    out: *mut u8,
    len: usize,
) -> RkStatus {
    guard(|| {
        let mask = fuse_vote(&stack_ref(stack)?.build()?, tau)?;
        check_len(mask.grid().len(), len)?;
        output(out, len, "out")?.copy_from_slice(mask.as_slice());
        Ok(())
    })
}

/// Result of [`rk_fuse_staple`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RkStapleInfo {
    pub iterations: usize,
    pub converged: c_int,
    pub prior: f64,
}

/// STAPLE with the default configuration. `mask` receives the 0/1 estimate and
/// `posterior` (optional) the per-pixel posterior; `sensitivity` and
/// `specificity` (optional) receive one value per annotator in insertion order.
/// Returns `RK_STATUS_NOT_CONVERGED` with all outputs written when the
/// iteration limit is reached.
///
/// # Safety
/// Buffers must hold `len` pixels or `n_annotators` values respectively.
#[no_mangle]
pub unsafe extern "C" fn rk_fuse_staple(
    stack: *const RkStack,
    mask: *mut u8,
    posterior: *mut f64,
    len: usize,
    sensitivity: *mut f64,
    specificity: *mut f64,
    n_annotators: usize,
    info: *mut RkStapleInfo,
) -> RkStatus {
    guard(|| {
        let s = stack_ref(stack)?.build()?;
        let r = fuse_staple(&s, &StapleConfig::default())?;
        check_len(s.grid().len(), len)?;
        output(mask, len, "mask")?.copy_from_slice(r.ground_truth().as_slice());
        if !posterior.is_null() {
            output(posterior, len, "posterior")?.copy_from_slice(r.posterior.values());
        }
        if !sensitivity.is_null() || !specificity.is_null() {
            check_len(s.len(), n_annotators)?;
        }
        if !sensitivity.is_null() {
            output(sensitivity, n_annotators, "sensitivity")?
                .copy_from_slice(&r.performance.sensitivity);
        }
        if !specificity.is_null() {
            output(specificity, n_annotators, "specificity")?
                .copy_from_slice(&r.performance.specificity);
        }
        if !info.is_null() {
            info.write(RkStapleInfo {
                iterations: r.iterations,
                converged: r.converged as c_int,
                prior: r.prior,
            });
        }
        if !r.converged {
            return Err(Fail(
                RkStatus::NotConverged,
                format!("STAPLE did not converge within {} iterations", r.iterations),
            ));
        }
        Ok(())
    })
}

fn skew_spec(pi1: f64, pi2: f64, phi: f64) -> SkewSpec {
    SkewSpec {
        pi1,
        pi2,
        phi: if phi > 0.0 {
            Phi::Fixed(phi)
        } else {
            Phi::Dataset
        },
    }
}

/// Skew-averaged precision at one operating point. `phi` must be positive.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rk_pbar(
    tp: f64,
    fp: f64,
    pi1: f64,
    pi2: f64,
    phi: f64,
    out: *mut f64,
) -> RkStatus {
    guard(|| {
        if !(tp >= 0.0 && fp >= 0.0) {
            return Err(Fail(
                RkStatus::InvalidArgument,
                "counts must be non-negative".into(),
            ));
        }
        let range = raterkit::eval::SkewRange::new(pi1, pi2, phi)?;
        write(out, pbar_counts(tp, fp, &range), "out")
    })
}

/// Area under the P̄-R curve of `response` against `gt`. A non-positive `phi`
/// uses the ground truth's negative-to-positive ratio; `radius` 0 is exact
/// matching, larger values match detections within that many pixels. `roi`
/// may be NULL.
///
/// # Safety
/// `response`, `gt` and `roi` must each hold width * height values.
#[no_mangle]
pub unsafe extern "C" fn rk_auc(
    response: *const f64,
    gt: *const u8,
    roi: *const u8,
    width: usize,
    height: usize,
    pi1: f64,
    pi2: f64,
    phi: f64,
    radius: f64,
    out: *mut f64,
) -> RkStatus {
    guard(|| {
        let grid = ImageGrid::new(width, height)?;
        let n = grid.len();
        let resp = ScalarField::new(grid, input(response, n, "response")?.to_vec())?;
        let gt = BinaryMask::from_nonzero(grid, input(gt, n, "gt")?)?;
        let roi = if roi.is_null() {
            None
        } else {
            Some(BinaryMask::from_nonzero(grid, input(roi, n, "roi")?)?)
        };
        let tol = if radius == 0.0 {
            MatchTolerance::exact()
        } else {
            MatchTolerance::lenient(radius)?
        };
        let plan = MatchPlan::whole(grid, tol);
        let positives = gt.restrict(roi.as_ref())?.count() as u64;
        let negatives = roi.as_ref().map_or(n, |r| r.count()) as u64 - positives;
        let range = skew_spec(pi1, pi2, phi).resolve(positives, negatives)?;
        let curve = pr_curve(
            &resp,
            &gt,
            roi.as_ref(),
            &plan,
            &range,
            Thresholds::default(),
        )?;
        write(out, curve.auc, "out")
    })
}
