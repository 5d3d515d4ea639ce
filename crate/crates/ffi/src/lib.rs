//! C ABI over `penadd`.
//!
//! Datasets and fits are opaque handles created and freed here. Every
//! fallible call returns an integer status (`PENADD_OK` on success); the
//! message of the last failure on the calling thread is available from
//! [`penadd_last_error`]. Penalties are plain doubles, `INFINITY` selects the
//! additive limit.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use penadd::estimator::{self, FitResult, Smoother};
use penadd::selection::{self, CriterionKind, SearchLattice};
use penadd::{BandwidthSpec, BoundaryPolicy, Dataset, Error, FitConfig, Grid, Penalty, SolverKind};

pub const PENADD_OK: i32 = 0;
pub const PENADD_ERR_NULL: i32 = 1;
pub const PENADD_ERR_INVALID_INPUT: i32 = 2;
pub const PENADD_ERR_DIMENSION: i32 = 3;
pub const PENADD_ERR_PENALTY_DOMAIN: i32 = 4;
pub const PENADD_ERR_EMPTY_DATA: i32 = 5;
pub const PENADD_ERR_DEGENERATE_FIT: i32 = 6;
pub const PENADD_ERR_NON_CONVERGENCE: i32 = 7;
pub const PENADD_ERR_UNDEFINED_CRITERION: i32 = 8;
pub const PENADD_ERR_SELECTION_FAILED: i32 = 9;
pub const PENADD_ERR_BUFFER_TOO_SMALL: i32 = 10;
pub const PENADD_ERR_INTERNAL: i32 = 99;

pub const PENADD_SOLVER_DIRECT: i32 = 0;
pub const PENADD_SOLVER_ITERATIVE: i32 = 1;

pub const PENADD_CRITERION_AIC: i32 = 0;
pub const PENADD_CRITERION_GCV: i32 = 1;
pub const PENADD_CRITERION_AICC: i32 = 2;

/// Opaque design and response.
pub struct PenaddDataset {
    data: Dataset,
}

/// Opaque fitted surface; keeps a copy of the data for prediction.
pub struct PenaddFit {
    result: FitResult,
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Index { .. } | Error::Parse(_) | Error::Io(_) | Error::Calibration(_) => {
            PENADD_ERR_INVALID_INPUT
        }
        Error::Dimension(_) => PENADD_ERR_DIMENSION,
        Error::PenaltyDomain(_) => PENADD_ERR_PENALTY_DOMAIN,
        Error::EmptyData => PENADD_ERR_EMPTY_DATA,
        Error::DegenerateFit { .. } => PENADD_ERR_DEGENERATE_FIT,
        Error::NonConvergence { .. } => PENADD_ERR_NON_CONVERGENCE,
        Error::UndefinedCriterion(_) => PENADD_ERR_UNDEFINED_CRITERION,
        Error::SelectionFailed => PENADD_ERR_SELECTION_FAILED,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), i32>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PENADD_OK,
        Ok(Err(code)) => code,
        Err(_) => {
            set_error("internal panic".to_string());
            PENADD_ERR_INTERNAL
        }
    }
}

fn fail(e: Error) -> i32 {
    let code = code_of(&e);
    set_error(e.to_string());
    code
}

fn null(what: &str) -> i32 {
    set_error(format!("null pointer: {what}"));
    PENADD_ERR_NULL
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], i32> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, i32> {
    p.as_ref().ok_or_else(|| null(what))
}

fn penalty(r: f64) -> Result<Penalty, i32> {
    Penalty::finite(r).map_err(fail)
}

fn solver(kind: i32) -> Result<SolverKind, i32> {
    match kind {
        PENADD_SOLVER_DIRECT => Ok(SolverKind::Direct),
        PENADD_SOLVER_ITERATIVE => Ok(SolverKind::Iterative),
        other => Err(fail(Error::InvalidInput(format!("unknown solver {other}")))),
    }
}

fn criterion(kind: i32) -> Result<CriterionKind, i32> {
    match kind {
        PENADD_CRITERION_AIC => Ok(CriterionKind::Aic),
        PENADD_CRITERION_GCV => Ok(CriterionKind::Gcv),
        PENADD_CRITERION_AICC => Ok(CriterionKind::Aicc),
        other => Err(fail(Error::InvalidInput(format!("unknown criterion {other}")))),
    }
}

unsafe fn grid_and_bandwidth(
    d: usize,
    grid_sizes: *const usize,
    bandwidth: *const f64,
) -> Result<(Grid, BandwidthSpec), i32> {
    let sizes = slice(grid_sizes, d, "grid_sizes")?;
    let h = slice(bandwidth, d, "bandwidth")?;
    let grid = Grid::new(sizes).map_err(fail)?;
    let bw = BandwidthSpec::new(h.to_vec()).map_err(fail)?;
    Ok((grid, bw))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn penadd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies an `n x d` row-major design (scaled to `[0,1]`) and `n` responses.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn penadd_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    out: *mut *mut PenaddDataset,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = slice(x, n.checked_mul(d).unwrap_or(0), "x")?;
        let ys = slice(y, n, "y")?;
        let data = Dataset::new(xs.to_vec(), d, ys.to_vec()).map_err(fail)?;
        *out = Box::into_raw(Box::new(PenaddDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`penadd_dataset_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn penadd_dataset_free(ds: *mut PenaddDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits on a grid with `grid_sizes[k]` nodes and bandwidth `bandwidth[k]`
/// along axis `k`.
///
/// # Safety
/// `grid_sizes` and `bandwidth` must hold one entry per predictor; `out`
/// must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit(
    ds: *const PenaddDataset,
    grid_sizes: *const usize,
    bandwidth: *const f64,
    r: f64,
    solver_kind: i32,
    out: *mut *mut PenaddFit,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (grid, bw) = grid_and_bandwidth(ds.data.dim(), grid_sizes, bandwidth)?;
        let cfg = FitConfig::new(penalty(r)?, bw).with_solver(solver(solver_kind)?);
        let result = estimator::fit(&ds.data, &grid, &cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(PenaddFit {
            result,
            data: ds.data.clone(),
        }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle from [`penadd_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_free(fit: *mut PenaddFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of grid nodes of a fit (length of the surface buffers).
///
/// # Safety
/// `fit` must be a live handle or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_len(fit: *const PenaddFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.grid().len())
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), i32> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return Err(PENADD_ERR_BUFFER_TOO_SMALL);
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Fitted intercept at the grid nodes, row-major with axis 1 slowest.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_surface(fit: *const PenaddFit, out: *mut f64, len: usize) -> i32 {
    guard(|| copy_out(&handle(fit, "fit")?.result.surface(), out, len))
}

/// Intercept of the additive part at the grid nodes.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_additive_surface(fit: *const PenaddFit, out: *mut f64, len: usize) -> i32 {
    guard(|| copy_out(&handle(fit, "fit")?.result.additive_part.intercept(), out, len))
}

/// Relative residual of the normal equations.
///
/// # Safety
/// `out` must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_residual(fit: *const PenaddFit, out: *mut f64) -> i32 {
    guard(|| {
        let f = handle(fit, "fit")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.result.diagnostics.residual;
        Ok(())
    })
}

/// Estimate at `m` points (`m x d` row-major, in `[0,1]^d`).
///
/// # Safety
/// `x` must point to `m * d` doubles and `out` to `m` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn penadd_fit_predict(fit: *const PenaddFit, x: *const f64, m: usize, out: *mut f64) -> i32 {
    guard(|| {
        let f = handle(fit, "fit")?;
        let d = f.data.dim();
        let xs = slice(x, m * d, "x")?;
        let values = xs
            .chunks(d)
            .map(|p| estimator::predict_at(&f.result, &f.data, p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        copy_out(&values, out, m)
    })
}

/// Trace of the hat matrix at the design points for one `(R, h)`.
///
/// # Safety
/// `grid_sizes` and `bandwidth` must hold one entry per predictor; `out`
/// must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn penadd_trace(
    ds: *const PenaddDataset,
    grid_sizes: *const usize,
    bandwidth: *const f64,
    r: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (grid, bw) = grid_and_bandwidth(ds.data.dim(), grid_sizes, bandwidth)?;
        let smoother = Smoother::new(&ds.data, &grid, &bw, BoundaryPolicy::Renorm).map_err(fail)?;
        let cfg = FitConfig::new(penalty(r)?, bw);
        *out = smoother.evaluate(cfg.penalty, &cfg).map_err(fail)?.trace;
        Ok(())
    })
}

/// Criterion search over `R/(1+R)` in steps of `shrink_step` and a common
/// bandwidth on `[h_min, h_max]` equidistant in `log10` with step `log_step`.
/// Writes the selected penalty (possibly `INFINITY`) and bandwidth.
///
/// # Safety
/// `grid_sizes` must hold one entry per predictor; `out_r` and `out_h` must
/// be writable doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn penadd_select(
    ds: *const PenaddDataset,
    grid_sizes: *const usize,
    shrink_step: f64,
    h_min: f64,
    h_max: f64,
    log_step: f64,
    criterion_kind: i32,
    out_r: *mut f64,
    out_h: *mut f64,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if out_r.is_null() || out_h.is_null() {
            return Err(null("out"));
        }
        let d = ds.data.dim();
        let grid = Grid::new(slice(grid_sizes, d, "grid_sizes")?).map_err(fail)?;
        let kind = criterion(criterion_kind)?;
        let lattice = SearchLattice::regular(d, shrink_step, log_step, h_min, h_max).map_err(fail)?;
        let base = FitConfig::new(Penalty::ZERO, BandwidthSpec::uniform(d, h_min).map_err(fail)?);
        let sel = selection::select(&ds.data, &grid, &lattice, kind, &base).map_err(fail)?;
        *out_r = sel.best.penalty.value();
        *out_h = sel.best.h;
        Ok(())
    })
}
