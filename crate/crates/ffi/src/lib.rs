//! C ABI over the cnnpca toolkit.
//!
//! Every fallible function returns a [`CnnpcaStatus`]. On failure the message is
//! available from [`cnnpca_last_error_message`] on the calling thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cnnpca::flow_sim::{default_wells, simulate, ReservoirConfig};
use cnnpca::history_match::{rml_objective, ObsData, ObsKey, ObsQuantity, RmlInstance};
use cnnpca::opca::opca_binary;
use cnnpca::transform_net::{Finalizer, PARAM_COUNT};
use cnnpca::{Error, GridModel, ModelKind, PcaBasis, PropertyMap, TransformNet};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CnnpcaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque PCA basis.
pub struct CnnpcaPca(PcaBasis);

/// Opaque trained model transform net.
pub struct CnnpcaNet(TransformNet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CnnpcaStatus {
    match e {
        Error::Shape { .. } => CnnpcaStatus::Shape,
        Error::InvalidArgument(_) => CnnpcaStatus::InvalidArgument,
        Error::Io(_) => CnnpcaStatus::Io,
        Error::Format { .. } => CnnpcaStatus::Format,
        Error::Config(_) => CnnpcaStatus::Config,
        _ => CnnpcaStatus::Numerical,
    }
}

struct Fail(CnnpcaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CnnpcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CnnpcaStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            CnnpcaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CnnpcaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CnnpcaStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn copy_out(values: &[f64], out: &mut [f64]) -> Result<(), Fail> {
    if out.len() != values.len() {
        return Err(Fail(
            CnnpcaStatus::Shape,
            format!("output holds {} values, expected {}", out.len(), values.len()),
        ));
    }
    out.copy_from_slice(values);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cnnpca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cnnpca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of trainable parameters of the model transform net.
#[no_mangle]
pub extern "C" fn cnnpca_transform_net_param_count() -> usize {
    PARAM_COUNT
}

/// Loads a PCA basis checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_pca_load(path_: *const c_char, out: *mut *mut CnnpcaPca) -> CnnpcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let p = PcaBasis::load(path(path_)?)?;
        *out = Box::into_raw(Box::new(CnnpcaPca(p)));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`cnnpca_pca_load`] and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_pca_free(h: *mut CnnpcaPca) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Grid extents and latent dimension of a basis.
///
/// # Safety
/// `h` must be a live handle; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_pca_dims(h: *const CnnpcaPca, nx: *mut usize, ny: *mut usize, l: *mut usize) -> CnnpcaStatus {
    guard(|| {
        let p = &h.as_ref().ok_or_else(|| null("handle"))?.0;
        if nx.is_null() || ny.is_null() || l.is_null() {
            return Err(null("output"));
        }
        *nx = p.nx();
        *ny = p.ny();
        *l = p.l();
        Ok(())
    })
}

/// Writes the PCA model `m̄ + U Σ ξ` into `out` (`n_cells` values, row-major).
///
/// # Safety
/// `xi` must hold `l` values and `out` `n_cells` values.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_pca_sample(
    h: *const CnnpcaPca,
    xi: *const f64,
    l: usize,
    out: *mut f64,
    n_cells: usize,
) -> CnnpcaStatus {
    guard(|| {
        let p = &h.as_ref().ok_or_else(|| null("handle"))?.0;
        let m = p.sample(slice(xi, l, "xi")?)?;
        copy_out(m.values(), slice_mut(out, n_cells, "out")?)
    })
}

/// Loads a transform-net checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_net_load(path_: *const c_char, out: *mut *mut CnnpcaNet) -> CnnpcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let n = TransformNet::load(path(path_)?)?;
        *out = Box::into_raw(Box::new(CnnpcaNet(n)));
        Ok(())
    })
}

/// Freshly initialized, untrained net.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_net_build(seed: u64, out: *mut *mut CnnpcaNet) -> CnnpcaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(CnnpcaNet(TransformNet::build(seed))));
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library and not be used afterwards; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_net_free(h: *mut CnnpcaNet) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// CNN-PCA realization for latent `xi`. A `cutoff` in `[0, 1]` thresholds the
/// output; any other value (e.g. `-1`) returns it unthresholded.
///
/// # Safety
/// Handles must be live; `xi` holds `l` values and `out` `n_cells` values.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_net_generate(
    net: *const CnnpcaNet,
    pca: *const CnnpcaPca,
    xi: *const f64,
    l: usize,
    cutoff: f64,
    out: *mut f64,
    n_cells: usize,
) -> CnnpcaStatus {
    guard(|| {
        let n = &net.as_ref().ok_or_else(|| null("net"))?.0;
        let p = &pca.as_ref().ok_or_else(|| null("pca"))?.0;
        let fin = if (0.0..=1.0).contains(&cutoff) {
            Finalizer::Threshold(cutoff)
        } else {
            Finalizer::None
        };
        let m = n.generate(p, slice(xi, l, "xi")?, &fin)?;
        copy_out(m.values(), slice_mut(out, n_cells, "out")?)
    })
}

/// Binary O-PCA post-processing of `n` cell values.
///
/// # Safety
/// `values` and `out` must each hold `n` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_opca_binary(values: *const f64, n: usize, gamma: f64, out: *mut f64) -> CnnpcaStatus {
    guard(|| {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Fail(CnnpcaStatus::InvalidArgument, format!("gamma must be non-negative, got {gamma}")));
        }
        let m = GridModel::new(n, 1, slice(values, n, "values")?.to_vec(), ModelKind::Continuous)?;
        let r = opca_binary(&m, gamma)?;
        copy_out(r.values(), slice_mut(out, n, "out")?)
    })
}

/// Simulates a facies model (`binary != 0`) or a log-permeability model with the
/// default reservoir, property map and four-well layout, and writes the history
/// vector up to `until_day`: per report time, injector rates then producer oil
/// and water rates. `*written` receives the vector length; when `cap` is too small
/// nothing is copied and `BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `values` holds `nx·ny` values, `out` holds `cap` values, `written` is valid.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_simulate_history(
    values: *const f64,
    nx: usize,
    ny: usize,
    binary: i32,
    until_day: f64,
    out: *mut f64,
    cap: usize,
    written: *mut usize,
) -> CnnpcaStatus {
    guard(|| {
        if written.is_null() {
            return Err(null("written"));
        }
        let n = nx.checked_mul(ny).ok_or_else(|| Fail(CnnpcaStatus::InvalidArgument, "grid too large".into()))?;
        let kind = if binary != 0 { ModelKind::Binary } else { ModelKind::Continuous };
        let m = GridModel::new(nx, ny, slice(values, n, "values")?.to_vec(), kind)?;
        let r = simulate(&m, &PropertyMap::default(), &ReservoirConfig::default(), &default_wells(nx, ny), until_day)?;
        let d = r.history_vector(until_day);
        *written = d.len();
        if cap < d.len() {
            return Err(Fail(CnnpcaStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", d.len())));
        }
        slice_mut(out, d.len(), "out")?.copy_from_slice(&d);
        Ok(())
    })
}

/// RML objective terms for simulated data `d` (length `n_d`) at latent `xi` (length `l`).
///
/// # Safety
/// Array arguments must hold the stated lengths; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cnnpca_rml_objective(
    xi: *const f64,
    xi_star: *const f64,
    l: usize,
    d: *const f64,
    d_obs_star: *const f64,
    sigma: *const f64,
    n_d: usize,
    data_term: *mut f64,
    model_term: *mut f64,
    total: *mut f64,
) -> CnnpcaStatus {
    guard(|| {
        if data_term.is_null() || model_term.is_null() || total.is_null() {
            return Err(null("output"));
        }
        let d_star = slice(d_obs_star, n_d, "d_obs_star")?.to_vec();
        let keys = (0..n_d)
            .map(|i| ObsKey {
                day: i as f64,
                well: String::new(),
                quantity: ObsQuantity::Oil,
            })
            .collect();
        let obs = ObsData::new(keys, d_star.clone(), slice(sigma, n_d, "sigma")?.to_vec())?;
        let inst = RmlInstance {
            d_obs_star: d_star,
            xi_star: slice(xi_star, l, "xi_star")?.to_vec(),
            seed: 0,
        };
        let v = rml_objective(slice(xi, l, "xi")?, slice(d, n_d, "d")?, &inst, &obs)?;
        *data_term = v.data;
        *model_term = v.model;
        *total = v.total;
        Ok(())
    })
}
