//! C ABI over the loadmix library. Handles are opaque, buffers are caller
//! allocated, and every fallible call reports through `LoadmixStatus` plus a
//! thread-local message readable via `loadmix_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use ndarray::Array2;

use loadmix::collection::{build_collection, CollectionOptions};
use loadmix::em::{lambda_max, lasso_em_fit, refit_mle, EmOptions};
use loadmix::error::Error;
use loadmix::ingest::{RegressionDataset, RowMeta};
use loadmix::mixture::{map_assign, model_dimension, responsibilities, MixtureParams};
use loadmix::slope::{select_models, SelectionOptions};
use loadmix::wavelet::{haar_dwt, haar_idwt, WaveletDecomp};

/// Samples per daily curve; every curve and coefficient buffer has this length.
pub const LOADMIX_CURVE_LEN: usize = 48;

/// Result of every fallible call. Anything other than `Ok` leaves a message
/// in `loadmix_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadmixStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    SelectionError = 5,
    Panic = 6,
}

/// Regression rows shared by the fitting calls.
pub struct LoadmixDataset {
    inner: RegressionDataset,
}

/// Fitted mixture: weights, per-cluster coefficient matrices, and variances.
pub struct LoadmixModel {
    params: MixtureParams,
    loglik: f64,
    dimension: usize,
}

/// Tuning knobs for the EM fits. Zero-initialize and call
/// `loadmix_fit_options_default` before overriding fields.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LoadmixFitOptions {
    /// Root seed for the randomized starts.
    pub seed: u64,
    /// Responsibility starts per fit; the first is k-means based.
    pub n_starts: usize,
    /// EM iteration cap.
    pub max_iter: usize,
    /// Relative objective change that stops a fit.
    pub tol: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = clean);
}

fn fail(e: &Error) -> LoadmixStatus {
    set_error(&e.to_string());
    match e {
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::Data(_) => {
            LoadmixStatus::DataError
        }
        Error::Config(_) | Error::Dim { .. } => LoadmixStatus::InvalidArgument,
        Error::Numerical(_) => LoadmixStatus::NumericalError,
        Error::Selection(_) => LoadmixStatus::SelectionError,
    }
}

fn null_arg(name: &str) -> LoadmixStatus {
    set_error(&format!("{name} must not be null"));
    LoadmixStatus::NullArgument
}

fn guarded(f: impl FnOnce() -> LoadmixStatus) -> LoadmixStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            LoadmixStatus::Panic
        }
    }
}

fn em_options(opts: Option<&LoadmixFitOptions>) -> EmOptions {
    match opts {
        None => EmOptions::default(),
        Some(o) => EmOptions {
            seed: o.seed,
            n_starts: o.n_starts,
            max_iter: o.max_iter,
            tol: o.tol,
            ..EmOptions::default()
        },
    }
}

fn synthetic_meta(n: usize) -> Vec<RowMeta> {
    let base = chrono::NaiveDate::from_ymd_opt(2012, 1, 2).unwrap();
    (0..n)
        .map(|i| {
            let eve = base + chrono::Days::new(i as u64);
            RowMeta {
                consumer: "ffi".to_string(),
                eve_date: eve,
                day_date: eve.succ_opt().unwrap(),
            }
        })
        .collect()
}

/// Message from the most recent failing call on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn loadmix_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Orthonormal Haar transform of one curve.
///
/// Coefficients land coarse to fine: 3 smooth, then 3 + 6 + 12 + 24 detail.
///
/// # Safety
/// `curve` and `coeffs` must each point to `LOADMIX_CURVE_LEN` doubles.
#[no_mangle]
pub unsafe extern "C" fn loadmix_haar_dwt(
    curve: *const f64,
    coeffs: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        if curve.is_null() {
            return null_arg("curve");
        }
        if coeffs.is_null() {
            return null_arg("coeffs");
        }
        let input = unsafe { slice::from_raw_parts(curve, LOADMIX_CURVE_LEN) };
        match haar_dwt(input) {
            Ok(decomp) => {
                let out = unsafe { slice::from_raw_parts_mut(coeffs, LOADMIX_CURVE_LEN) };
                out.copy_from_slice(&decomp.flatten());
                LoadmixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Inverse of `loadmix_haar_dwt`.
///
/// # Safety
/// `coeffs` and `curve` must each point to `LOADMIX_CURVE_LEN` doubles.
#[no_mangle]
pub unsafe extern "C" fn loadmix_haar_idwt(
    coeffs: *const f64,
    curve: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        if coeffs.is_null() {
            return null_arg("coeffs");
        }
        if curve.is_null() {
            return null_arg("curve");
        }
        let flat = unsafe { slice::from_raw_parts(coeffs, LOADMIX_CURVE_LEN) };
        let mut decomp = WaveletDecomp::zero();
        decomp.a4.copy_from_slice(&flat[0..3]);
        decomp.d4.copy_from_slice(&flat[3..6]);
        decomp.d3.copy_from_slice(&flat[6..12]);
        decomp.d2.copy_from_slice(&flat[12..24]);
        decomp.d1.copy_from_slice(&flat[24..48]);
        let out = unsafe { slice::from_raw_parts_mut(curve, LOADMIX_CURVE_LEN) };
        out.copy_from_slice(&haar_idwt(&decomp));
        LoadmixStatus::Ok
    })
}

/// Build a dataset from row-major regressor and response matrices.
///
/// # Safety
/// `x` must point to `n * p` doubles, `y` to `n * q` doubles, and `out` to a
/// writable pointer slot. A returned dataset must be released with
/// `loadmix_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn loadmix_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    p: usize,
    q: usize,
    out: *mut *mut LoadmixDataset,
) -> LoadmixStatus {
    guarded(|| {
        if x.is_null() {
            return null_arg("x");
        }
        if y.is_null() {
            return null_arg("y");
        }
        if out.is_null() {
            return null_arg("out");
        }
        if n == 0 || p == 0 || q == 0 {
            set_error("n, p, and q must all be positive");
            return LoadmixStatus::InvalidArgument;
        }
        let xv = unsafe { slice::from_raw_parts(x, n * p) }.to_vec();
        let yv = unsafe { slice::from_raw_parts(y, n * q) }.to_vec();
        let xm = Array2::from_shape_vec((n, p), xv).expect("shape checked");
        let ym = Array2::from_shape_vec((n, q), yv).expect("shape checked");
        match RegressionDataset::new(xm, ym, synthetic_meta(n), None) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(LoadmixDataset { inner })) };
                LoadmixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a dataset. A null pointer is ignored.
///
/// # Safety
/// `ds` must come from `loadmix_dataset_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn loadmix_dataset_free(ds: *mut LoadmixDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_dataset_rows(ds: *const LoadmixDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.n())
}

/// Regressor column count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_dataset_inputs(ds: *const LoadmixDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.p())
}

/// Response column count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_dataset_outputs(ds: *const LoadmixDataset) -> usize {
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.q())
}

/// Fill `opts` with the default fitting configuration.
///
/// # Safety
/// `opts` must point to a writable `LoadmixFitOptions`.
#[no_mangle]
pub unsafe extern "C" fn loadmix_fit_options_default(
    opts: *mut LoadmixFitOptions,
) -> LoadmixStatus {
    guarded(|| {
        if opts.is_null() {
            return null_arg("opts");
        }
        let d = EmOptions::default();
        unsafe {
            *opts = LoadmixFitOptions {
                seed: d.seed,
                n_starts: d.n_starts,
                max_iter: d.max_iter,
                tol: d.tol,
            };
        }
        LoadmixStatus::Ok
    })
}

/// Smallest penalty at which a `k`-cluster fit from the uniform start keeps
/// every coefficient at zero.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn loadmix_lambda_max(
    ds: *const LoadmixDataset,
    k: usize,
    out: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(ds) = (unsafe { ds.as_ref() }) else {
            return null_arg("ds");
        };
        if out.is_null() {
            return null_arg("out");
        }
        match lambda_max(&ds.inner, k) {
            Ok(v) => {
                unsafe { *out = v };
                LoadmixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

fn model_from_fit(params: MixtureParams, loglik: f64) -> LoadmixModel {
    let support = loadmix::em::Support::from_params(&params);
    let dimension = model_dimension(params.k(), support.len(), params.q());
    LoadmixModel { params, loglik, dimension }
}

/// Two-stage fit at one penalty level: an l1-penalized EM picks the active
/// coefficients, then an unpenalized EM restricted to them removes the
/// shrinkage. Clusters whose weight collapses are dropped, so the result may
/// hold fewer than `k` clusters.
///
/// # Safety
/// `ds` must be a live dataset handle, `opts` null or a valid options
/// struct, and `out` a writable pointer slot. A returned model must be
/// released with `loadmix_model_free`.
#[no_mangle]
pub unsafe extern "C" fn loadmix_fit(
    ds: *const LoadmixDataset,
    k: usize,
    lambda: f64,
    opts: *const LoadmixFitOptions,
    out: *mut *mut LoadmixModel,
) -> LoadmixStatus {
    guarded(|| {
        let Some(ds) = (unsafe { ds.as_ref() }) else {
            return null_arg("ds");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let em = em_options(unsafe { opts.as_ref() });
        let penalized = match lasso_em_fit(&ds.inner, k, lambda, &em) {
            Ok(f) => f,
            Err(e) => return fail(&e),
        };
        match refit_mle(&ds.inner, penalized.params.k(), &penalized.support, &em) {
            Ok(fit) => {
                let model = model_from_fit(fit.params, fit.loglik);
                unsafe { *out = Box::into_raw(Box::new(model)) };
                LoadmixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Sweep cluster counts and penalty levels, then pick one model with the
/// data-driven penalty calibration. `kappa_hat` receives the calibrated
/// penalty weight and may be null.
///
/// # Safety
/// `ds` must be a live dataset handle, `k_set` point to `k_len` cluster
/// counts, `opts` be null or valid, and `out` be a writable pointer slot. A
/// returned model must be released with `loadmix_model_free`.
#[no_mangle]
pub unsafe extern "C" fn loadmix_select(
    ds: *const LoadmixDataset,
    k_set: *const usize,
    k_len: usize,
    grid_size: usize,
    opts: *const LoadmixFitOptions,
    out: *mut *mut LoadmixModel,
    kappa_hat: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(ds) = (unsafe { ds.as_ref() }) else {
            return null_arg("ds");
        };
        if k_set.is_null() {
            return null_arg("k_set");
        }
        if out.is_null() {
            return null_arg("out");
        }
        let collection_opts = CollectionOptions {
            k_set: unsafe { slice::from_raw_parts(k_set, k_len) }.to_vec(),
            grid_size,
            em: em_options(unsafe { opts.as_ref() }),
        };
        let collection = match build_collection(&ds.inner, &collection_opts) {
            Ok((c, _)) => c,
            Err(e) => return fail(&e),
        };
        let selection = match select_models(&collection, &SelectionOptions::default()) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let entry = collection.entry(selection.selected).expect("selected id is in range");
        let model = LoadmixModel {
            params: entry.params.clone(),
            loglik: entry.loglik,
            dimension: entry.dimension,
        };
        unsafe {
            if !kappa_hat.is_null() {
                *kappa_hat = selection.kappa_hat;
            }
            *out = Box::into_raw(Box::new(model));
        }
        LoadmixStatus::Ok
    })
}

/// Release a model. A null pointer is ignored.
///
/// # Safety
/// `model` must come from a fitting call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_free(model: *mut LoadmixModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Cluster count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_clusters(model: *const LoadmixModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.params.k())
}

/// Regressor column count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_inputs(model: *const LoadmixModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.params.p())
}

/// Response column count, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_outputs(model: *const LoadmixModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.params.q())
}

/// Free-parameter count of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_dimension(model: *const LoadmixModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.dimension)
}

/// Mean log-likelihood of the model on its training rows.
///
/// # Safety
/// `model` must be a live model handle and `out` point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_loglik(
    model: *const LoadmixModel,
    out: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        unsafe { *out = m.loglik };
        LoadmixStatus::Ok
    })
}

/// Copy the mixing weights into `out`.
///
/// # Safety
/// `model` must be a live model handle and `out` point to
/// `loadmix_model_clusters(model)` doubles.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_weights(
    model: *const LoadmixModel,
    out: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        let dst = unsafe { slice::from_raw_parts_mut(out, m.params.k()) };
        dst.copy_from_slice(m.params.pi());
        LoadmixStatus::Ok
    })
}

/// Copy one cluster's coefficient matrix into `out`, row-major with one row
/// per response column.
///
/// # Safety
/// `model` must be a live model handle and `out` point to
/// `loadmix_model_outputs(model) * loadmix_model_inputs(model)` doubles.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_beta(
    model: *const LoadmixModel,
    cluster: usize,
    out: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if cluster >= m.params.k() {
            set_error(&format!(
                "cluster {cluster} out of range for a {}-cluster model",
                m.params.k()
            ));
            return LoadmixStatus::InvalidArgument;
        }
        let beta = m.params.beta(cluster);
        let dst = unsafe { slice::from_raw_parts_mut(out, beta.len()) };
        for (slot, v) in dst.iter_mut().zip(beta.iter()) {
            *slot = *v;
        }
        LoadmixStatus::Ok
    })
}

/// Copy one cluster's response variances into `out`.
///
/// # Safety
/// `model` must be a live model handle and `out` point to
/// `loadmix_model_outputs(model)` doubles.
#[no_mangle]
pub unsafe extern "C" fn loadmix_model_sigma2(
    model: *const LoadmixModel,
    cluster: usize,
    out: *mut f64,
) -> LoadmixStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        if out.is_null() {
            return null_arg("out");
        }
        if cluster >= m.params.k() {
            set_error(&format!(
                "cluster {cluster} out of range for a {}-cluster model",
                m.params.k()
            ));
            return LoadmixStatus::InvalidArgument;
        }
        let sigma2 = m.params.sigma2(cluster);
        let dst = unsafe { slice::from_raw_parts_mut(out, sigma2.len()) };
        for (slot, v) in dst.iter_mut().zip(sigma2.iter()) {
            *slot = *v;
        }
        LoadmixStatus::Ok
    })
}

/// Most probable cluster per dataset row under the model.
///
/// # Safety
/// `model` and `ds` must be live handles and `out` point to
/// `loadmix_dataset_rows(ds)` size_t slots.
#[no_mangle]
pub unsafe extern "C" fn loadmix_labels(
    model: *const LoadmixModel,
    ds: *const LoadmixDataset,
    out: *mut usize,
) -> LoadmixStatus {
    guarded(|| {
        let Some(m) = (unsafe { model.as_ref() }) else {
            return null_arg("model");
        };
        let Some(ds) = (unsafe { ds.as_ref() }) else {
            return null_arg("ds");
        };
        if out.is_null() {
            return null_arg("out");
        }
        match responsibilities(&m.params, &ds.inner) {
            Ok(tau) => {
                let labels = map_assign(&tau);
                let dst = unsafe { slice::from_raw_parts_mut(out, labels.len()) };
                dst.copy_from_slice(&labels);
                LoadmixStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
