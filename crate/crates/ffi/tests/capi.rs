use std::ffi::CStr;
use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use loadmix_ffi::*;

const P: usize = 9;

fn last_error() -> String {
    unsafe { CStr::from_ptr(loadmix_last_error()) }
        .to_string_lossy()
        .into_owned()
}

/// Two slope regimes over positive regressors: rows before `n * 3 / 5` scale
/// the first six coordinates by +2.5, the rest by -1.5.
fn two_group_data(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut x = Vec::with_capacity(n * P);
    let mut y = Vec::with_capacity(n * P);
    for i in 0..n {
        let slope = if i < n * 3 / 5 { 2.5 } else { -1.5 };
        for j in 0..P {
            let v = 0.5 + rng.sample::<f64, _>(StandardNormal).abs();
            let noise = 0.45 * rng.sample::<f64, _>(StandardNormal);
            x.push(v);
            y.push(if j < 6 { slope * v + noise } else { noise });
        }
    }
    (x, y)
}

fn make_dataset(n: usize) -> *mut LoadmixDataset {
    let (x, y) = two_group_data(n);
    let mut ds: *mut LoadmixDataset = ptr::null_mut();
    let status = unsafe { loadmix_dataset_new(x.as_ptr(), y.as_ptr(), n, P, P, &mut ds) };
    assert_eq!(status, LoadmixStatus::Ok, "{}", last_error());
    assert!(!ds.is_null());
    ds
}

#[test]
fn dwt_roundtrip_through_the_c_surface() {
    let curve: Vec<f64> = (0..LOADMIX_CURVE_LEN)
        .map(|s| 1.0 + (0.4 * s as f64).sin() + 0.2 * (1.3 * s as f64).cos())
        .collect();
    let mut coeffs = [0.0; LOADMIX_CURVE_LEN];
    let mut back = [0.0; LOADMIX_CURVE_LEN];
    unsafe {
        assert_eq!(
            loadmix_haar_dwt(curve.as_ptr(), coeffs.as_mut_ptr()),
            LoadmixStatus::Ok
        );
        assert_eq!(
            loadmix_haar_idwt(coeffs.as_ptr(), back.as_mut_ptr()),
            LoadmixStatus::Ok
        );
    }
    for (a, b) in curve.iter().zip(back.iter()) {
        assert!((a - b).abs() <= 1e-12);
    }

    let energy: f64 = curve.iter().map(|v| v * v).sum();
    let coeff_energy: f64 = coeffs.iter().map(|v| v * v).sum();
    assert!((energy - coeff_energy).abs() <= 1e-10 * energy);

    let status = unsafe { loadmix_haar_dwt(ptr::null(), coeffs.as_mut_ptr()) };
    assert_eq!(status, LoadmixStatus::NullArgument);
    assert!(last_error().contains("curve"));
}

#[test]
fn fit_recovers_the_two_slope_groups() {
    let n = 150;
    let ds = make_dataset(n);
    unsafe {
        assert_eq!(loadmix_dataset_rows(ds), n);
        assert_eq!(loadmix_dataset_inputs(ds), P);
        assert_eq!(loadmix_dataset_outputs(ds), P);

        let mut lmax = 0.0;
        assert_eq!(loadmix_lambda_max(ds, 2, &mut lmax), LoadmixStatus::Ok);
        assert!(lmax > 0.0);

        let mut opts = LoadmixFitOptions { seed: 0, n_starts: 0, max_iter: 0, tol: 0.0 };
        assert_eq!(loadmix_fit_options_default(&mut opts), LoadmixStatus::Ok);
        assert!(opts.n_starts > 0 && opts.max_iter > 0 && opts.tol > 0.0);

        let mut model: *mut LoadmixModel = ptr::null_mut();
        let status = loadmix_fit(ds, 2, 0.02 * lmax, &opts, &mut model);
        assert_eq!(status, LoadmixStatus::Ok, "{}", last_error());
        let k = loadmix_model_clusters(model);
        assert_eq!(k, 2);
        assert_eq!(loadmix_model_inputs(model), P);
        assert_eq!(loadmix_model_outputs(model), P);
        assert!(loadmix_model_dimension(model) > 0);

        let mut loglik = f64::NAN;
        assert_eq!(loadmix_model_loglik(model, &mut loglik), LoadmixStatus::Ok);
        assert!(loglik.is_finite());

        let mut weights = vec![0.0; k];
        assert_eq!(loadmix_model_weights(model, weights.as_mut_ptr()), LoadmixStatus::Ok);
        assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);

        let mut sigma2 = vec![0.0; P];
        assert_eq!(loadmix_model_sigma2(model, 0, sigma2.as_mut_ptr()), LoadmixStatus::Ok);
        assert!(sigma2.iter().all(|v| *v > 0.0));

        // the two coefficient matrices carry opposite-signed leading slopes
        let mut beta = vec![0.0; P * P];
        let mut leads = Vec::new();
        for c in 0..k {
            assert_eq!(loadmix_model_beta(model, c, beta.as_mut_ptr()), LoadmixStatus::Ok);
            leads.push(beta[0]);
        }
        assert!(leads[0] * leads[1] < 0.0, "leading slopes {leads:?}");

        let mut labels = vec![0usize; n];
        assert_eq!(loadmix_labels(model, ds, labels.as_mut_ptr()), LoadmixStatus::Ok);
        let split = n * 3 / 5;
        let head = labels[..split].iter().filter(|&&l| l == labels[0]).count();
        let tail = labels[split..].iter().filter(|&&l| l != labels[0]).count();
        assert!(
            head * 10 >= split * 9 && tail * 10 >= (n - split) * 9,
            "labels {labels:?}"
        );

        loadmix_model_free(model);
        loadmix_dataset_free(ds);
    }
}

#[test]
fn select_settles_on_two_clusters() {
    let ds = make_dataset(400);
    unsafe {
        let mut opts = LoadmixFitOptions { seed: 0, n_starts: 0, max_iter: 0, tol: 0.0 };
        assert_eq!(loadmix_fit_options_default(&mut opts), LoadmixStatus::Ok);
        opts.n_starts = 2;
        opts.max_iter = 80;
        opts.tol = 1e-4;

        let k_set = [1usize, 2, 3];
        let mut model: *mut LoadmixModel = ptr::null_mut();
        let mut kappa = f64::NAN;
        let status = loadmix_select(ds, k_set.as_ptr(), 3, 4, &opts, &mut model, &mut kappa);
        assert_eq!(status, LoadmixStatus::Ok, "{}", last_error());
        assert!(kappa > 0.0);
        assert_eq!(loadmix_model_clusters(model), 2);

        loadmix_model_free(model);
        loadmix_dataset_free(ds);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    unsafe {
        let mut ds: *mut LoadmixDataset = ptr::null_mut();
        let x = [1.0, 2.0];
        let y = [1.0, 2.0];
        let status = loadmix_dataset_new(x.as_ptr(), y.as_ptr(), 0, 1, 1, &mut ds);
        assert_eq!(status, LoadmixStatus::InvalidArgument);
        assert!(last_error().contains("positive"));

        let bad = [f64::NAN, 2.0];
        let status = loadmix_dataset_new(bad.as_ptr(), y.as_ptr(), 2, 1, 1, &mut ds);
        assert_eq!(status, LoadmixStatus::DataError);
        assert!(!last_error().is_empty());

        let mut model: *mut LoadmixModel = ptr::null_mut();
        let status = loadmix_fit(ptr::null(), 2, 0.1, ptr::null(), &mut model);
        assert_eq!(status, LoadmixStatus::NullArgument);
        assert!(last_error().contains("ds"));

        let ds = make_dataset(40);
        let status = loadmix_fit(ds, 0, 0.1, ptr::null(), &mut model);
        assert_eq!(status, LoadmixStatus::InvalidArgument, "{}", last_error());

        let status = loadmix_fit(ds, 1, f64::NAN, ptr::null(), &mut model);
        assert_eq!(status, LoadmixStatus::InvalidArgument);

        let status = loadmix_fit(ds, 1, 0.5, ptr::null(), &mut model);
        assert_eq!(status, LoadmixStatus::Ok, "{}", last_error());
        let mut beta = vec![0.0; P * P];
        let status = loadmix_model_beta(model, 5, beta.as_mut_ptr());
        assert_eq!(status, LoadmixStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        loadmix_model_free(model);
        loadmix_dataset_free(ds);
        loadmix_model_free(ptr::null_mut());
        loadmix_dataset_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_covers_the_surface() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/loadmix.h");
    let header = std::fs::read_to_string(path).unwrap();
    for needle in [
        "#ifndef LOADMIX_H",
        "LOADMIX_CURVE_LEN",
        "typedef struct LoadmixDataset LoadmixDataset;",
        "typedef struct LoadmixModel LoadmixModel;",
        "LOADMIX_STATUS_OK",
        "loadmix_last_error",
        "loadmix_haar_dwt",
        "loadmix_dataset_new",
        "loadmix_fit(",
        "loadmix_select(",
        "loadmix_labels",
        "size_t",
    ] {
        assert!(header.contains(needle), "header is missing {needle:?}");
    }
}
