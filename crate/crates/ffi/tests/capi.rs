//! Drives the C ABI the way a foreign caller would: through the exported
//! extern "C" functions, raw pointers and status codes.

use std::ffi::{CStr, CString};
use std::ptr;

use dgadr_ffi::*;

fn synth_config() -> DgSynthConfig {
    DgSynthConfig {
        num_domains: 3,
        num_classes: 3,
        feature_dim: 6,
        samples_per_domain: 40,
        class_skew: 2.0,
        domain_shift_scale: 1.0,
        intra_domain_subclusters: 1,
        noise_std: 1.0,
        seed: 5,
    }
}

fn train_options(hidden: &[u64]) -> DgTrainOptions {
    DgTrainOptions {
        hidden_dims: hidden.as_ptr(),
        hidden_dims_len: hidden.len(),
        activation: DgActivation::DgActivationTanh,
        margin: 0.1,
        hard_count: 5,
        alpha: 10.0,
        gamma: 2.0,
        weights_mode: DgWeightsMode::DgWeightsUniform,
        batch_size: 16,
        epochs: 3,
        lr: 0.05,
        jitter_phi: 0.1,
        jitter_aux: 0.0,
        eval_every: 3,
    }
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(dg_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn version_is_a_nonempty_c_string() {
    let v = unsafe { CStr::from_ptr(dg_version()) };
    assert!(!v.to_bytes().is_empty());
}

#[test]
fn generate_train_evaluate_roundtrip() {
    unsafe {
        let cfg = synth_config();
        let mut dataset: *mut DgDataset = ptr::null_mut();
        assert_eq!(dg_dataset_generate(&cfg, &mut dataset), DgStatus::DgStatusOk);

        let mut n = 0u64;
        assert_eq!(dg_dataset_num_samples(dataset, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 120);
        assert_eq!(dg_dataset_num_classes(dataset, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 3);
        assert_eq!(dg_dataset_num_domains(dataset, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 3);
        assert_eq!(dg_dataset_feature_dim(dataset, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 6);

        let mut source: *mut DgDataset = ptr::null_mut();
        let mut target: *mut DgDataset = ptr::null_mut();
        assert_eq!(
            dg_dataset_split_loto(dataset, 1, &mut source, &mut target),
            DgStatus::DgStatusOk
        );
        assert_eq!(dg_dataset_num_domains(source, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 2);
        assert_eq!(dg_dataset_num_samples(target, &mut n), DgStatus::DgStatusOk);
        assert_eq!(n, 40);

        let hidden = [8u64, 6];
        let opts = train_options(&hidden);
        let mut model: *mut DgModel = ptr::null_mut();
        assert_eq!(dg_train(source, &opts, 3, &mut model), DgStatus::DgStatusOk);

        let mut metrics = DgMetrics {
            accuracy: -1.0,
            macro_f1: -1.0,
            ovr_auc: -1.0,
        };
        assert_eq!(dg_evaluate(model, target, &mut metrics), DgStatus::DgStatusOk);
        assert!((0.0..=1.0).contains(&metrics.accuracy));
        assert!((0.0..=1.0).contains(&metrics.macro_f1));
        assert!((0.0..=1.0).contains(&metrics.ovr_auc));

        let mut dispersion = -1.0f64;
        assert_eq!(
            dg_feature_dispersion(model, source, &mut dispersion),
            DgStatus::DgStatusOk
        );
        assert!(dispersion >= 0.0);

        dg_model_free(model);
        dg_dataset_free(source);
        dg_dataset_free(target);
        dg_dataset_free(dataset);
    }
}

#[test]
fn dataset_csv_roundtrip_through_the_abi() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("ds.csv").to_str().unwrap()).unwrap();

        let cfg = synth_config();
        let mut dataset: *mut DgDataset = ptr::null_mut();
        assert_eq!(dg_dataset_generate(&cfg, &mut dataset), DgStatus::DgStatusOk);
        assert_eq!(dg_dataset_save(dataset, path.as_ptr()), DgStatus::DgStatusOk);

        let mut loaded: *mut DgDataset = ptr::null_mut();
        assert_eq!(dg_dataset_load(path.as_ptr(), &mut loaded), DgStatus::DgStatusOk);
        let (mut a, mut b) = (0u64, 0u64);
        assert_eq!(dg_dataset_num_samples(dataset, &mut a), DgStatus::DgStatusOk);
        assert_eq!(dg_dataset_num_samples(loaded, &mut b), DgStatus::DgStatusOk);
        assert_eq!(a, b);

        dg_dataset_free(loaded);
        dg_dataset_free(dataset);
    }
}

#[test]
fn model_params_roundtrip_through_the_abi() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("params.out").to_str().unwrap()).unwrap();

        let cfg = synth_config();
        let mut dataset: *mut DgDataset = ptr::null_mut();
        assert_eq!(dg_dataset_generate(&cfg, &mut dataset), DgStatus::DgStatusOk);
        let hidden = [8u64, 6];
        let opts = train_options(&hidden);
        let mut model: *mut DgModel = ptr::null_mut();
        assert_eq!(dg_train(dataset, &opts, 1, &mut model), DgStatus::DgStatusOk);
        assert_eq!(dg_model_save(model, path.as_ptr()), DgStatus::DgStatusOk);

        let mut loaded: *mut DgModel = ptr::null_mut();
        assert_eq!(dg_model_load(path.as_ptr(), &mut loaded), DgStatus::DgStatusOk);
        let mut m1 = DgMetrics {
            accuracy: 0.0,
            macro_f1: 0.0,
            ovr_auc: 0.0,
        };
        let mut m2 = m1;
        assert_eq!(dg_evaluate(model, dataset, &mut m1), DgStatus::DgStatusOk);
        assert_eq!(dg_evaluate(loaded, dataset, &mut m2), DgStatus::DgStatusOk);
        assert_eq!(m1, m2);

        dg_model_free(loaded);
        dg_model_free(model);
        dg_dataset_free(dataset);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        // null pointers
        assert_eq!(
            dg_dataset_generate(ptr::null(), ptr::null_mut()),
            DgStatus::DgStatusNullPointer
        );

        // invalid config (feature_dim below 2)
        let mut cfg = synth_config();
        cfg.feature_dim = 1;
        let mut dataset: *mut DgDataset = ptr::null_mut();
        assert_eq!(
            dg_dataset_generate(&cfg, &mut dataset),
            DgStatus::DgStatusInvalidArgument
        );
        assert!(last_error().contains("feature_dim"));

        // missing file names the path
        let missing = CString::new("/nonexistent/nowhere.csv").unwrap();
        let mut loaded: *mut DgDataset = ptr::null_mut();
        let status = dg_dataset_load(missing.as_ptr(), &mut loaded);
        assert_eq!(status, DgStatus::DgStatusIo);
        assert!(last_error().contains("/nonexistent/nowhere.csv"));

        // absent split domain
        let cfg = synth_config();
        assert_eq!(dg_dataset_generate(&cfg, &mut dataset), DgStatus::DgStatusOk);
        let mut s: *mut DgDataset = ptr::null_mut();
        let mut t: *mut DgDataset = ptr::null_mut();
        assert_eq!(
            dg_dataset_split_loto(dataset, 99, &mut s, &mut t),
            DgStatus::DgStatusInvalidArgument
        );
        dg_dataset_free(dataset);
    }
}

#[test]
fn generated_header_covers_the_surface() {
    let header = include_str!("../include/dgadr.h");
    for symbol in [
        "dg_version",
        "dg_last_error_message",
        "dg_dataset_generate",
        "dg_dataset_load",
        "dg_dataset_save",
        "dg_dataset_free",
        "dg_dataset_split_loto",
        "dg_train",
        "dg_evaluate",
        "dg_feature_dispersion",
        "dg_model_save",
        "dg_model_load",
        "dg_model_free",
        "DgStatus",
        "DgSynthConfig",
        "DgTrainOptions",
        "DgMetrics",
    ] {
        assert!(header.contains(symbol), "header is missing `{symbol}`");
    }
}
