//! Exercises the C entry points from Rust: handle lifecycles, error codes,
//! buffer contracts, and agreement with the underlying library.

use std::ffi::CString;
use std::sync::Arc;

use fpmc::constructors::{build_pspc_square, ScheduleTable};
use fpmc::dataset::Dataset;
use fpmc::geometry::ImageGeometry;
use fpmc::schedule::DiffusionSchedule;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use fpmc_ffi::*;

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn toy_dataset(n: usize, g: ImageGeometry, seed: u64) -> Arc<Dataset> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let images = Array2::from_shape_fn((n, g.dim()), |_| rng.gen_range(-1.0..1.0));
    Dataset::new(g, images).unwrap().shared()
}

fn last_error() -> String {
    let mut buf = vec![0i8; 512];
    let n = unsafe { fpmc_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n].iter().map(|&b| b as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn version_is_nul_terminated_semver() {
    let v = unsafe { std::ffi::CStr::from_ptr(fpmc_version()) };
    assert!(v.to_str().unwrap().split('.').count() >= 2);
}

#[test]
fn dataset_lifecycle_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let g = ImageGeometry::new(2, 2, 1).unwrap();
    let ds = toy_dataset(5, g, 1);
    let path = dir.path().join("data.bin");
    ds.save(&path).unwrap();

    let mut handle: *mut FpmcDataset = std::ptr::null_mut();
    let status = unsafe { fpmc_dataset_load(c_path(&path).as_ptr(), &mut handle) };
    assert_eq!(status, FpmcStatus::Ok);
    unsafe {
        assert_eq!(fpmc_dataset_len(handle), 5);
        assert_eq!(fpmc_dataset_dim(handle), 4);
        fpmc_dataset_free(handle);
    }

    // Missing file: IO error plus a retrievable message.
    let mut bad: *mut FpmcDataset = std::ptr::null_mut();
    let missing = c_path(&dir.path().join("missing.bin"));
    let status = unsafe { fpmc_dataset_load(missing.as_ptr(), &mut bad) };
    assert_eq!(status, FpmcStatus::IoError);
    assert!(!last_error().is_empty());

    // Null out-pointer.
    let status = unsafe { fpmc_dataset_load(missing.as_ptr(), std::ptr::null_mut()) };
    assert_eq!(status, FpmcStatus::NullPointer);
}

#[test]
fn model_denoise_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let g = ImageGeometry::new(4, 4, 1).unwrap();
    let ds = toy_dataset(6, g, 2);
    let sched = DiffusionSchedule::new(vec![1.8, 0.4]).unwrap();
    let table = ScheduleTable::from_patch_sizes(&sched, &[3, 3]).unwrap();
    let model = build_pspc_square(&table, &ds, &sched).unwrap();
    let model_dir = dir.path().join("model");
    model.save(&model_dir).unwrap();

    let mut handle: *mut FpmcModelHandle = std::ptr::null_mut();
    let status = unsafe { fpmc_model_load(c_path(&model_dir).as_ptr(), &mut handle) };
    assert_eq!(status, FpmcStatus::Ok);
    unsafe {
        assert_eq!(fpmc_model_num_steps(handle), 2);
        assert_eq!(fpmc_model_dim(handle), 16);
        assert_eq!(fpmc_model_step_t(handle, 0), 1.8);
        assert!(fpmc_model_step_t(handle, 9).is_nan());
    }

    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let zs = Array2::from_shape_fn((3, 16), |_| rng.gen_range(-1.5..1.5));
    let mut out = vec![0.0f64; 3 * 16];
    let status = unsafe {
        fpmc_model_denoise(handle, 1, zs.as_ptr(), 3, 16, out.as_mut_ptr())
    };
    assert_eq!(status, FpmcStatus::Ok);
    let expect = model.denoise_at_step(zs.view(), 1).unwrap();
    for (a, b) in out.iter().zip(expect.iter()) {
        assert_eq!(a, b);
    }

    // Wrong dimension is a validation error.
    let status = unsafe {
        fpmc_model_denoise(handle, 1, zs.as_ptr(), 3, 15, out.as_mut_ptr())
    };
    assert_eq!(status, FpmcStatus::ValidationError);
    assert!(last_error().contains("dimension"));

    unsafe { fpmc_model_free(handle) };
}

#[test]
fn model_sampling_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let g = ImageGeometry::new(2, 2, 1).unwrap();
    let ds = toy_dataset(8, g, 4);
    let sched = DiffusionSchedule::edm(5, 0.05, 10.0, 7.0).unwrap();
    let table = ScheduleTable::from_patch_sizes(&sched, &[3, 3, 3, 1, 1]).unwrap();
    let model = build_pspc_square(&table, &ds, &sched).unwrap();
    let model_dir = dir.path().join("model");
    model.save(&model_dir).unwrap();

    let mut handle: *mut FpmcModelHandle = std::ptr::null_mut();
    assert_eq!(
        unsafe { fpmc_model_load(c_path(&model_dir).as_ptr(), &mut handle) },
        FpmcStatus::Ok
    );
    let mut a = vec![0.0f64; 4 * 4];
    let mut b = vec![0.0f64; 4 * 4];
    unsafe {
        assert_eq!(fpmc_model_sample(handle, 4, 99, a.as_mut_ptr()), FpmcStatus::Ok);
        assert_eq!(fpmc_model_sample(handle, 4, 99, b.as_mut_ptr()), FpmcStatus::Ok);
        fpmc_model_free(handle);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn wiener_fit_and_denoise_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let g = ImageGeometry::new(3, 1, 1).unwrap();
    let ds = toy_dataset(30, g, 5);
    let path = dir.path().join("data.bin");
    ds.save(&path).unwrap();

    let mut data: *mut FpmcDataset = std::ptr::null_mut();
    assert_eq!(
        unsafe { fpmc_dataset_load(c_path(&path).as_ptr(), &mut data) },
        FpmcStatus::Ok
    );
    let mut wiener: *mut FpmcWienerHandle = std::ptr::null_mut();
    assert_eq!(unsafe { fpmc_wiener_fit(data, &mut wiener) }, FpmcStatus::Ok);

    let zs = [0.2f64, -0.4, 0.9];
    let mut out = [0.0f64; 3];
    assert_eq!(
        unsafe { fpmc_wiener_denoise(wiener, 0.7, zs.as_ptr(), 1, 3, out.as_mut_ptr()) },
        FpmcStatus::Ok
    );
    let sched = DiffusionSchedule::new(vec![0.7]).unwrap();
    let model = fpmc::classical::fit_wiener(&ds).unwrap();
    let expect = fpmc::classical::wiener_denoise(
        ndarray::ArrayView1::from(&zs),
        0.7,
        &model,
        &sched,
    )
    .unwrap();
    for (a, b) in out.iter().zip(expect.iter()) {
        assert!((a - b).abs() < 1e-12);
    }

    // Optimal denoiser free function.
    let mut opt = [0.0f64; 3];
    assert_eq!(
        unsafe { fpmc_optimal_denoise(data, 0.7, zs.as_ptr(), 1, 3, opt.as_mut_ptr()) },
        FpmcStatus::Ok
    );
    let direct =
        fpmc::classical::optimal_denoiser(ndarray::ArrayView1::from(&zs), 0.7, &ds, &sched)
            .unwrap();
    for (a, b) in opt.iter().zip(direct.iter()) {
        assert_eq!(a, b);
    }

    unsafe {
        fpmc_wiener_free(wiener);
        fpmc_dataset_free(data);
    }
}

#[test]
fn grid_fill_and_errors() {
    let mut grid = vec![0.0f64; 18];
    assert_eq!(
        unsafe { fpmc_edm_time_grid(18, 0.002, 80.0, 7.0, grid.as_mut_ptr()) },
        FpmcStatus::Ok
    );
    assert_eq!(grid[0], 80.0);
    assert_eq!(grid[17], 0.002);
    assert_eq!(
        unsafe { fpmc_edm_time_grid(1, 0.002, 80.0, 7.0, grid.as_mut_ptr()) },
        FpmcStatus::ValidationError
    );
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fpmc.h");
    let text = std::fs::read_to_string(header).expect("header generated at build time");
    for symbol in [
        "fpmc_version",
        "fpmc_last_error_message",
        "fpmc_dataset_load",
        "fpmc_dataset_free",
        "fpmc_model_load",
        "fpmc_model_denoise",
        "fpmc_model_sample",
        "fpmc_model_free",
        "fpmc_wiener_fit",
        "fpmc_wiener_denoise",
        "fpmc_wiener_free",
        "fpmc_edm_time_grid",
        "fpmc_optimal_denoise",
        "FPMC_STATUS_OK",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}
