use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use taan::apl::BasisGrid;
use taan::metrics::{build_gram, distance_sq, inner_product, GaussianMixture};
use taan::network::{ArchSpec, TaanModel};
use taan::Matrix;
use taan_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(taan_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn saved_model(dir: &Path) -> (TaanModel, CString) {
    let model = TaanModel::build(ArchSpec::new(3, vec![5, 4], vec![2, 1], 8), 11).unwrap();
    let path = dir.join("model.json");
    model.save_checkpoint(&path).unwrap();
    (model, CString::new(path.to_str().unwrap()).unwrap())
}

#[test]
fn model_roundtrip_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(taan_model_load(path.as_ptr(), &mut h), TaanStatus::Ok);
        assert!(!h.is_null());
        let mut n = 0usize;
        assert_eq!(taan_model_task_count(h, &mut n), TaanStatus::Ok);
        assert_eq!(n, 2);
        assert_eq!(taan_model_input_dim(h, &mut n), TaanStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(taan_model_output_dim(h, 0, &mut n), TaanStatus::Ok);
        assert_eq!(n, 2);

        let x = [0.3, -1.0, 2.0, 0.5, 0.5, -0.25];
        let mut y = [0.0; 4];
        assert_eq!(taan_model_forward(h, 0, x.as_ptr(), 2, 3, y.as_mut_ptr(), 4), TaanStatus::Ok);
        let expected = model.predict(0, &Matrix::from_vec(2, 3, x.to_vec()).unwrap()).unwrap();
        assert_eq!(&y[..], expected.as_slice());
        taan_model_free(h);
    }
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let mut h = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        assert_eq!(taan_model_load(missing.as_ptr(), &mut h), TaanStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("nope.json"));

        let junk = dir.path().join("junk.json");
        std::fs::write(&junk, "{ not json").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(taan_model_load(junk.as_ptr(), &mut h), TaanStatus::Parse);

        assert_eq!(taan_model_load(ptr::null(), &mut h), TaanStatus::NullPointer);
        assert_eq!(taan_model_load(path.as_ptr(), ptr::null_mut()), TaanStatus::NullPointer);

        assert_eq!(taan_model_load(path.as_ptr(), &mut h), TaanStatus::Ok);
        assert_eq!(last_error(), "");
        let mut n = 0usize;
        assert_eq!(taan_model_output_dim(h, 7, &mut n), TaanStatus::UnknownTask);
        let x = [0.0; 6];
        let mut y = [0.0; 4];
        assert_eq!(taan_model_forward(h, 5, x.as_ptr(), 2, 3, y.as_mut_ptr(), 4), TaanStatus::UnknownTask);
        assert_eq!(taan_model_forward(h, 0, x.as_ptr(), 3, 2, y.as_mut_ptr(), 4), TaanStatus::Shape);
        assert_eq!(taan_model_forward(h, 0, x.as_ptr(), 2, 3, y.as_mut_ptr(), 3), TaanStatus::Shape);
        assert_eq!(taan_model_forward(h, 0, ptr::null(), 2, 3, y.as_mut_ptr(), 4), TaanStatus::NullPointer);
        assert_eq!(taan_model_task_count(ptr::null(), &mut n), TaanStatus::NullPointer);
        taan_model_free(h);
        taan_model_free(ptr::null_mut());
    }
}

#[test]
fn gram_functions_match_library() {
    let grid = BasisGrid::uniform(6, -2.0, 2.0).unwrap();
    let cache = build_gram(&grid, &GaussianMixture::standard_normal());
    let c1 = [0.2, -0.1, 0.4, 0.0, 0.3, -0.5];
    let c2 = [0.1, 0.1, -0.2, 0.6, 0.0, 0.2];
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(taan_gram_new_uniform(6, -2.0, 2.0, &mut g), TaanStatus::Ok);
        let mut m = 0usize;
        assert_eq!(taan_gram_basis_count(g, &mut m), TaanStatus::Ok);
        assert_eq!(m, 6);
        let mut v = 0.0;
        assert_eq!(taan_inner_product(g, c1.as_ptr(), c2.as_ptr(), 6, &mut v), TaanStatus::Ok);
        assert_eq!(v, inner_product(&c1, &c2, &cache).unwrap());
        assert_eq!(taan_distance_sq(g, c1.as_ptr(), c2.as_ptr(), 6, &mut v), TaanStatus::Ok);
        assert_eq!(v, distance_sq(&c1, &c2, &cache).unwrap());
        assert_eq!(taan_distance_sq(g, c1.as_ptr(), c2.as_ptr(), 5, &mut v), TaanStatus::Shape);

        let alpha: Vec<f64> = c1.iter().chain(&c2).chain(&c1).copied().collect();
        let mut d = [f64::NAN; 9];
        assert_eq!(taan_distance_matrix(g, alpha.as_ptr(), 3, 6, d.as_mut_ptr()), TaanStatus::Ok);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[1], d[3]);
        assert_eq!(d[1], distance_sq(&c1, &c2, &cache).unwrap());

        assert_eq!(taan_gram_new_uniform(0, -2.0, 2.0, &mut g), TaanStatus::InvalidArgument);
        let mut other = ptr::null_mut();
        assert_eq!(taan_gram_new_uniform(4, 2.0, -2.0, &mut other), TaanStatus::InvalidArgument);
        assert!(other.is_null());
        taan_gram_free(g);
    }
}

#[test]
fn model_gram_uses_model_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = saved_model(dir.path());
    let mut h = ptr::null_mut();
    let mut g = ptr::null_mut();
    unsafe {
        assert_eq!(taan_model_load(path.as_ptr(), &mut h), TaanStatus::Ok);
        assert_eq!(taan_model_gram(h, &mut g), TaanStatus::Ok);
        let alpha = model.layers()[0].coords.matrix().as_slice();
        let mut d = [0.0; 4];
        assert_eq!(taan_distance_matrix(g, alpha.as_ptr(), 2, 8, d.as_mut_ptr()), TaanStatus::Ok);
        let cache = build_gram(model.grid(), model.mixture());
        let expected = taan::metrics::distance_matrix(&model.layers()[0].coords, &cache).unwrap();
        assert_eq!(&d[..], expected.as_slice());
        taan_gram_free(g);
        taan_model_free(h);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/taan.h")).unwrap();
    for name in [
        "taan_last_error_message",
        "taan_model_load",
        "taan_model_free",
        "taan_model_task_count",
        "taan_model_input_dim",
        "taan_model_output_dim",
        "taan_model_forward",
        "taan_model_gram",
        "taan_gram_new_uniform",
        "taan_gram_free",
        "taan_gram_basis_count",
        "taan_inner_product",
        "taan_distance_sq",
        "taan_distance_matrix",
        "TAAN_STATUS_OK",
        "typedef struct TaanModelHandle TaanModelHandle",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/taan.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
