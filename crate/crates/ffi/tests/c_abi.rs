use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use dcf_ffi::*;

fn sample(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..2 * n).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    let y = x.chunks(2).map(|r| r[0].abs() + r[1] * r[1]).collect();
    (x, y)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dcf_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn fit_predict_save_load_round_trip() {
    let (x, y) = sample(150);
    let mut model = ptr::null_mut();
    let st = unsafe { dcf_fit(x.as_ptr(), y.as_ptr(), 150, 2, ptr::null(), ptr::null(), ptr::null(), 3, &mut model) };
    assert_eq!(st, DcfStatus::Ok, "{}", last_error());
    assert!(!model.is_null());

    let mut dim = 0;
    let mut pieces = [0usize; 2];
    let mut params = 0;
    let mut lip = 0.0;
    unsafe {
        assert_eq!(dcf_model_dim(model, &mut dim), DcfStatus::Ok);
        assert_eq!(dcf_model_num_pieces(model, pieces.as_mut_ptr()), DcfStatus::Ok);
        assert_eq!(dcf_model_num_params(model, &mut params), DcfStatus::Ok);
        assert_eq!(dcf_model_lip_stat(model, &mut lip), DcfStatus::Ok);
    }
    assert_eq!(dim, 2);
    // symmetric default: two components
    assert!(pieces[0] >= 1 && pieces[1] >= 1);
    assert!(params > 0 && lip.is_finite());

    let mut pred = vec![0.0; 150];
    assert_eq!(unsafe { dcf_model_predict(model, x.as_ptr(), 150, 2, pred.as_mut_ptr()) }, DcfStatus::Ok);
    let mse = pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 150.0;
    assert!(mse < 0.05, "train mse {mse}");

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dcf_model_save(model, path.as_ptr()) }, DcfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { dcf_model_load(path.as_ptr(), &mut back) }, DcfStatus::Ok);
    let mut pred2 = vec![0.0; 150];
    assert_eq!(unsafe { dcf_model_predict(back, x.as_ptr(), 150, 2, pred2.as_mut_ptr()) }, DcfStatus::Ok);
    assert_eq!(pred, pred2);
    unsafe {
        dcf_model_free(model);
        dcf_model_free(back);
    }
}

#[test]
fn named_variant_and_kind() {
    let (x, y) = sample(80);
    let (v, k, t) = (CString::new("convex_norm").unwrap(), CString::new("l2").unwrap(), CString::new("weak").unwrap());
    let mut model = ptr::null_mut();
    let st = unsafe { dcf_fit(x.as_ptr(), y.as_ptr(), 80, 2, v.as_ptr(), k.as_ptr(), t.as_ptr(), 0, &mut model) };
    assert_eq!(st, DcfStatus::Ok, "{}", last_error());
    let mut pieces = [9usize; 2];
    unsafe { dcf_model_num_pieces(model, pieces.as_mut_ptr()) };
    assert_eq!(pieces[1], 0);
    unsafe { dcf_model_free(model) };
}

#[test]
fn errors_map_to_status_codes() {
    let (x, y) = sample(20);
    let mut model = ptr::null_mut();
    let bad = CString::new("bogus").unwrap();
    unsafe {
        assert_eq!(
            dcf_fit(x.as_ptr(), y.as_ptr(), 20, 2, bad.as_ptr(), ptr::null(), ptr::null(), 0, &mut model),
            DcfStatus::InvalidArgument
        );
        assert!(model.is_null());
        assert!(last_error().contains("bogus"));
        assert_eq!(
            dcf_fit(ptr::null(), y.as_ptr(), 20, 2, ptr::null(), ptr::null(), ptr::null(), 0, &mut model),
            DcfStatus::NullPointer
        );
        assert_eq!(
            dcf_fit(x.as_ptr(), y.as_ptr(), 0, 2, ptr::null(), ptr::null(), ptr::null(), 0, &mut model),
            DcfStatus::EmptyDataset
        );
        assert_eq!(dcf_model_dim(ptr::null(), &mut 0), DcfStatus::NullPointer);

        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(dcf_model_load(missing.as_ptr(), &mut model), DcfStatus::IoError);
        let dir = tempfile::tempdir().unwrap();
        let garbage = dir.path().join("g.json");
        std::fs::write(&garbage, "{\"format_version\": 99}").unwrap();
        let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
        assert_eq!(dcf_model_load(garbage.as_ptr(), &mut model), DcfStatus::FormatError);

        assert_eq!(
            dcf_fit(x.as_ptr(), y.as_ptr(), 20, 2, ptr::null(), ptr::null(), ptr::null(), 0, &mut model),
            DcfStatus::Ok
        );
        let mut out = [0.0; 20];
        assert_eq!(dcf_model_predict(model, x.as_ptr(), 10, 4, out.as_mut_ptr()), DcfStatus::DimensionMismatch);
        assert_eq!(dcf_model_predict(model, x.as_ptr(), 20, 2, out.as_mut_ptr()), DcfStatus::Ok);
        assert_eq!(last_error(), "");
        dcf_model_free(model);
        dcf_model_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(dcf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dcf.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in
        ["dcf_fit", "dcf_model_predict", "dcf_model_free", "DCF_STATUS_PANIC", "typedef struct DcfModel DcfModel"]
    {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"dcf.h\"\nint main(void) { DcfModel *m = 0; size_t p[2]; \
         DcfStatus s = dcf_model_num_pieces(m, p); dcf_model_free(m); return s == DCF_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    for (compiler, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let status = Command::new(compiler)
            .args(extra)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I", include])
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available; skipping"),
        }
    }
}
