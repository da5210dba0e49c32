use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use snip::data::{write_idx, Dataset};
use snip::rng::Rng;
use snip::tensor::Tensor;
use snip_ffi::*;

fn cs(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(snip_last_error()) }.to_string_lossy().into_owned()
}

/// Random 28×28 images with labels 0..9, written as an IDX pair.
fn fake_idx(dir: &Path, n: usize) -> (CString, CString) {
    let mut rng = Rng::new(3);
    let pixels: Vec<f32> = (0..n * 784).map(|_| rng.uniform() as f32).collect();
    let d = Dataset::from_parts(Tensor::new(&[n, 1, 28, 28], pixels).unwrap(), (0..n).map(|i| (i % 10) as u8).collect()).unwrap();
    let (i, l) = (dir.join("img"), dir.join("lbl"));
    write_idx(&d, &i, &l).unwrap();
    (cs(i.to_str().unwrap()), cs(l.to_str().unwrap()))
}

#[test]
fn prune_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, lbls) = fake_idx(dir.path(), 120);
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(snip_dataset_load(imgs.as_ptr(), lbls.as_ptr(), &mut ds), SnipStatus::Ok);
        let mut n = 0;
        assert_eq!(snip_dataset_len(ds, &mut n), SnipStatus::Ok);
        assert_eq!(n, 120);

        let mut m = ptr::null_mut();
        assert_eq!(snip_model_new(cs("lenet300").as_ptr(), cs("vsx").as_ptr(), 1, &mut m), SnipStatus::Ok);
        let mut kept = 0;
        assert_eq!(snip_prune(m, ds, cs("snip").as_ptr(), 90.0, 100, 2, &mut kept), SnipStatus::Ok);
        assert_eq!(kept, 26_620);
        let (mut total, mut prunable, mut retained) = (0, 0, 0);
        assert_eq!(snip_model_counts(m, &mut total, &mut prunable, &mut retained), SnipStatus::Ok);
        assert_eq!((total, prunable, retained), (266_610, 266_200, 26_620));

        let mut masks = vec![7u8; prunable as usize];
        assert_eq!(snip_model_masks(m, masks.as_mut_ptr(), masks.len()), SnipStatus::Ok);
        assert_eq!(masks.iter().map(|&b| b as u64).sum::<u64>(), 26_620);
        assert_eq!(snip_model_masks(m, masks.as_mut_ptr(), 3), SnipStatus::Shape);

        let path = cs(dir.path().join("m.stf").to_str().unwrap());
        assert_eq!(snip_model_save(m, path.as_ptr()), SnipStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(snip_model_load(path.as_ptr(), &mut back), SnipStatus::Ok);
        let mut again = vec![0u8; masks.len()];
        assert_eq!(snip_model_masks(back, again.as_mut_ptr(), again.len()), SnipStatus::Ok);
        assert_eq!(again, masks);

        let mut err = -1.0;
        assert_eq!(snip_train(back, ds, ds, 20, 4, &mut err), SnipStatus::Ok);
        assert!((0.0..=100.0).contains(&err));
        assert_eq!(snip_evaluate(back, ds, &mut err), SnipStatus::Ok);

        // a trained model is no longer at initialization
        assert_eq!(snip_prune(back, ds, cs("snip").as_ptr(), 50.0, 10, 2, ptr::null_mut()), SnipStatus::State);
        snip_model_free(back);
        snip_model_free(m);
        snip_dataset_free(ds);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(snip_model_new(cs("alexnet").as_ptr(), cs("vsx").as_ptr(), 0, &mut m), SnipStatus::Config);
        assert!(last_error().contains("alexnet"));
        assert_eq!(snip_model_new(ptr::null(), cs("vsx").as_ptr(), 0, &mut m), SnipStatus::NullArgument);
        assert_eq!(snip_model_new(cs("lenet300").as_ptr(), cs("vsx").as_ptr(), 0, ptr::null_mut()), SnipStatus::NullArgument);
        let mut ds = ptr::null_mut();
        assert_eq!(snip_dataset_load(cs("/nonexistent/a").as_ptr(), cs("/nonexistent/b").as_ptr(), &mut ds), SnipStatus::Data);
        assert!(ds.is_null());
        assert_eq!(snip_model_load(cs("/nonexistent.stf").as_ptr(), &mut m), SnipStatus::Data);
        snip_model_free(ptr::null_mut());
        snip_dataset_free(ptr::null_mut());

        assert_eq!(snip_model_new(cs("lenet300").as_ptr(), cs("vsh").as_ptr(), 0, &mut m), SnipStatus::Ok);
        assert_eq!(last_error(), "");
        let mut n = 0;
        assert_eq!(snip_dataset_len(ptr::null(), &mut n), SnipStatus::NullArgument);
        snip_model_free(m);
        assert!(!CStr::from_ptr(snip_version()).to_bytes().is_empty());
    }
}

#[test]
fn cli_entry_point_returns_exit_codes() {
    let args = [cs("snip"), cs("frobnicate")];
    let argv: Vec<_> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { snip_cli_run(argv.len() as i32, argv.as_ptr()) }, 2);
    assert_eq!(unsafe { snip_cli_run(1, ptr::null()) }, 2);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/snip.h")).unwrap();
    for f in [
        "snip_last_error", "snip_version", "snip_model_new", "snip_model_load", "snip_model_save", "snip_model_free",
        "snip_model_counts", "snip_model_masks", "snip_dataset_load", "snip_dataset_len", "snip_dataset_free", "snip_prune",
        "snip_train", "snip_evaluate", "snip_cli_run",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("SNIP_STATUS_NUMERICS = 4"));
}

/// Compiles a C program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Some(lib_dir) = std::env::current_exe().ok().and_then(|p| p.parent()?.parent().map(Path::to_path_buf)) else {
        return;
    };
    let lib = lib_dir.join("libsnip_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library at {} or no C compiler", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "snip.h"
int main(void) {
    SnipModel *m = NULL;
    if (snip_model_new("lenet5caffe", "vsx", 1, &m) != SNIP_STATUS_OK) return 1;
    uint64_t total, prunable, retained;
    if (snip_model_counts(m, &total, &prunable, &retained) != SNIP_STATUS_OK) return 2;
    snip_model_free(m);
    if (snip_model_new("nope", "vsx", 1, &m) != SNIP_STATUS_CONFIG) return 3;
    printf("%llu %llu %s\n", (unsigned long long)total, (unsigned long long)prunable, snip_last_error()[0] ? "err" : "none");
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "431080 430500 err");
}
