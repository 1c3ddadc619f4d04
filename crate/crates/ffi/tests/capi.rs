use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dualstudent_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ds_last_error()) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { ds_string_free(p) };
    s
}

fn small_config() -> *mut DsConfig {
    let cfg = ds_config_default();
    for set in [
        "train.epochs=2",
        "train.method=\"dual_student\"",
        "data.n_train=64",
        "data.n_test=50",
        "model.hidden=[8]",
    ] {
        let s = CString::new(set).unwrap();
        assert_eq!(unsafe { ds_config_set(cfg, s.as_ptr()) }, DsStatus::Ok, "{set}: {}", last_error());
    }
    cfg
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ds_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small_config();
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { ds_config_to_toml(cfg, &mut text) }, DsStatus::Ok);
    let text = take_string(text);
    assert!(text.contains("epochs = 2"), "{text}");

    let c = CString::new(text.clone()).unwrap();
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ds_config_from_toml(c.as_ptr(), &mut back) }, DsStatus::Ok);
    let mut again = ptr::null_mut();
    assert_eq!(unsafe { ds_config_to_toml(back, &mut again) }, DsStatus::Ok);
    assert_eq!(take_string(again), text);
    unsafe {
        ds_config_free(back);
        ds_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let cfg = ds_config_default();
    let bad = CString::new("train.no_such_key=1").unwrap();
    assert_eq!(unsafe { ds_config_set(cfg, bad.as_ptr()) }, DsStatus::Config);
    assert!(last_error().contains("no_such_key"), "{}", last_error());

    let xi = CString::new("train.xi=1.5").unwrap();
    assert_eq!(unsafe { ds_config_set(cfg, xi.as_ptr()) }, DsStatus::Ok);
    assert!(last_error().is_empty());
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ds_train(cfg, &mut run) }, DsStatus::Config);
    assert!(run.is_null());

    assert_eq!(unsafe { ds_config_set(ptr::null_mut(), xi.as_ptr()) }, DsStatus::NullPointer);
    assert_eq!(unsafe { ds_config_set(cfg, ptr::null()) }, DsStatus::NullPointer);

    let not_utf8 = [0xffu8, 0xfe, 0];
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ds_config_from_toml(not_utf8.as_ptr().cast(), &mut out) }, DsStatus::Utf8);
    let bad_toml = CString::new("[train\nepochs = ").unwrap();
    assert_eq!(unsafe { ds_config_from_toml(bad_toml.as_ptr(), &mut out) }, DsStatus::Config);
    assert!(out.is_null());
    unsafe { ds_config_free(cfg) };
}

#[test]
fn failed_set_leaves_config_unchanged() {
    let cfg = small_config();
    let mut before = ptr::null_mut();
    unsafe { ds_config_to_toml(cfg, &mut before) };
    let bad = CString::new("train.epochs=\"many\"").unwrap();
    assert_eq!(unsafe { ds_config_set(cfg, bad.as_ptr()) }, DsStatus::Config);
    let mut after = ptr::null_mut();
    unsafe { ds_config_to_toml(cfg, &mut after) };
    assert_eq!(take_string(before), take_string(after));
    unsafe { ds_config_free(cfg) };
}

#[test]
fn train_and_read_metrics() {
    let cfg = small_config();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { ds_train(cfg, &mut run) }, DsStatus::Ok, "{}", last_error());
    let mut acc = f64::NAN;
    assert_eq!(unsafe { ds_run_final_accuracy(run, &mut acc) }, DsStatus::Ok);
    assert!((0.0..=1.0).contains(&acc));

    let mut n = 0usize;
    assert_eq!(unsafe { ds_run_metric_count(run, &mut n) }, DsStatus::Ok);
    let mut csv = ptr::null_mut();
    assert_eq!(unsafe { ds_run_metrics_csv(run, &mut csv) }, DsStatus::Ok);
    let csv = take_string(csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "run_id,method,seed,epoch,metric,value");
    assert_eq!(lines.len(), n + 1);
    let last_acc = lines
        .iter()
        .rev()
        .find(|l| l.split(',').nth(4) == Some("test_acc"))
        .unwrap();
    let v: f64 = last_acc.rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(v, acc);

    assert_eq!(unsafe { ds_run_final_accuracy(ptr::null(), &mut acc) }, DsStatus::NullPointer);
    assert_eq!(unsafe { ds_run_final_accuracy(run, ptr::null_mut()) }, DsStatus::NullPointer);
    unsafe {
        ds_run_free(run);
        ds_config_free(cfg);
        ds_run_free(ptr::null_mut());
        ds_config_free(ptr::null_mut());
        ds_string_free(ptr::null_mut());
    }
}

#[test]
fn stability_primitives() {
    let px = [0.9, 0.1];
    let pxb = [0.6, 0.4];
    let mut flag = false;
    assert_eq!(unsafe { ds_stable_flag(px.as_ptr(), pxb.as_ptr(), 2, 0.8, &mut flag) }, DsStatus::Ok);
    assert!(flag);
    assert_eq!(unsafe { ds_stable_flag(px.as_ptr(), pxb.as_ptr(), 2, 0.95, &mut flag) }, DsStatus::Ok);
    assert!(!flag);
    let flipped = [0.3, 0.7];
    assert_eq!(unsafe { ds_stable_flag(px.as_ptr(), flipped.as_ptr(), 2, 0.0, &mut flag) }, DsStatus::Ok);
    assert!(!flag);

    let mut e = 0.0;
    assert_eq!(unsafe { ds_stability_score(px.as_ptr(), pxb.as_ptr(), 2, &mut e) }, DsStatus::Ok);
    // (0.3)^2 + (0.3)^2
    assert!((e - 0.18).abs() < 1e-12);
    assert_eq!(unsafe { ds_stability_score(px.as_ptr(), pxb.as_ptr(), 0, &mut e) }, DsStatus::Input);
    assert_eq!(unsafe { ds_stability_score(ptr::null(), pxb.as_ptr(), 2, &mut e) }, DsStatus::NullPointer);
}

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dualstudent.h");
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for f in exports {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    for (name, code) in [("DS_STATUS_OK", 0), ("DS_STATUS_NUMERIC", 2), ("DS_STATUS_PANIC", 9)] {
        assert!(h.contains(&format!("{name} = {code}")), "{name}");
    }
    assert!(h.contains("typedef struct DsConfig DsConfig;"));
    assert!(h.contains("typedef struct DsRun DsRun;"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&dir)
            .arg(dir.join("dualstudent.h"))
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}

const C_CLIENT: &str = r#"
#include <stdio.h>
#include <string.h>
#include "dualstudent.h"

int main(void) {
    DsConfig *cfg = ds_config_default();
    if (ds_config_set(cfg, "train.epochs=1") != DS_STATUS_OK) return 10;
    if (ds_config_set(cfg, "data.n_train=40") != DS_STATUS_OK) return 11;
    if (ds_config_set(cfg, "train.bogus=1") != DS_STATUS_CONFIG) return 12;
    if (strlen(ds_last_error()) == 0) return 13;
    DsRun *run = NULL;
    if (ds_train(cfg, &run) != DS_STATUS_OK) { fprintf(stderr, "%s\n", ds_last_error()); return 14; }
    double acc = -1.0;
    if (ds_run_final_accuracy(run, &acc) != DS_STATUS_OK || acc < 0.0 || acc > 1.0) return 15;
    double a[2] = {0.9, 0.1}, b[2] = {0.8, 0.2};
    bool stable = false;
    if (ds_stable_flag(a, b, 2, 0.85, &stable) != DS_STATUS_OK || !stable) return 16;
    printf("%s %.4f\n", ds_version(), acc);
    ds_run_free(run);
    ds_config_free(cfg);
    return 0;
}
"#;

#[test]
fn c_client_links_against_shared_library() {
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    let so = profile_dir.join("libdualstudent_ffi.so");
    if !so.exists() {
        eprintln!("skipping: {} not built", so.display());
        return;
    }
    let work = std::env::temp_dir().join(format!("ds_capi_{}", std::process::id()));
    std::fs::create_dir_all(&work).unwrap();
    let src = work.join("client.c");
    std::fs::write(&src, C_CLIENT).unwrap();
    let bin = work.join("client");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let built = match Command::new("cc")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(&profile_dir)
        .arg("-ldualstudent_ffi")
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    };
    assert!(built.success(), "C client failed to compile");
    let out = Command::new(&bin).env("LD_LIBRARY_PATH", &profile_dir).output().unwrap();
    assert!(
        out.status.success(),
        "client exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with(env!("CARGO_PKG_VERSION")), "{stdout}");
    let _ = std::fs::remove_dir_all(&work);
}
