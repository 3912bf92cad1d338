use std::ffi::{CStr, CString};
use std::ptr;

use rkmoe_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rk_last_error()) }.to_string_lossy().into_owned()
}

fn scene(seed: u64) -> *mut RkScene {
    let freqs = [2.4e9, 5.8e9];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { rk_scene_generate(16, 16, freqs.as_ptr(), 2, seed, &mut s) }, RkStatus::Ok);
    s
}

fn band(map: *const RkMap, b: usize) -> Vec<f64> {
    let mut buf = vec![0.0; 256];
    assert_eq!(unsafe { rk_map_copy_band(map, b, buf.as_mut_ptr(), buf.len()) }, RkStatus::Ok);
    buf
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(rk_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn scene_dims_truth_and_round_trip() {
    let s = scene(3);
    let (mut h, mut w, mut b) = (0, 0, 0);
    assert_eq!(unsafe { rk_scene_dims(s, &mut h, &mut w, &mut b) }, RkStatus::Ok);
    assert_eq!((h, w, b), (16, 16, 2));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.rkm").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rk_scene_save(s, path.as_ptr()) }, RkStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { rk_scene_load(path.as_ptr(), &mut back) }, RkStatus::Ok);

    let (mut t1, mut t2) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(rk_scene_truth(s, &mut t1), RkStatus::Ok);
        assert_eq!(rk_scene_truth(back, &mut t2), RkStatus::Ok);
    }
    assert_eq!(band(t1, 1), band(t2, 1));
    let (mut nmse, mut mse) = (1.0, 1.0);
    assert_eq!(unsafe { rk_metrics(t1, t2, &mut nmse, &mut mse) }, RkStatus::Ok);
    assert_eq!((nmse, mse), (0.0, 0.0));
    unsafe {
        rk_map_free(t1);
        rk_map_free(t2);
        rk_scene_free(back);
        rk_scene_free(s);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut s = ptr::null_mut();
    let freqs = [1e9];
    let st = unsafe { rk_scene_generate(4, 4, freqs.as_ptr(), 1, 0, &mut s) };
    assert_eq!(st, RkStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { rk_scene_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, RkStatus::NullPointer);
    assert!(last_error().contains("scene"));

    let missing = CString::new("/nonexistent/dir/x.rkm").unwrap();
    assert_eq!(unsafe { rk_scene_load(missing.as_ptr(), &mut s) }, RkStatus::Io);

    let sc = scene(1);
    let mut obs = ptr::null_mut();
    assert_eq!(unsafe { rk_observations_sample(sc, 0.9, 0, &mut obs) }, RkStatus::InvalidArgument);
    let mut truth = ptr::null_mut();
    unsafe { rk_scene_truth(sc, &mut truth) };
    let mut small = [0.0; 10];
    assert_eq!(unsafe { rk_map_copy_band(truth, 0, small.as_mut_ptr(), small.len()) }, RkStatus::Shape);
    assert_eq!(unsafe { rk_map_copy_band(truth, 5, small.as_mut_ptr(), small.len()) }, RkStatus::InvalidArgument);
    unsafe {
        rk_map_free(truth);
        rk_scene_free(sc);
        // Freeing null is a no-op.
        rk_scene_free(ptr::null_mut());
    }
}

#[test]
fn untrained_refiner_estimate_equals_coarse_prior() {
    let s = scene(7);
    let mut obs = ptr::null_mut();
    assert_eq!(unsafe { rk_observations_sample(s, 0.05, 1, &mut obs) }, RkStatus::Ok);
    assert_eq!(unsafe { rk_observations_count(obs) }, 13);

    let mut kan = ptr::null_mut();
    let mut coarse = ptr::null_mut();
    let mut est = ptr::null_mut();
    unsafe {
        assert_eq!(rk_kan_fit(s, obs, 0, 5, &mut kan), RkStatus::Ok);
        assert_eq!(rk_kan_coarse(kan, s, &mut coarse), RkStatus::Ok);
        assert_eq!(rk_estimate(s, obs, ptr::null(), 5, &mut est), RkStatus::Ok);
    }
    for b in 0..2 {
        assert_eq!(band(coarse, b), band(est, b));
    }

    let mut idw = ptr::null_mut();
    let mut truth = ptr::null_mut();
    unsafe {
        assert_eq!(rk_idw(obs, &mut idw), RkStatus::Ok);
        assert_eq!(rk_scene_truth(s, &mut truth), RkStatus::Ok);
    }
    let (mut nmse, mut mse) = (0.0, 0.0);
    assert_eq!(unsafe { rk_metrics(est, truth, &mut nmse, &mut mse) }, RkStatus::Ok);
    assert!(nmse.is_finite() && mse >= 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("k.rkck").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rk_kan_save(kan, path.as_ptr()) }, RkStatus::Ok);
    assert!(dir.path().join("k.rkck").exists());
    unsafe {
        rk_map_free(idw);
        rk_map_free(truth);
        rk_map_free(est);
        rk_map_free(coarse);
        rk_kan_free(kan);
        rk_observations_free(obs);
        rk_scene_free(s);
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rkmoe.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for opaque in ["RkScene", "RkObservations", "RkMap", "RkKan"] {
        assert!(header.contains(&format!("typedef struct {opaque} {opaque};")));
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(&main, "#include \"rkmoe.h\"\nint main(void) { return rk_version() == 0; }\n").unwrap();
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&main)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
