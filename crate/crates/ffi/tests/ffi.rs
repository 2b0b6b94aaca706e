use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr::null_mut;

use uncertseg_ffi::*;

fn tensor(shape: &[usize], data: &[f32]) -> *mut UsTensor {
    let mut t = null_mut();
    assert_eq!(unsafe { us_tensor_new(shape.as_ptr(), shape.len(), data.as_ptr(), &mut t) }, UsStatus::Ok);
    t
}

fn data(t: *const UsTensor) -> Vec<f32> {
    unsafe { std::slice::from_raw_parts(us_tensor_data(t), us_tensor_len(t)).to_vec() }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(us_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn tensor_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.tnsr").to_str().unwrap()).unwrap();
    let values = [1.5f32, -0.0, f32::INFINITY, 3.0, 4.0, 5.0];
    let t = tensor(&[3, 2], &values);
    unsafe {
        assert_eq!(us_tensor_save(t, path.as_ptr()), UsStatus::Ok);
        let mut back = null_mut();
        assert_eq!(us_tensor_load(path.as_ptr(), &mut back), UsStatus::Ok);
        let mut shape = [0usize; 2];
        assert_eq!(us_tensor_shape(back, shape.as_mut_ptr(), 2), UsStatus::Ok);
        assert_eq!(shape, [3, 2]);
        let bits: Vec<u32> = data(back).iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(us_tensor_shape(back, shape.as_mut_ptr(), 1), UsStatus::InvalidArgument);
        us_tensor_free(back);
        us_tensor_free(t);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut t = null_mut();
        let shape = [2usize, 2];
        assert_eq!(us_tensor_new(shape.as_ptr(), 0, std::ptr::null(), &mut t), UsStatus::InvalidArgument);
        assert!(t.is_null());
        let missing = CString::new("/nonexistent/dir/t.tnsr").unwrap();
        assert_eq!(us_tensor_load(missing.as_ptr(), &mut t), UsStatus::Io);
        assert!(last_error().contains("/nonexistent/dir/t.tnsr"));
        let mut out = 0.0;
        assert_eq!(us_dice(null_mut(), null_mut(), &mut out), UsStatus::NullPointer);
        let half = tensor(&[1, 2], &[0.5, 1.0]);
        assert_eq!(us_dice(half, half, &mut out), UsStatus::InvalidArgument);
        assert!(last_error().contains("not 0 or 1"), "{}", last_error());
        us_tensor_free(half);
    }
}

#[test]
fn metrics_and_otsu() {
    unsafe {
        let a = tensor(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        let b = tensor(&[2, 2], &[1.0, 0.0, 0.0, 0.0]);
        let mut d = 0.0;
        assert_eq!(us_dice(a, b, &mut d), UsStatus::Ok);
        assert_eq!(d, 2.0 / 3.0);

        let scores = [0.9f32, 0.8, 0.3, 0.1];
        let labels = [1u8, 0, 1, 0];
        let mut ap = 0.0;
        assert_eq!(us_pr_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut ap), UsStatus::Ok);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);

        let flat = tensor(&[2, 2], &[0.3; 4]);
        let (mut mask, mut thr, mut degenerate) = (null_mut(), 0.0f32, 0i32);
        assert_eq!(us_otsu_threshold(flat, &mut mask, &mut thr, &mut degenerate), UsStatus::Ok);
        assert_eq!((thr, degenerate), (0.3, 1));
        assert_eq!(data(mask), [0.0; 4]);
        for t in [a, b, flat, mask] {
            us_tensor_free(t);
        }
    }
}

#[test]
fn network_checkpoint_and_mc_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let ck = CString::new(dir.path().join("ck").to_str().unwrap()).unwrap();
    unsafe {
        let mut net = null_mut();
        assert_eq!(us_network_build(UsVariant::Unet, 2, 4, &mut net), UsStatus::Ok);
        assert_eq!(us_network_dropout_sites(net), 1);
        assert_eq!(us_network_save(net, ck.as_ptr()), UsStatus::Ok);
        let mut loaded = null_mut();
        assert_eq!(us_network_load(ck.as_ptr(), &mut loaded), UsStatus::Ok);

        let scan = tensor(&[16, 16], &(0..256).map(|i| (i % 17) as f32 / 17.0).collect::<Vec<_>>());
        let run = |n: *mut UsNetwork, threads: usize| {
            let (mut m, mut s) = (null_mut(), null_mut());
            assert_eq!(us_mc_predict(n, scan, 5, 9, threads, &mut m, &mut s), UsStatus::Ok);
            let out = (data(m), data(s));
            us_tensor_free(m);
            us_tensor_free(s);
            out
        };
        // Eval mode: deterministic, zero spread, identical after reload.
        let (m1, s1) = run(net, 1);
        assert!(s1.iter().all(|&v| v == 0.0));
        assert_eq!(run(loaded, 1).0, m1);

        assert_eq!(us_network_set_mode(net, UsMode::McSample), UsStatus::Ok);
        let (m2, s2) = run(net, 1);
        assert!(s2.iter().any(|&v| v > 0.0));
        assert_eq!(run(net, 3), (m2, s2));

        assert_eq!(us_network_set_mode(net, UsMode::Train), UsStatus::Ok);
        let (mut m, mut s) = (null_mut(), null_mut());
        assert_eq!(us_mc_predict(net, scan, 5, 9, 1, &mut m, &mut s), UsStatus::InvalidArgument);
        let odd = tensor(&[10, 16], &[0.0; 160]);
        assert_eq!(us_network_set_mode(net, UsMode::Eval), UsStatus::Ok);
        assert_eq!(us_mc_predict(net, odd, 2, 0, 1, &mut m, &mut s), UsStatus::Shape);

        us_tensor_free(odd);
        us_tensor_free(scan);
        us_network_free(loaded);
        us_network_free(net);
    }
}

/// Compiles the C smoke test against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_against_header_and_static_library() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = target_dir.join("libuncertseg_ffi.a");
    assert!(lib.is_file(), "static library not found at {}", lib.display());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_smoke");
    let status = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .expect("run C compiler");
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&out).output().unwrap();
    assert!(
        run.status.success(),
        "smoke test failed:\n{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
