use std::ffi::{CStr, CString};
use std::ptr;

use relabel_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(rl_last_error()) }.to_string_lossy().into_owned()
}

fn encoder(dim: usize) -> *mut RlEncoder {
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { rl_encoder_new(1024, dim, true, 7, &mut enc) }, RlStatus::Ok);
    enc
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(rl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn encode_is_unit_and_matches_core() {
    let enc = encoder(16);
    assert_eq!(unsafe { rl_encoder_dim(enc) }, 16);
    let text = CString::new("harbor lights at dusk").unwrap();
    let mut v = vec![0.0; 16];
    assert_eq!(unsafe { rl_encoder_encode(enc, text.as_ptr(), RlSide::Query, v.as_mut_ptr(), 16) }, RlStatus::Ok);
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);

    let params = relabel::encoder::EncoderParams::random(
        relabel::encoder::EncoderConfig { feature_dim: 1024, dim: 16, shared: true },
        7,
    )
    .unwrap();
    let want = params.encode("harbor lights at dusk", relabel::encoder::Side::Query).unwrap();
    assert_eq!(v.as_slice(), want.as_slice());

    let mut sim = 0.0;
    assert_eq!(unsafe { rl_similarity(v.as_ptr(), v.as_ptr(), 16, &mut sim) }, RlStatus::Ok);
    assert!((sim - 1.0).abs() < 1e-12);

    let mut short = vec![0.0; 8];
    let st = unsafe { rl_encoder_encode(enc, text.as_ptr(), RlSide::Query, short.as_mut_ptr(), 8) };
    assert_eq!(st, RlStatus::InvalidArgument);
    assert!(last_error().contains("encoder dim is 16"));
    unsafe { rl_encoder_free(enc) };
}

#[test]
fn null_arguments_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rl_encoder_load(ptr::null(), &mut out) }, RlStatus::NullPointer);
    assert!(last_error().contains("path"));
    assert_eq!(unsafe { rl_encoder_new(8, 4, true, 0, ptr::null_mut()) }, RlStatus::NullPointer);
    assert_eq!(unsafe { rl_encoder_dim(ptr::null()) }, 0);
    assert!(unsafe { rl_results_id(ptr::null(), 0) }.is_null());
    unsafe {
        rl_encoder_free(ptr::null_mut());
        rl_index_free(ptr::null_mut());
        rl_results_free(ptr::null_mut());
        rl_chunks_free(ptr::null_mut());
    }
}

#[test]
fn missing_checkpoint_is_io_error() {
    let path = CString::new("/nonexistent/encoder.ckpt").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rl_encoder_load(path.as_ptr(), &mut out) }, RlStatus::Io);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("e.ckpt").to_str().unwrap()).unwrap();
    let enc = encoder(8);
    assert_eq!(unsafe { rl_encoder_save(enc, path.as_ptr()) }, RlStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { rl_encoder_load(path.as_ptr(), &mut back) }, RlStatus::Ok);
    let text = CString::new("same text").unwrap();
    let (mut a, mut b) = (vec![0.0; 8], vec![0.0; 8]);
    unsafe {
        rl_encoder_encode(enc, text.as_ptr(), RlSide::Document, a.as_mut_ptr(), 8);
        rl_encoder_encode(back, text.as_ptr(), RlSide::Document, b.as_mut_ptr(), 8);
        rl_encoder_free(enc);
        rl_encoder_free(back);
    }
    assert_eq!(a, b);
}

#[test]
fn index_search_ranks_own_text_first() {
    let enc = encoder(32);
    let texts = ["red fox jumps", "blue whale sings", "green frog croaks", "grey wolf howls"];
    let ids: Vec<CString> = (0..texts.len()).map(|i| CString::new(format!("d{i}")).unwrap()).collect();
    let cs: Vec<CString> = texts.iter().map(|t| CString::new(*t).unwrap()).collect();
    let id_ptrs: Vec<_> = ids.iter().map(|c| c.as_ptr()).collect();
    let text_ptrs: Vec<_> = cs.iter().map(|c| c.as_ptr()).collect();
    let mut index = ptr::null_mut();
    let st = unsafe { rl_index_build(enc, id_ptrs.as_ptr(), text_ptrs.as_ptr(), texts.len(), &mut index) };
    assert_eq!(st, RlStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { rl_index_len(index) }, 4);

    let mut q = vec![0.0; 32];
    unsafe { rl_encoder_encode(enc, cs[2].as_ptr(), RlSide::Document, q.as_mut_ptr(), 32) };
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { rl_index_search(index, q.as_ptr(), 32, 3, &mut res) }, RlStatus::Ok);
    assert_eq!(unsafe { rl_results_len(res) }, 3);
    let top = unsafe { CStr::from_ptr(rl_results_id(res, 0)) };
    assert_eq!(top.to_str().unwrap(), "d2");
    assert!((unsafe { rl_results_score(res, 0) } - 1.0).abs() < 1e-9);
    let scores: Vec<f64> = (0..3).map(|i| unsafe { rl_results_score(res, i) }).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(unsafe { rl_results_score(res, 3) }.is_nan());

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("i.bin").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rl_index_save(index, path.as_ptr()) }, RlStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { rl_index_load(path.as_ptr(), &mut loaded) }, RlStatus::Ok);
    assert_eq!(unsafe { rl_index_len(loaded) }, 4);

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { rl_index_search(index, q.as_ptr(), 32, 0, &mut bad) }, RlStatus::InvalidArgument);
    unsafe {
        rl_results_free(res);
        rl_index_free(index);
        rl_index_free(loaded);
        rl_encoder_free(enc);
    }
}

#[test]
fn losses_match_closed_forms() {
    let mut out = 0.0;
    let scores = [0.3; 4];
    assert_eq!(unsafe { rl_list_loss(scores.as_ptr(), 4, 0, 1.0, &mut out) }, RlStatus::Ok);
    assert!((out - 4f64.ln()).abs() < 1e-12);
    let labels = [1.0, 0.5, 0.0];
    assert_eq!(unsafe { rl_pair_loss(labels.as_ptr(), scores.as_ptr(), 3, &mut out) }, RlStatus::Ok);
    assert!((out - 3.0 * 2f64.ln()).abs() < 1e-12);

    let odd = [0.7, 0.0, 0.0];
    assert_eq!(unsafe { rl_pair_loss(odd.as_ptr(), scores.as_ptr(), 3, &mut out) }, RlStatus::InvalidArgument);
    assert_eq!(unsafe { rl_list_loss(scores.as_ptr(), 4, 9, 1.0, &mut out) }, RlStatus::InvalidArgument);
    assert_eq!(unsafe { rl_list_loss(scores.as_ptr(), 4, 0, 0.0, &mut out) }, RlStatus::InvalidArgument);
}

#[test]
fn reorder_nine_by_three() {
    let mut order = [0usize; 9];
    assert_eq!(unsafe { rl_reorder(9, 3, order.as_mut_ptr()) }, RlStatus::Ok);
    assert_eq!(order, [0, 1, 2, 6, 7, 8, 5, 4, 3]);
    assert_eq!(unsafe { rl_reorder(9, 5, order.as_mut_ptr()) }, RlStatus::InvalidArgument);
}

#[test]
fn chunks_cover_sentences() {
    let text = CString::new("One two three. Four five. Six seven eight nine.").unwrap();
    let mut chunks = ptr::null_mut();
    assert_eq!(unsafe { rl_chunk_document(text.as_ptr(), 5, 2, &mut chunks) }, RlStatus::Ok);
    let n = unsafe { rl_chunks_len(chunks) };
    assert!(n >= 2);
    let src = text.to_str().unwrap();
    for i in 0..n {
        let (mut s, mut e) = (0, 0);
        assert_eq!(unsafe { rl_chunks_span(chunks, i, &mut s, &mut e) }, RlStatus::Ok);
        let t = unsafe { CStr::from_ptr(rl_chunks_text(chunks, i)) }.to_str().unwrap();
        assert_eq!(&src[s..e], t);
    }
    assert!(unsafe { rl_chunks_text(chunks, n) }.is_null());
    let (mut s, mut e) = (0, 0);
    assert_eq!(unsafe { rl_chunks_span(chunks, n, &mut s, &mut e) }, RlStatus::InvalidArgument);
    unsafe { rl_chunks_free(chunks) };

    let mut none = ptr::null_mut();
    assert_eq!(unsafe { rl_chunk_document(text.as_ptr(), 0, 2, &mut none) }, RlStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/relabel.h");
    let src = include_str!("../src/lib.rs");
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.trim().strip_prefix("pub unsafe extern \"C\" fn ").or_else(|| l.trim().strip_prefix("pub extern \"C\" fn ")))
        .map(|l| l.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20, "{exports:?}");
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}

/// Compiles a C program against the generated header and the static
/// library built for this test run.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = target_dir.join("librelabel_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = std::process::Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
