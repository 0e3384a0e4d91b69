use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use ebbs_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ebbs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(p: *mut c_char) -> serde_json::Value {
    assert!(!p.is_null());
    let v = serde_json::from_str(unsafe { CStr::from_ptr(p) }.to_str().unwrap()).unwrap();
    unsafe { ebbs_string_free(p) };
    v
}

struct Loaded {
    _dir: tempfile::TempDir,
    registry: *mut EbbsRegistry,
    first_input: String,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { ebbs_registry_free(self.registry) };
    }
}

fn load() -> Loaded {
    let dir = tempfile::tempdir().unwrap();
    ebbs::synth::distillation_task(1, 3).write_to(dir.path()).unwrap();
    let manifest = c(dir.path().join("registry.json").to_str().unwrap());
    let mut registry = ptr::null_mut();
    assert_eq!(unsafe { ebbs_registry_load(manifest.as_ptr(), &mut registry) }, EbbsStatus::Ok);
    assert!(ebbs_last_error_message().is_null());
    let line = std::fs::read_to_string(dir.path().join("inputs.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    Loaded {
        _dir: dir,
        registry,
        first_input: first["src"].to_string(),
    }
}

#[test]
fn default_config_matches_core() {
    let cfg = ebbs_decode_config_default();
    let core = ebbs::DecodeConfig::default();
    assert_eq!(cfg.lower_beam, core.lower_beam);
    assert_eq!(cfg.upper_beam, core.upper_beam);
    assert_eq!(cfg.max_len_factor, core.max_len_factor);
    assert_eq!(cfg.max_len_offset, core.max_len_offset);
    assert_eq!(cfg.length_normalize, core.length_normalize);
}

#[test]
fn single_path_ensemble_equals_translate() {
    let l = load();
    let cfg = ebbs_decode_config_default();
    let (it, nl, input) = (c("it"), c("nl"), c(&l.first_input));
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    let status = unsafe {
        ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), input.as_ptr(), &cfg, &mut a)
    };
    assert_eq!(status, EbbsStatus::Ok);
    let status = unsafe {
        ebbs_ensemble_decode(
            l.registry,
            it.as_ptr(),
            nl.as_ptr(),
            c("direct").as_ptr(),
            input.as_ptr(),
            &cfg,
            EbbsVoting::TopZSum,
            EbbsFinalScore::Tally,
            &mut b,
        )
    };
    assert_eq!(status, EbbsStatus::Ok);
    let (a, b) = (take(a), take(b));
    assert_eq!(a, b);
    assert_eq!(a["hyp"][0], "<s>");
}

#[test]
fn pivot_and_multi_path_decodes() {
    let l = load();
    let cfg = ebbs_decode_config_default();
    let (it, nl, input) = (c("it"), c("nl"), c(&l.first_input));
    let mut out = ptr::null_mut();
    let status = unsafe {
        ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("pivot:en").as_ptr(), input.as_ptr(), &cfg, &mut out)
    };
    assert_eq!(status, EbbsStatus::Ok);
    assert!(take(out)["intermediate"].is_array());

    for voting in [EbbsVoting::TopZSum, EbbsVoting::TotalSum, EbbsVoting::Max, EbbsVoting::ZeroOne] {
        let mut out = ptr::null_mut();
        let status = unsafe {
            ebbs_ensemble_decode(
                l.registry,
                it.as_ptr(),
                nl.as_ptr(),
                c("direct,pivot:en").as_ptr(),
                input.as_ptr(),
                &cfg,
                voting,
                EbbsFinalScore::ComponentMean,
                &mut out,
            )
        };
        assert_eq!(status, EbbsStatus::Ok, "{voting:?}: {}", last_error());
        assert!(take(out)["score"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn error_codes_and_messages() {
    let l = load();
    let cfg = ebbs_decode_config_default();
    let (it, nl, input) = (c("it"), c("nl"), c(&l.first_input));
    let mut out = ptr::null_mut();

    let status = unsafe { ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("pivot:xx").as_ptr(), input.as_ptr(), &cfg, &mut out) };
    assert_eq!(status, EbbsStatus::Config);
    assert!(last_error().contains("xx"));
    assert!(out.is_null());

    let bad = EbbsDecodeConfig { lower_beam: 0, ..cfg };
    let status = unsafe { ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), input.as_ptr(), &bad, &mut out) };
    assert_eq!(status, EbbsStatus::Config);

    let unknown = c(r#"["no-such-token"]"#);
    let status = unsafe { ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), unknown.as_ptr(), &cfg, &mut out) };
    assert_eq!(status, EbbsStatus::Data);

    let garbage = c("[1,");
    let status = unsafe { ebbs_translate(l.registry, it.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), garbage.as_ptr(), &cfg, &mut out) };
    assert_eq!(status, EbbsStatus::Data);

    let status = unsafe { ebbs_translate(ptr::null(), it.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), input.as_ptr(), &cfg, &mut out) };
    assert_eq!(status, EbbsStatus::NullPointer);
    assert!(last_error().contains("registry"));

    let invalid = [0xffu8 as c_char, 0];
    let status = unsafe { ebbs_translate(l.registry, invalid.as_ptr(), nl.as_ptr(), c("direct").as_ptr(), input.as_ptr(), &cfg, &mut out) };
    assert_eq!(status, EbbsStatus::InvalidUtf8);

    let mut reg = ptr::null_mut();
    let missing = c("/nonexistent/registry.json");
    assert_eq!(unsafe { ebbs_registry_load(missing.as_ptr(), &mut reg) }, EbbsStatus::Data);
    assert!(reg.is_null());
    unsafe {
        ebbs_registry_free(ptr::null_mut());
        ebbs_string_free(ptr::null_mut());
    }
}

#[test]
fn bleu_and_mbr() {
    let mut score = -1.0;
    let sent = c(r#"["a","b","c","d"]"#);
    assert_eq!(unsafe { ebbs_sentence_bleu(sent.as_ptr(), sent.as_ptr(), &mut score) }, EbbsStatus::Ok);
    assert!((score - 1.0).abs() < 1e-12);

    let framed = c(r#"["<s>","a","b","c","d","</s>"]"#);
    assert_eq!(unsafe { ebbs_sentence_bleu(framed.as_ptr(), sent.as_ptr(), &mut score) }, EbbsStatus::Ok);
    assert!((score - 1.0).abs() < 1e-12);

    let empty = c("[]");
    assert_eq!(unsafe { ebbs_sentence_bleu(empty.as_ptr(), sent.as_ptr(), &mut score) }, EbbsStatus::Ok);
    assert_eq!(score, 0.0);
    assert_eq!(unsafe { ebbs_sentence_bleu(sent.as_ptr(), empty.as_ptr(), &mut score) }, EbbsStatus::Data);

    let cands = c(r#"[["x","y"],["a","b","c","d"],["a","b","c","d"]]"#);
    let (mut index, mut utility) = (usize::MAX, -1.0);
    assert_eq!(unsafe { ebbs_mbr_select(cands.as_ptr(), &mut index, &mut utility) }, EbbsStatus::Ok);
    assert_eq!(index, 1);
    // Exact copy plus the disjoint candidate, whose four zero precisions
    // smooth to 1/2, 1/4, 1/8, 1/16.
    assert!((utility - (1.0 + 2f64.powf(-2.5))).abs() < 1e-12);

    assert_eq!(unsafe { ebbs_mbr_select(c("[]").as_ptr(), &mut index, &mut utility) }, EbbsStatus::Data);
    assert_eq!(unsafe { ebbs_mbr_select(cands.as_ptr(), ptr::null_mut(), &mut utility) }, EbbsStatus::NullPointer);
}

#[test]
fn header_is_generated_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ebbs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ebbs_registry_load", "ebbs_ensemble_decode", "ebbs_mbr_select", "EBBS_STATUS_DATA"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"ebbs.h\"\nint main(void) { EbbsDecodeConfig c = ebbs_decode_config_default(); return (int)c.lower_beam; }\n",
    )
    .unwrap();
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler found; skipping compile check");
        return;
    };
    assert!(status.success());
}
