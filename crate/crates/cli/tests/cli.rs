use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lanesnn_core::dataset::load_pgm;

fn lanesnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanesnn")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = lanesnn(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    v.sort();
    v
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Raw 3/2 split plus its processed form (two augmented copies).
fn processed(dir: &Path) -> (PathBuf, PathBuf) {
    let raw = dir.join("raw");
    let data = dir.join("data");
    ok(&["gen-data", "--n-train", "3", "--n-test", "2", "--seed", "5", "--out", s(&raw)]);
    ok(&["preprocess", "--data", s(&raw), "--out", s(&data), "--augment", "2", "--seed", "5"]);
    (raw, data)
}

#[test]
fn gen_data_writes_pairs_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["gen-data", "--n-train", "4", "--n-test", "2", "--seed", "9", "--out", s(out)]);
    }
    for (split, n) in [("train", 4), ("test", 2)] {
        assert_eq!(files_with_suffix(&a.join(split).join("input"), ".pgm").len(), n);
        assert_eq!(files_with_suffix(&a.join(split).join("label"), ".pgm").len(), n);
        assert!(a.join(split).join("manifest.tsv").is_file());
    }
    let img = load_pgm(&a.join("train/input").read_dir().unwrap().next().unwrap().unwrap().path()).unwrap();
    assert_eq!((img.cols(), img.rows()), (1280, 800));
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = lanesnn(&["gen-data", "--n-train", "2", "--n-test", "1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    assert_eq!(code(&lanesnn(&["no-such-command"])), 1);
}

#[test]
fn preprocess_reduces_frames_and_counts_augmented_copies() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, data) = processed(dir.path());
    assert_eq!(files_with_suffix(&data.join("train/input"), ".pgm").len(), 5);
    assert_eq!(files_with_suffix(&data.join("test/input"), ".pgm").len(), 2);
    let input = load_pgm(&files_with_suffix(&data.join("train/input"), ".pgm")[0]).unwrap();
    let label = load_pgm(&files_with_suffix(&data.join("train/label"), ".pgm")[0]).unwrap();
    assert_eq!((input.cols(), input.rows()), (80, 20));
    assert_eq!((label.cols(), label.rows()), (40, 10));

    let plain = dir.path().join("plain");
    ok(&["preprocess", "--data", s(&raw), "--out", s(&plain), "--augment", "0"]);
    assert_eq!(files_with_suffix(&plain.join("train/input"), ".pgm").len(), 3);
}

#[test]
fn preprocess_lists_every_bad_frame() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    ok(&["gen-data", "--n-train", "2", "--n-test", "1", "--width", "640", "--height", "400", "--out", s(&raw)]);
    let out = lanesnn(&["preprocess", "--data", s(&raw), "--out", s(&dir.path().join("data"))]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("2 of 2 train samples"), "{err}");
    for f in files_with_suffix(&raw.join("train/input"), ".pgm") {
        assert!(err.contains(f.file_name().unwrap().to_str().unwrap()), "{err}");
    }
}

#[test]
fn train_eval_quantize_produce_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = processed(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let out = lanesnn(&["train", "--data", s(&data), "--epochs", "2", "--p", "0.9", "--out", s(&ckpt)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let metrics = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,loss_total,loss_mse,loss_wce,test_iou,best_threshold");
    assert_eq!(lines.len(), 3);
    assert!(!metrics.contains('\r'));

    let masks = dir.path().join("masks");
    let report = dir.path().join("report.csv");
    let summary = ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data.join("test")), "--report", s(&report), "--emit-masks", s(&masks)]);
    assert_eq!(summary.lines().count(), 1);
    assert!(summary.contains("mean_iou"));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 3);
    let bins = files_with_suffix(&masks, ".bin.pgm");
    assert_eq!(bins.len(), 2);
    assert_eq!(files_with_suffix(&masks, ".pgm").len(), 4);
    let bin = load_pgm(&bins[0]).unwrap();
    assert_eq!((bin.cols(), bin.rows()), (40, 10));
    assert!(bin.data().iter().all(|&v| v == 0.0 || v == 1.0));

    let qnt = dir.path().join("m.qnt");
    let qreport = dir.path().join("q.csv");
    ok(&["quantize", "--ckpt", s(&ckpt), "--out", s(&qnt), "--report", s(&qreport)]);
    assert!(fs::read_to_string(&qreport).unwrap().starts_with("layer,kind,max_abs_w,synapses,saturated"));
    let text = ok(&["infer-quant", "--qnt", s(&qnt), "--data", s(&data.join("test")), "--ckpt", s(&ckpt)]);
    assert!(text.contains("quant: images 2"), "{text}");
    assert!(text.contains("delta"), "{text}");
}

#[test]
fn missing_or_corrupt_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = processed(dir.path());
    let missing = dir.path().join("none.ckpt");
    assert_eq!(code(&lanesnn(&["eval", "--ckpt", s(&missing), "--data", s(&data.join("test"))])), 2);
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&lanesnn(&["quantize", "--ckpt", s(&junk), "--out", s(&dir.path().join("x.qnt"))])), 2);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = processed(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# quick run\ndata = {}\nepochs = 3\nbatch_size = 2\n", data.display())).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    ok(&["train", "--config", s(&cfg), "--epochs", "1", "--out", s(&ckpt)]);
    assert_eq!(fs::read_to_string(dir.path().join("m.csv")).unwrap().lines().count(), 2);

    fs::write(&cfg, "epochz = 3\n").unwrap();
    let out = lanesnn(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&ckpt)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_lists_reference_defaults() {
    let text = ok(&["train", "--help"]);
    for needle in ["reference setting: 1e-4", "reference setting: 4.0", "reference setting: 200", "reference setting: 30", "[default: 0.3]"] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
    assert!(ok(&["infer-quant", "--help"]).contains("reference setting: 10"));
    assert!(ok(&["preprocess", "--help"]).contains("reference setting: 271"));
}

#[test]
fn numeric_failures_map_to_exit_code_three() {
    let err = anyhow::Error::new(lanesnn_core::Error::NonFinite("loss".into()));
    assert_eq!(lanesnn_cli::exit_code_for(&err), lanesnn_cli::EXIT_NUMERIC);
    let err = anyhow::Error::new(lanesnn_core::Error::InvalidArgument("p".into()));
    assert_eq!(lanesnn_cli::exit_code_for(&err), lanesnn_cli::EXIT_USAGE);
}
