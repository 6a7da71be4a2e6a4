//! End-to-end tests of the installed binary: each test drives `mlpcm` as a
//! subprocess the way a user would, over the committed fixture corpus.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mlpcm"))
}

fn data(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../mlpcm/tests/data").join(sub)
}

fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mlpcm_cli_{tag}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
    stdout(out)
}

/// Train a throwaway m=8 checkpoint (6 hyper-only steps) the other tests
/// reuse; cheap enough to run once per test that needs it.
fn train_tiny(dir: &Path) -> PathBuf {
    let config = dir.join("smoke.toml");
    std::fs::write(
        &config,
        "patch = 64\nbatch = 2\nqp = 75\nseed = 1\n\
         stages = [{ stage = \"hyper_only\", epochs = 1 }]\n",
    )
    .unwrap();
    let model = dir.join("tiny.mlwt");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(data("holdout"))
        .arg("--out")
        .arg(&model)
        .args(["--m", "8", "--log"])
        .arg(dir.join("loss"))
        .output()
        .unwrap();
    let text = ok(&out);
    assert!(text.contains("y net: 6 steps"), "unexpected train output: {text}");
    assert!(text.contains("cbcr net: 6 steps"), "unexpected train output: {text}");
    for tag in ["y", "cbcr"] {
        let csv = std::fs::read_to_string(dir.join(format!("loss.{tag}.csv"))).unwrap();
        assert!(csv.starts_with("step,stage,loss_total,"), "bad log header: {csv}");
        assert_eq!(csv.lines().count(), 7, "6 rows + header in {tag} log");
    }
    model
}

#[test]
fn train_encode_decode_verify_round_trip() {
    let dir = tempdir("roundtrip");
    let model = train_tiny(&dir);
    let src = data("corpus").join("c32_96x129_444_q35.jpg");

    let container = dir.join("img.mlpm");
    ok(&bin()
        .arg("encode")
        .arg(&src)
        .arg(&container)
        .arg("--model")
        .arg(&model)
        .output()
        .unwrap());

    let restored = dir.join("img.jpg");
    ok(&bin()
        .arg("decode")
        .arg(&container)
        .arg(&restored)
        .arg("--model")
        .arg(&model)
        .args(["--lanes", "2"])
        .output()
        .unwrap());
    assert_eq!(
        std::fs::read(&src).unwrap(),
        std::fs::read(&restored).unwrap(),
        "decode must restore the source file byte-for-byte"
    );

    let out = bin()
        .arg("verify")
        .arg(&src)
        .arg("--model")
        .arg(&model)
        .output()
        .unwrap();
    assert!(ok(&out).contains("OK bit-exact"));

    let info = ok(&bin().arg("inspect").arg(&container).output().unwrap());
    assert!(info.contains("96x129 4:4:4"), "inspect: {info}");
    assert!(info.contains("variant full, m=8"), "inspect: {info}");
    assert!(info.contains("section  0:"), "inspect: {info}");
}

#[test]
fn transcode_writes_a_decodable_container() {
    let dir = tempdir("transcode");
    let model = train_tiny(&dir);
    let src = data("holdout").join("holdout000.jpg");
    let out_coarse = dir.join("q40.mlpm");
    ok(&bin()
        .arg("transcode")
        .arg(&src)
        .arg(&out_coarse)
        .args(["--qp", "40", "--model"])
        .arg(&model)
        .output()
        .unwrap());

    // The transcoded container decodes to a legal JPEG (coarser, not equal).
    let jpeg = dir.join("q40.jpg");
    ok(&bin()
        .arg("decode")
        .arg(&out_coarse)
        .arg(&jpeg)
        .arg("--model")
        .arg(&model)
        .output()
        .unwrap());
    let restored = std::fs::read(&jpeg).unwrap();
    assert_eq!(&restored[..2], &[0xff, 0xd8], "SOI marker");
    assert_ne!(restored, std::fs::read(&src).unwrap());

    let bad = bin()
        .arg("transcode")
        .arg(&src)
        .arg(dir.join("x.mlpm"))
        .args(["--qp", "0", "--model"])
        .arg(&model)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(stderr(&bad).contains("out of range"), "stderr: {}", stderr(&bad));
}

#[test]
fn bench_csv_sweeps_and_reports_per_qp_rows() {
    let out = bin()
        .arg("bench")
        .arg(data("holdout"))
        .args(["--variant", "full", "--m", "8", "--qp-sweep", "75,55", "--report", "csv"])
        .output()
        .unwrap();
    let csv = ok(&out);
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("file,qp,width,height,"), "header: {header}");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12 * 2, "12 files x 2 sweep points");
    assert!(rows.iter().all(|r| r.contains(",75,") || r.contains(",55,")));
}

#[test]
fn bench_flag_conflicts_and_empty_dirs_fail_cleanly() {
    let out = bin()
        .arg("bench")
        .arg(data("holdout"))
        .args(["--variant", "full", "--model", "/nonexistent.mlwt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("mutually exclusive"));

    let out = bin().arg("bench").arg(data("holdout")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("need --model"));

    let empty = tempdir("bench_empty");
    let out = bin()
        .arg("bench")
        .arg(&empty)
        .args(["--variant", "full", "--m", "8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).to_lowercase().contains("no "), "stderr: {}", stderr(&out));
}

#[test]
fn analyze_subcommands_emit_their_csv_schemas() {
    let sched = ok(&bin()
        .args(["analyze", "schedule", "--variant", "no_shift", "--report", "csv"])
        .output()
        .unwrap());
    assert!(sched.starts_with("step,label,lane,macs,symbol_context"), "schedule: {sched}");

    let rho = ok(&bin()
        .args(["analyze", "rho", "--report", "csv"])
        .arg(data("corpus").join("c20_57x33_420_q35.jpg"))
        .arg("--transform")
        .arg("identity")
        .output()
        .unwrap());
    assert!(rho.starts_with("file,transform,"), "rho: {rho}");
    assert!(rho.contains(",identity,"), "rho: {rho}");

    let sim = ok(&bin()
        .args(["analyze", "similarity"])
        .arg(data("holdout").join("holdout001.jpg"))
        .args(["--map", "freq"])
        .output()
        .unwrap());
    assert!(sim.starts_with("k1,k2,cosine"), "similarity: {sim}");
    assert_eq!(sim.lines().count(), 1 + 64 * 64);
}

#[test]
fn usage_errors_and_bad_variants_exit_nonzero() {
    let out = bin().arg("encode").output().unwrap();
    assert_eq!(out.status.code(), Some(2), "clap usage error");

    let out = bin()
        .args(["analyze", "schedule", "--variant", "bogus"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown variant"), "stderr: {}", stderr(&out));

    let out = bin()
        .arg("verify")
        .arg(data("corpus").join("c00_8x8_444_q35.jpg"))
        .args(["--model", "/does/not/exist.mlwt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("loading model"), "stderr: {}", stderr(&out));
}
