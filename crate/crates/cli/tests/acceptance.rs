//! CLI acceptance: byte-identical outputs across repeated runs on the
//! fixture corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/branching.jsonl")
}

fn run(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_triepack"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Criterion 8: `pack` and `verify` produce byte-identical outputs across two
/// consecutive runs.
#[test]
fn criterion_8_byte_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = fixture();
    let fixture = fixture.to_str().unwrap();

    let pack_a = dir.path().join("packs_a.jsonl");
    let pack_b = dir.path().join("packs_b.jsonl");
    for out in [&pack_a, &pack_b] {
        run(&[
            "pack",
            "--input",
            fixture,
            "--output",
            out.to_str().unwrap(),
            "--budget",
            "4",
        ]);
    }
    let bytes_a = fs::read(&pack_a).unwrap();
    let bytes_b = fs::read(&pack_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "pack outputs differ between runs");

    let verify_a = dir.path().join("report_a.json");
    let verify_b = dir.path().join("report_b.json");
    for out in [&verify_a, &verify_b] {
        run(&[
            "verify",
            "--input",
            fixture,
            "--output",
            out.to_str().unwrap(),
            "--seed",
            "7",
            "--V",
            "11",
            "--d",
            "4",
        ]);
    }
    let report_a = fs::read(&verify_a).unwrap();
    let report_b = fs::read(&verify_b).unwrap();
    assert_eq!(report_a, report_b, "verify outputs differ between runs");

    println!(
        "criterion 8 PASS: pack ({} bytes) and verify ({} bytes) byte-identical across reruns",
        bytes_a.len(),
        report_a.len()
    );
}
