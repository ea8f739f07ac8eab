//! CLI behavior: exit codes, artifact determinism, manifest checksums.

mod common;

use patrolgrad::cli::run;
use patrolgrad::report::sha256_hex;

fn run_args(args: &[&str]) -> i32 {
    let mut argv = vec!["patrolgrad".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn read_dir_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn identical_invocations_produce_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config = common::config_path("square4.cfg");
    let config = config.to_str().unwrap();
    for out in [&out_a, &out_b] {
        let code = run_args(&[
            "simulate",
            "--config",
            config,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let files_a = read_dir_files(&out_a);
    let files_b = read_dir_files(&out_b);
    assert_eq!(
        files_a.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        files_b.iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    for ((name_a, bytes_a), (_, bytes_b)) in files_a.iter().zip(&files_b) {
        if name_a == "manifest.json" {
            // Wall-clock duration differs; artifact checksums must not.
            let v_a: serde_json::Value = serde_json::from_slice(bytes_a).unwrap();
            let v_b: serde_json::Value = serde_json::from_slice(bytes_b).unwrap();
            assert_eq!(v_a["artifacts"], v_b["artifacts"]);
        } else {
            assert_eq!(bytes_a, bytes_b, "artifact {name_a} differs between runs");
        }
    }
}

#[test]
fn manifest_checksums_match_artifact_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = common::config_path("onea2t.cfg");
    let code = run_args(&[
        "gradcheck",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(!artifacts.is_empty());
    for entry in artifacts {
        let name = entry["name"].as_str().unwrap();
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(
            entry["sha256"].as_str().unwrap(),
            sha256_hex(&bytes),
            "checksum mismatch for {name}"
        );
    }
}

#[test]
fn optimize_emits_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = common::config_path("zero_diagonal_demo.cfg");
    let code = run_args(&[
        "optimize",
        "--config",
        config.to_str().unwrap(),
        "--iters",
        "5",
        "--theta-trace",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for name in [
        "cost_trace.csv",
        "theta_final.csv",
        "theta_trace.csv",
        "visits.csv",
        "manifest.json",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let cost_trace = std::fs::read_to_string(out.join("cost_trace.csv")).unwrap();
    assert_eq!(cost_trace.lines().count(), 7); // header + 6 iterates
    assert!(cost_trace.ends_with('\n'));
    assert!(!cost_trace.contains('\r'));
}

#[test]
fn analyze_emits_spectra_and_cycles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let code = run_args(&[
        "analyze-1a2t",
        "--rho",
        "0.3",
        "--cycles",
        "50",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.join("spectral.csv").exists());
    let cycles = std::fs::read_to_string(out.join("grad_cycles.csv")).unwrap();
    assert_eq!(cycles.lines().count(), 52); // header + x0..x50
}

#[test]
fn dp_budget_overflow_exits_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let code = run_args(&[
        "dp",
        "--config",
        common::config_path("square4.cfg").to_str().unwrap(),
        "--budget-bytes",
        "1024",
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 4);
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "[mission]\nhorizon = -3.0\n[[targets]]\nid = 1\nx = 0.0\ny = 0.0\nA = 1.0\nB = 2.0\nR0 = 0.0\n").unwrap();
    let code = run_args(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn binary_prints_cost_and_sequences() {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_patrolgrad"))
        .args([
            "simulate",
            "--config",
            common::config_path("counterexample2a5t.cfg").to_str().unwrap(),
            "--out-dir",
        ])
        .arg(tempfile::tempdir().unwrap().path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("J = "), "{stdout}");
    assert!(stdout.contains("agent 1 visits: 1-5-4-2-1-5"), "{stdout}");
}
