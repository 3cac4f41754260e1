//! End-to-end checks of the command-line runner: artifact determinism,
//! config-file handling, and error reporting.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn densefactor(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densefactor"))
        .args(args)
        .current_dir(dir)
        .env_remove("DENSEFACTOR_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn run_se_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "run-se", "--family", "gauss-gauss", "--p", "2", "--alpha", "1.5", "--lambda", "2.0",
        "--scheme", "informative", "--out", "a",
    ];
    let out = densefactor(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut args_b = args;
    args_b[args.len() - 1] = "b";
    assert!(densefactor(&args_b, dir.path()).status.success());
    let a = fs::read(dir.path().join("a/se.csv")).unwrap();
    let b = fs::read(dir.path().join("b/se.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# artifact_version = 1"));
    assert!(text.contains("# run.command = run-se"));
    assert!(text.lines().any(|l| l == "t,m,q,Q,D,mse_in,mse_out"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.conf"),
        "run.command = solve-eos\nmodel.family = gauss-gauss\nmodel.p = 2\n\
         model.alpha = 1.5\nmodel.lambda = 1.0\n",
    )
    .unwrap();
    let out = densefactor(
        &["--config", "exp.conf", "--lambda", "2.0", "--out", "."],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("eos.csv")).unwrap();
    assert!(text.contains("# model.lambda = 2"), "flag must override the file value:\n{text}");
    // α=1.5, λ=2: the magnetized branch m = α/2 − ½√((α−2)²+4/λ²) ≈ 0.190983.
    assert!(text.contains("Low,1.90983005624e-1"), "{text}");
}

#[test]
fn unknown_key_fails_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "run.command = run-se\nmodel.zeta = 1\n").unwrap();
    let out = densefactor(&["--config", "bad.conf"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("model.zeta"), "{err}");
}

#[test]
fn generate_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "generate", "--N", "40", "--M", "8", "--alpha", "1.5", "--seed", "11", "--out", "x",
    ];
    assert!(densefactor(&args, dir.path()).status.success());
    let mut args_b = args;
    args_b[args.len() - 1] = "y";
    assert!(densefactor(&args_b, dir.path()).status.success());
    assert_eq!(
        fs::read(dir.path().join("x/instance_11.json")).unwrap(),
        fs::read(dir.path().join("y/instance_11.json")).unwrap()
    );
}

#[test]
fn run_rbp_writes_per_instance_and_averaged_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = densefactor(
        &[
            "run-rbp", "--N", "60", "--M", "10", "--alpha", "1.5", "--lambda", "2.0", "--max-t",
            "5", "--instances", "2", "--seed", "3", "--out", ".",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("converged 0/2") || stdout.contains("converged 1/2") || stdout.contains("converged 2/2"));
    for name in ["rbp_3.csv", "rbp_4.csv", "rbp_avg.csv"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let avg = fs::read_to_string(dir.path().join("rbp_avg.csv")).unwrap();
    assert!(avg.lines().any(|l| l == "t,m,q,Q,D,mse_in,mse_out,count"));
    assert!(avg.lines().last().unwrap().ends_with(",2"), "both instances reach every step");
    let per = fs::read_to_string(dir.path().join("rbp_4.csv")).unwrap();
    assert!(per.contains("# instance_seed = 4"));
}

#[test]
fn compare_emits_deviation_columns_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = densefactor(
        &[
            "compare", "--N", "60", "--M", "10", "--alpha", "1.5", "--lambda", "2.0", "--max-t",
            "5", "--instances", "2", "--seed", "3", "--out", ".",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(text.lines().any(|l| l == "t,m_mp,q_mp,m_se,q_se,dev_m,dev_q,count"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max |m_mp − m_se|"), "{stdout}");
}
