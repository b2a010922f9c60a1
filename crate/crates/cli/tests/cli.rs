//! The `ecc` binary end to end: verbs, config precedence, the output
//! directory override and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn ecc(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecc"));
    cmd.args(args).env_remove("ECC_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL: [&str; 10] = [
    "--n-steps", "400", "--n-seeds", "2", "--eval-period", "100", "--eval-episodes", "2", "--k", "2",
];

fn train(dir: &Path, name: &str, algorithm: &str, extra: &[&str]) -> Output {
    let out = dir.join(name);
    let mut args = vec!["train", "--algorithm", algorithm, "--env", "chain", "--output", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    ecc(&args, &[])
}

#[test]
fn train_compare_summarize_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let out = train(dir.path(), "ecc.csv", "ecc", &["--checkpoint-dir", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(code(&train(dir.path(), "cdrl.csv", "cdrl", &[])), 0);
    let (a, b) = (dir.path().join("ecc.csv"), dir.path().join("cdrl.csv"));
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("# ecc-harness-csv v1"));
    assert_eq!(text.lines().nth(1), Some("seed,step,total_samples,agent,mean_return,best_so_far,snapshot_version"));

    let cmp = ecc(&["compare", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(code(&cmp), 0);
    assert!(stdout(&cmp).contains("locf"), "{}", stdout(&cmp));

    let sum = ecc(&["summarize", a.to_str().unwrap(), b.to_str().unwrap()], &[]);
    assert_eq!(code(&sum), 0);
    assert_eq!(stdout(&sum).lines().count(), 5, "header + 2 runs × 2 groups");

    let c0 = ckpt.join("ecc_seed0_agent0.ckpt");
    let c1 = ckpt.join("ecc_seed0_agent1.ckpt");
    let ev = ecc(
        &["evaluate", "--env", "chain", "--checkpoint", c0.to_str().unwrap(), "--checkpoint", c1.to_str().unwrap()],
        &[],
    );
    assert_eq!(code(&ev), 0, "{}", String::from_utf8_lossy(&ev.stderr));
    assert!(stdout(&ev).lines().any(|l| l.starts_with("joint,")));
}

#[test]
fn config_file_values_override_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "env = \"two_path\"\n[training]\nk = 3\n").unwrap();
    let out = train(dir.path(), "m.csv", "ecc", &["--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("env=two_path"), "{header}");
    assert!(header.contains(" k=3"), "{header}");
}

#[test]
fn output_directory_can_be_redirected() {
    let dir = tempfile::tempdir().unwrap();
    let elsewhere = dir.path().join("elsewhere");
    let mut args = vec!["train", "--algorithm", "cdrl", "--env", "chain", "--output", "ignored/dir/run.csv"];
    args.extend(SMALL);
    let out = ecc(&args, &[("ECC_OUTPUT_DIR", &elsewhere)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(elsewhere.join("run.csv").exists());
    assert!(!Path::new("ignored").exists());
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&train(dir.path(), "x.csv", "ecc", &["--env", "moon"])), 2);
    assert_eq!(code(&train(dir.path(), "x.csv", "sarsa", &[])), 2);
    assert_eq!(code(&train(dir.path(), "x.csv", "ecc", &["--batch-size", "0"])), 2);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "bogus_key = 1\n").unwrap();
    assert_eq!(code(&train(dir.path(), "x.csv", "ecc", &["--config", bad.to_str().unwrap()])), 2);
    // required fields missing
    assert_eq!(code(&ecc(&["train", "--env", "chain"], &[])), 2);
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn runtime_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.ckpt");
    assert_eq!(code(&ecc(&["evaluate", "--env", "chain", "--checkpoint", missing.to_str().unwrap()], &[])), 3);
    // output "directory" is a regular file
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = blocker.join("run.csv");
    let mut args = vec!["train", "--algorithm", "ecc", "--env", "chain", "--output", out.to_str().unwrap()];
    args.extend(SMALL);
    assert_eq!(code(&ecc(&args, &[])), 3);
}
