use std::fs;
use std::process::{Command, Output};

fn convseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convseq"))
        .args(args)
        .output()
        .expect("run convseq")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn params_prints_three_counts() {
    let o = convseq(&["params", "--d", "1024", "--k", "7", "--heads", "16"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "7340032 7168 112\n");
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(convseq(&["params", "--d", "x", "--k", "7", "--heads", "1"]).status.code(), Some(1));
    assert_eq!(convseq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(convseq(&["gradcheck"]).status.code(), Some(1));
    assert_eq!(convseq(&["bench", "--k", "4", "--repeats", "0"]).status.code(), Some(1));
    assert_eq!(convseq(&["train", "--heads", "5", "--steps", "1"]).status.code(), Some(1));
    assert_eq!(convseq(&["params", "--config", "/nonexistent/file"]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = convseq(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("train"));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.cfg");
    fs::write(&cfg, "# layer shape\nd = 512\nk=3\nheads=8\n").unwrap();
    let c = cfg.to_str().unwrap();
    assert_eq!(stdout(&convseq(&["params", "--config", c])), "786432 1536 24\n");
    assert_eq!(stdout(&convseq(&["params", "--config", c, "--d", "64"])), "12288 192 24\n");
    assert_eq!(stdout(&convseq(&["params", "--d", "64", &format!("--config={c}")])), "12288 192 24\n");
}

#[test]
fn bench_writes_one_row_per_mechanism_and_length() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cost.csv");
    let o = convseq(&[
        "bench", "--n", "16,32,64", "--d", "16", "--heads", "4", "--k", "3", "--repeats", "11", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 10);
    assert_eq!(
        lines[0],
        "mechanism,n,d,H,k,context_macs,projection_macs,wall_ns_median,wall_ns_mad,repeats,seed"
    );
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 11 && l.ends_with(",11,1")));
}

#[test]
fn gradcheck_reports_every_check() {
    let o = convseq(&["gradcheck", "--module", "numeric-core", "--seed", "2"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().count() > 5);
    assert!(out.lines().all(|l| l.starts_with("numeric-core ") && l.ends_with("PASS") && l.contains("seed=2")));
    assert_eq!(convseq(&["gradcheck", "--module", "nope"]).status.code(), Some(1));
}

#[test]
fn train_then_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let ckpt = dir.path().join("m.ckpt");
    let o = convseq(&[
        "train", "--d", "16", "--d-ff", "32", "--layers", "1", "--heads", "2", "--steps", "20", "--warmup", "5",
        "--eval-every", "10", "--heldout", "16", "--batch-size", "8", "--log", log.to_str().unwrap(),
        "--checkpoint", ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,lr,loss,token_accuracy");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("20,"));

    let o = convseq(&["decode", "--checkpoint", ckpt.to_str().unwrap(), "--input", "4 5 6", "--max-len", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ids: Vec<usize> = stdout(&o).split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!(!ids.is_empty() && ids.len() <= 5 && ids.iter().all(|&t| t < 20));
    let greedy = convseq(&["decode", "--checkpoint", ckpt.to_str().unwrap(), "--input", "4,5,6", "--greedy"]);
    assert!(greedy.status.success());
}

#[test]
fn divergence_exits_with_two() {
    let o = convseq(&[
        "train", "--d", "16", "--d-ff", "32", "--layers", "1", "--heads", "2", "--steps", "5", "--warmup", "1",
        "--lr-min", "1e300", "--lr-max", "1e300", "--normalizer", "none", "--mechanism", "dynamicconv",
        "--heldout", "8", "--batch-size", "4",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
