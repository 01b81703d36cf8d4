use std::path::Path;
use std::process::{Command, Output};

use memlb_core::instance::HardInstance;

fn memlb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memlb"))
        .args(args)
        .env_remove("MEMLB_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {line}"))
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_round_trips_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        let o = memlb(&["gen", "-d", "16", "--N", "2", "-k", "2", "--seed", "1", "-o", path_arg(p)]);
        assert_eq!(code(&o), 0);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let inst = HardInstance::from_text(&text).unwrap();
    assert_eq!(inst.to_text(), text);
    assert_eq!(inst.vectors().len(), 2);
}

#[test]
fn gen_refuses_depth_over_cap() {
    let o = memlb(&["gen", "-d", "16", "--gamma", "0.05", "--N", "40"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exceeds the cap"));
    let o = memlb(&["gen", "-d", "16", "--gamma", "0.05", "--N", "40", "--allow-over-cap"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn run_subgradient_descent_within_classic_bound() {
    let o = memlb(&[
        "run", "-d", "32", "--algorithm", "sd", "--scaling", "lipschitz", "--epsilon", "0.05", "--max-queries", "401",
        "--seeds", "0..3",
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    for line in stdout(&o).lines() {
        let q: usize = field(line, "queries_to_eps").parse().unwrap();
        assert!(q <= 401);
    }
}

#[test]
fn run_ellipsoid_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.jsonl");
    let o = memlb(&["run", "-d", "16", "--algorithm", "ellipsoid", "-o", path_arg(&out)]);
    assert_eq!(code(&o), 0);
    let line = stdout(&o);
    let q: f64 = field(line.trim(), "queries_to_eps").parse().unwrap();
    let eps: f64 = field(line.trim(), "eps").parse().unwrap();
    assert!(q <= 10.0 * 256.0 * (1.0 / eps).ln());
    let jsonl = std::fs::read_to_string(&out).unwrap();
    assert_eq!(jsonl.lines().count() as f64, q);
    let first: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    for key in ["step", "x", "value", "branch", "informative", "state_bits"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn budget_below_state_is_a_violation() {
    let o = memlb(&["run", "-d", "16", "--algorithm", "ellipsoid", "--M", "100"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("status=violation"));
}

#[test]
fn unreached_target_is_benign() {
    let o = memlb(&["run", "-d", "16", "--algorithm", "origin", "--max-queries", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("status=not_reached"));
}

#[test]
fn ovg_exit_codes_follow_outcome() {
    let o = memlb(&["ovg", "-d", "32", "-k", "4", "--seeds", "0..3"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches("outcome=win").count(), 3);
    let o = memlb(&[
        "ovg", "-d", "32", "-k", "4", "--strategy", "query-rows", "--variant", "index", "-m", "16", "--M", "0",
    ]);
    assert_eq!(code(&o), 0);
    let o = memlb(&["ovg", "-d", "32", "-k", "4", "--strategy", "return-rows"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn ovg_transcript_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for p in [&a, &b] {
        memlb(&["ovg", "-d", "16", "-k", "2", "--seed", "4", "-o", path_arg(p)]);
    }
    let ta = std::fs::read_to_string(&a).unwrap();
    assert!(!ta.is_empty());
    assert_eq!(ta, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn sweep_grid_shape_and_rerun() {
    let args = ["sweep", "--seeds", "0", "--max-queries", "200", "--workers", "3"];
    let a = memlb(&args);
    assert_eq!(code(&a), 0);
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# memlb sweep v1"));
    assert_eq!(
        lines.next(),
        Some("d,M,algorithm,seed,queries_to_eps,best_gap,informative_count,win,status")
    );
    assert_eq!(lines.count(), 12);
    let b = memlb(&["sweep", "--seeds", "0", "--max-queries", "200", "--workers", "1"]);
    assert_eq!(text, stdout(&b));
}

#[test]
fn empty_seed_sweep_is_header_only() {
    let o = memlb(&["sweep", "--seeds", ""]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn env_seed_overrides_flag() {
    let flag = memlb(&["run", "--algorithm", "nullspace", "-d", "24", "--seed", "7"]);
    let env = Command::new(env!("CARGO_BIN_EXE_memlb"))
        .args(["run", "--algorithm", "nullspace", "-d", "24", "--seed", "3"])
        .env("MEMLB_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(stdout(&flag), stdout(&env));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, "# nullspace run\nmode = run\nalgorithm = nullspace\nd = 24\nseeds = 0..2\n").unwrap();
    let o = memlb(&["--config", path_arg(&cfg)]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().all(|l| field(l, "algorithm") == "nullspace" && field(l, "d") == "24"));
    let o = memlb(&["run", "--config", path_arg(&cfg), "-d", "16"]);
    assert!(stdout(&o).lines().all(|l| field(l, "d") == "16"));
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = memlb(&["--config", path_arg(&cfg)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let o = memlb(&["verify", "--profile", "quick", "--verbose"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).all(|l| l.contains("checks=")));
    let o = memlb(&["verify", "--profile", "quick", "--fault", "0,0"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("FAIL subgradient-validity"));
}
