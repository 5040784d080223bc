use std::path::Path;
use std::process::{Command, Output};

fn cylren(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cylren"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn gaussian_wick_four_is_hermite() {
    let dir = tempfile::tempdir().unwrap();
    let out = cylren(&["wick", "--family", "gaussian", "--n", "0", "--k", "4"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let coeffs: Vec<String> = read(dir.path(), "wick.jsonl")
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["coefficient"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(coeffs, ["1", "0", "-6", "0", "3"]);
    assert!(read(dir.path(), "wick.csv").starts_with("family,n,k,power,coefficient\n"));
}

#[test]
fn gamma_compatibility_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = cylren(
        &["verify-compat", "--family", "gamma", "--alpha", "1", "--beta", "1", "--levels", "0..4"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = read(dir.path(), "verify-compat.csv");
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = Command::new(env!("CARGO_BIN_EXE_cylren")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn validation_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["wick", "--family", "poisson"][..],
        &["wick", "--alpha", "-2"],
        &["kinetic-ren", "--n", "0"],
        &["graph-expand", "--family", "gaussian"],
        &["divergence-scan", "--d", "3"],
    ] {
        let out = cylren(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn failed_checks_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = cylren(&["mc-check", "--samples", "2000", "--z", "1e-9"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "mc-check.manifest.json")).unwrap();
    assert_eq!(manifest["checks"]["passed"], false);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let args = ["mc-check", "--samples", "40000", "--seed", "9"];
    let with_threads = |t: &'static str| [&args[..], &["--threads", t]].concat();
    assert_eq!(cylren(&with_threads("1"), a.path()).status.code(), Some(0));
    assert_eq!(cylren(&with_threads("1"), b.path()).status.code(), Some(0));
    assert_eq!(cylren(&with_threads("4"), c.path()).status.code(), Some(0));
    for f in ["mc-check.jsonl", "mc-check.csv", "mc-check.manifest.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    for f in ["mc-check.jsonl", "mc-check.csv"] {
        assert_eq!(read(a.path(), f), read(c.path(), f), "{f}");
    }
}

#[test]
fn config_file_with_flag_override_and_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "[family]\nkind = \"gamma\"\nalpha = \"3/2\"\n[lattice]\nn = 2\nm = 1\n[caps]\nk = 12\n",
    )
    .unwrap();
    let out_dir = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_cylren"))
        .args(["cond-exp", "--config"])
        .arg(&cfg)
        .args(["--n", "1"])
        .env("CYLREN_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&read(&out_dir, "cond-exp.manifest.json")).unwrap();
    assert_eq!(manifest["config"]["n"], 1);
    assert_eq!(manifest["config"]["k"], 6);
    assert_eq!(manifest["config"]["family"]["params"]["alpha"], "3/2");
    assert_eq!(manifest["config"]["clamped"][0], "k: 12 -> 6");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn graph_expand_lists_sorted_edges() {
    let dir = tempfile::tempdir().unwrap();
    let out = cylren(&["graph-expand", "--n", "1", "--m", "1", "--max-edges", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let first: serde_json::Value =
        serde_json::from_str(read(dir.path(), "graph-expand.jsonl").lines().next().unwrap()).unwrap();
    assert_eq!(first["graph"], serde_json::json!([[0, 0]]));
    // E[y_0² | x] = r² (α_2)_2 / (α_1)_2 · x² with α_0 = 1, d = 1.
    assert_eq!(first["chi"], "5/3");
}
