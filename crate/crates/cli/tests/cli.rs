use std::path::Path;
use std::process::{Command, Output};

fn isf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isf"))
        .args(args)
        .current_dir(dir)
        .env_remove("ISF_THREADS")
        .output()
        .expect("spawn isf")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = isf(dir, args);
    assert!(
        out.status.success(),
        "isf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generate_writes_all_states() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--model", "shaw-pierre", "--traj", "100", "--points", "16", "--dt", "0.8", "--seed", "1", "--out", "d.csv"]);
    assert_eq!(data_rows(&dir.path().join("d.csv")), 1600);
    let head = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert!(head.starts_with("traj_id,step,x_1,x_2,x_3,x_4\n"));
    assert!(dir.path().join("d.csv.json").exists());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    assert!(manifest.contains("\"subcommand\":\"generate\""));
}

#[test]
fn same_seed_same_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(d.path(), &["generate", "--traj", "20", "--seed", "5", "--out", "d.csv"]);
        ok(d.path(), &["fit", "--data", "d.csv", "--order", "3", "--max-iter", "40", "--out", "f.json"]);
    }
    for f in ["d.csv", "d.csv.json", "f.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    ok(a.path(), &["generate", "--traj", "20", "--seed", "6", "--out", "e.csv"]);
    assert_ne!(std::fs::read(a.path().join("d.csv")).unwrap(), std::fs::read(a.path().join("e.csv")).unwrap());
}

#[test]
fn fit_prints_residual_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--traj", "30", "--seed", "1", "--out", "train.csv"]);
    ok(dir.path(), &["generate", "--traj", "10", "--seed", "2", "--out", "test.csv"]);
    let out = ok(
        dir.path(),
        &["fit", "--data", "train.csv", "--test", "test.csv", "--order", "3", "--sigma", "2", "--beta", "auto", "--max-iter", "60", "--out", "f.json"],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines[0].contains("training E1") && lines[0].contains("testing E1"), "{out}");
    assert!(lines[1].starts_with("DATA O(3) σ=2"), "{out}");
    let cells: Vec<&str> = lines[1].split('|').map(str::trim).collect();
    for c in &cells[1..] {
        let v: f64 = c.parse().unwrap();
        assert!(v.is_finite() && v > 0.0);
    }
    assert!(dir.path().join("f.json").exists());

    let report = ok(dir.path(), &["report", "."]);
    assert!(report.contains("DATA O(3) σ=2"), "{report}");
    assert!(report.contains(cells[1]), "{report}");
}

#[test]
fn backbone_grid_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["expand", "--order", "3", "--out", "f.json"]);
    ok(dir.path(), &["backbone", "--foliation", "f.json", "--rmax", "0.2", "--grid", "50", "--out-dir", "bb"]);
    for kind in ["isf", "damping_isf"] {
        let path = dir.path().join(format!("bb/backbone_{kind}.csv"));
        assert_eq!(data_rows(&path), 50);
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("r,omega,zeta,delta,valid\n"));
    }
    assert!(!dir.path().join("bb/backbone_ssm.csv").exists());
    assert!(dir.path().join("bb/manifest.jsonl").exists());
}

#[test]
fn backbone_with_partner_adds_ssm_curves() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["expand", "--order", "3", "--mode", "0", "--out", "a.json"]);
    ok(dir.path(), &["expand", "--order", "3", "--mode", "2", "--out", "b.json"]);
    ok(dir.path(), &["backbone", "--foliation", "a.json", "--partner", "b.json", "--grid", "7", "--out-dir", "."]);
    assert_eq!(data_rows(&dir.path().join("backbone_ssm.csv")), 7);
    assert_eq!(data_rows(&dir.path().join("backbone_damping_ssm.csv")), 7);
}

#[test]
fn leaves_and_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["expand", "--order", "3", "--out", "a.json"]);
    ok(dir.path(), &["leaves", "--foliation", "a.json", "--nz", "2", "--nangles", "4", "--ny", "3", "--out", "l.csv"]);
    let text = std::fs::read_to_string(dir.path().join("l.csv")).unwrap();
    assert!(text.starts_with("p1,p2,p3,p4,x1,x2,x3,x4,converged\n"));
    // (1 + 2·4) parameter points × 2 transverse axes × 3 samples
    assert_eq!(text.lines().count() - 1, 9 * 2 * 3);

    ok(dir.path(), &["generate", "--traj", "40", "--seed", "3", "--out", "d.csv"]);
    ok(dir.path(), &["fit", "--data", "d.csv", "--mode", "0", "--max-iter", "40", "--out", "f0.json"]);
    ok(dir.path(), &["fit", "--data", "d.csv", "--mode", "2", "--max-iter", "40", "--out", "f1.json"]);
    ok(
        dir.path(),
        &["reconstruct", "--foliation", "f0.json", "--foliation", "f1.json", "--x0", "0.05,-0.02,0.03,0.01", "--steps", "8", "--out", "e.csv"],
    );
    let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert!(text.starts_with("k,err_fw,err_bw\n"));
    assert_eq!(text.lines().count() - 1, 9);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(isf(dir.path(), &["--no-such-flag"]).status.code(), Some(2));
    assert_eq!(isf(dir.path(), &["fit"]).status.code(), Some(2));
    assert_eq!(isf(dir.path(), &["fit", "--data", "x.csv", "--beta", "-1"]).status.code(), Some(2));
    assert_eq!(isf(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = isf(dir.path(), &["fit", "--data", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(isf(dir.path(), &["backbone", "--foliation", "missing.json"]).status.code(), Some(1));
}
