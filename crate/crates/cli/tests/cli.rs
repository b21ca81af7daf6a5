use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reference() -> String {
    fs::read_to_string(repo().join("configs/reference.cfg")).unwrap()
}

fn set(text: &str, key: &str, value: &str) -> String {
    text.lines()
        .map(|l| if l.split(" = ").next() == Some(key) { format!("{key} = {value}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("model.cfg");
    fs::write(&p, text).unwrap();
    p
}

fn mfs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfs")).args(args).env_remove("MFS_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn lists(m: &serde_json::Value, file: &str) -> bool {
    m["files"].as_array().unwrap().iter().any(|f| f == file)
}

#[test]
fn check_reference_passes() {
    let cfg = repo().join("configs/reference.cfg");
    let o = mfs(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 4);
    for name in ["A2.2", "A3.4", "A3.5"] {
        assert!(out.lines().any(|l| l.starts_with(name) && l.contains("pass")), "{out}");
    }
}

#[test]
fn check_zero_follower_weight_names_the_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &set(&reference(), "R1", "0.0"));
    let o = mfs(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("A2.2") && l.contains("FAIL")));
}

#[test]
fn missing_or_bad_config_is_exit_two() {
    let o = mfs(&["check", "--config", "/definitely/not/here.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &set(&reference(), "lambda", "1.5"));
    assert_eq!(mfs(&["check", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn synthesize_reference_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/reference.cfg");
    let out = dir.path().join("out");
    let o = mfs(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--steps", "250"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    for (name, width) in [("p.csv", 3), ("gamma1.csv", 10), ("gamma2.csv", 10), ("mean_profiles.csv", 9)] {
        let (header, rows) = csv(&out.join(name));
        assert_eq!(header.len(), width, "{name}");
        assert_eq!(rows.len(), 251, "{name}");
        assert!(rows.iter().flatten().all(|v| v.is_finite()), "{name}");
        assert!(lists(&m, name), "{name}");
    }
    assert_eq!(m["exit_code"], 0);
}

#[test]
fn zero_dynamics_give_constant_trajectories() {
    let mut text = reference();
    for line in reference().lines() {
        let key = line.split(" = ").next().unwrap();
        if !line.starts_with('#') && !["R0", "R1", "T_horizon", "steps", "agents_N", "mc_paths", "seed", "faithful_typos"].contains(&key) {
            text = set(&text, key, "0.0");
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = mfs(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--steps", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["p.csv", "gamma1.csv", "gamma2.csv", "mean_profiles.csv"] {
        let (_, rows) = csv(&out.join(name));
        for col in 1..rows[0].len() {
            assert!(rows.iter().all(|r| r[col] == rows[0][col]), "{name} column {col}");
        }
    }
}

#[test]
fn gamma2_escape_is_exit_three_with_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/gamma2_escape.cfg");
    let out = dir.path().join("out");
    let o = mfs(&["synthesize", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Gamma2") && err.contains("escape at t ="), "{err}");
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 3);
    assert!(!out.join("p.csv").exists());
}

#[test]
fn simulate_is_reproducible_across_threads_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/reference.cfg");
    let run = |name: &str, threads: &str, seed_env: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfs"));
        cmd.args(["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .args(["--agents", "20", "--paths", "8", "--steps", "100", "--threads", threads])
            .env_remove("MFS_SEED");
        if let Some(s) = seed_env {
            cmd.env("MFS_SEED", s);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("epsilon(N)"));
        out
    };
    let a = run("a", "1", None);
    let b = run("b", "4", None);
    let c = run("c", "1", Some("17"));
    for f in ["paths.csv", "costs.csv", "path_costs.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), fs::read(c.join("paths.csv")).unwrap());
    assert_eq!(manifest(&c)["seed"], 17);
    let (header, rows) = csv(&a.join("paths.csv"));
    assert_eq!(header, ["t", "x_N", "z", "x0", "xcheck1", "xcheck2", "xcheck3"]);
    assert_eq!(rows.len(), 101);
}

#[test]
fn two_point_sweep_fits_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/reference.cfg");
    let out = dir.path().join("out");
    let o = mfs(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--agents", "5,20", "--paths", "4", "--steps", "50",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("r2 = 1.0000"), "{text}");
    let (header, rows) = csv(&out.join("epsilon_sweep.csv"));
    assert_eq!(header, ["N", "epsilon", "stderr"]);
    assert_eq!(rows.len(), 2);
    let gaps = fs::read_to_string(out.join("gaps.csv")).unwrap();
    assert!(gaps.starts_with("who,direction_id,delta,gap,stderr\n"));
    assert!(gaps.lines().skip(1).any(|l| l.starts_with("leader,")));
    assert!(gaps.lines().skip(1).any(|l| l.starts_with("follower1,")));
}

#[test]
fn single_path_sweep_reports_without_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/reference.cfg");
    let out = dir.path().join("out");
    let o = mfs(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--agents", "3,6,9", "--paths", "1", "--steps", "40",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("not claimed") && !text.contains("FAIL") && text.contains("inf"), "{text}");
}

#[test]
fn unordered_agents_are_rejected_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo().join("configs/reference.cfg");
    let out = dir.path().join("out");
    let o = mfs(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--agents", "10,5", "--steps", "20"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(manifest(&out)["exit_code"], 2);
}
