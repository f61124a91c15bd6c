use std::path::Path;
use std::process::{Command, Output};

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unlearn-lab"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&lab(&["unlearn", "--set", "unlearn.gamma=1.5"], d)), 2);
    assert_eq!(code(&lab(&["unlearn", "--set", "no_such_field=1"], d)), 2);
    assert_eq!(code(&lab(&["sweep"], d)), 2);
    assert_eq!(code(&lab(&["unlearn", "--config", "/nonexistent/x.toml"], d)), 4);
    assert_eq!(code(&lab(&["report", "--run-dir", "/nonexistent"], d)), 4);
    assert_eq!(code(&lab(&["unlearn", "--set", "pretrain.lr=1e300", "--no-svg"], d)), 3);
    assert_eq!(code(&lab(&["bogus-subcommand"], d)), 2);
}

#[test]
fn subcommands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = lab(&["gen-data", "--dry-run"], d);
    assert_eq!(code(&o), 0);
    assert!(!d.join("dataset.bin").exists());

    assert_eq!(code(&lab(&["gen-data"], d)), 0);
    assert!(d.join("dataset.bin").exists() && d.join("corpus.json").exists());
    assert_eq!(code(&lab(&["gen-data"], d)), 2, "refuses to overwrite");
    assert_eq!(code(&lab(&["gen-data", "--force", "--seed", "3"], d)), 0);

    assert_eq!(code(&lab(&["pretrain"], d)), 0);
    assert!(d.join("original.ckpt").exists() && d.join("gold.ckpt.json").exists());

    let o = lab(&["tru"], d);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["arms"].as_array().unwrap().len(), 2);

    let o = lab(&["calibrate-uwc", "--target", "0.9"], d);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert!(v[0]["result"]["retention_proxy"].is_string());

    let o = lab(&["verify-theorems", "--instances", "50"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["theorem1"]["instances"], 50);

    let o = lab(&["unlearn", "--seed", "4", "--no-svg"], d);
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let run_dir = m["run_dir"].as_str().unwrap().to_string();
    assert_eq!(m["seeds"][0], 4);
    assert_eq!(code(&lab(&["report", "--run-dir", &run_dir], d)), 0);
    assert!(Path::new(&run_dir).join("cos_GA.svg").exists());

    let sw = d.join("sweep");
    let o = lab(&["sweep", "--grid", "unlearn.gamma=0.3,0.6", "--workers", "2", "--no-svg"], &sw);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(sw.join("sweep_summary.csv")).unwrap().lines().count(), 3);
}
