use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use unlearn_core::metrics::read_trajectory_csv;
use unlearn_core::Error;
use unlearn_lab::config::{desk, Arm, ExperimentConfig, DESK_CONFIG};
use unlearn_lab::experiment::{read_manifest, run_experiment, RunOptions};
use unlearn_lab::report::{emit_report, polyline_point_counts, Report};
use unlearn_lab::sweep::{parse_axis, resolve, sweep};

fn opts(svg: bool) -> RunOptions {
    RunOptions { force: false, dry_run: false, svg }
}

fn files(dir: &Path) -> BTreeSet<String> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect()
}

#[test]
fn dry_run_writes_nothing() {
    let out = tempfile::tempdir().unwrap();
    let m = run_experiment(&desk(), out.path(), RunOptions { dry_run: true, ..opts(true) }).unwrap();
    assert!(m.artifacts.is_empty());
    assert_eq!(m.resolved_config, desk());
    assert_eq!(fs::read_dir(out.path()).unwrap().count(), 0);
}

#[test]
fn manifest_lists_exactly_the_files_and_guards_reruns() {
    let out = tempfile::tempdir().unwrap();
    let cfg = desk();
    let m = run_experiment(&cfg, out.path(), opts(true)).unwrap();
    assert_eq!(m.status, "complete");
    let dir = Path::new(&m.run_dir);
    let listed: BTreeSet<String> = m.artifacts.iter().map(|a| a.path.clone()).collect();
    assert_eq!(listed.len(), m.artifacts.len(), "duplicate manifest entries");
    assert_eq!(listed, files(dir));
    assert_eq!(read_manifest(dir).unwrap(), m);

    // paired arms consume the same mini-batches
    for loss in ["GA", "NPO"] {
        let a = fs::read(dir.join(format!("batches_{loss}_gru.csv"))).unwrap();
        let b = fs::read(dir.join(format!("batches_{loss}_baseline.csv"))).unwrap();
        assert_eq!(a, b);
    }

    // one polyline point per trajectory row
    for loss in ["GA", "NPO"] {
        let rows = read_trajectory_csv(&dir.join(format!("trajectory_{loss}_gru.csv"))).unwrap().len();
        for fig in [format!("cos_{loss}.svg"), format!("retain_risk_{loss}.svg")] {
            let svg = fs::read_to_string(dir.join(fig)).unwrap();
            assert_eq!(polyline_point_counts(&svg), vec![rows, rows]);
        }
    }

    let again = run_experiment(&cfg, out.path(), opts(true));
    assert!(matches!(again, Err(Error::Usage(_))));
    let forced = run_experiment(&cfg, out.path(), RunOptions { force: true, ..opts(true) }).unwrap();
    assert_eq!(forced.config_hash, m.config_hash);

    // re-emitting without SVG removes the figures and keeps the manifest exact
    emit_report(dir, false).unwrap();
    let m2 = read_manifest(dir).unwrap();
    assert!(files(dir).iter().all(|f| !f.ends_with(".svg")));
    assert_eq!(m2.artifacts.iter().map(|a| a.path.clone()).collect::<BTreeSet<_>>(), files(dir));

    fs::remove_file(dir.join("summary.json")).unwrap();
    let err = emit_report(dir, true).unwrap_err();
    assert!(err.to_string().contains("summary.json"), "{err}");
}

#[test]
fn no_svg_flag_writes_no_figures() {
    let out = tempfile::tempdir().unwrap();
    let m = run_experiment(&desk(), out.path(), opts(false)).unwrap();
    assert!(files(Path::new(&m.run_dir)).iter().all(|f| !f.ends_with(".svg")));
    assert!(m.artifacts.iter().all(|a| a.kind != "svg"));
}

#[test]
fn baseline_only_report() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = desk();
    cfg.unlearn.arms = vec![Arm::Baseline];
    cfg.unlearn.losses = vec![unlearn_core::losses::LossKind::Ga];
    cfg.calibration = None;
    cfg.tru = None;
    let m = run_experiment(&cfg, out.path(), opts(true)).unwrap();
    let report: Report = serde_json::from_str(&fs::read_to_string(Path::new(&m.run_dir).join("report.json")).unwrap()).unwrap();
    assert_eq!(report.sections.len(), 1);
    assert!(report.sections[0].baseline_only);
    assert!(report.sections[0].arms.iter().all(|a| !a.rectify));
    let svg = fs::read_to_string(Path::new(&m.run_dir).join("cos_GA.svg")).unwrap();
    assert_eq!(polyline_point_counts(&svg).len(), 1);
}

#[test]
fn failing_stage_is_recorded() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = desk();
    // large enough to overflow the tabular logits
    cfg.pretrain.lr = 1e300;
    let err = run_experiment(&cfg, out.path(), opts(false)).unwrap_err();
    assert!(matches!(err, Error::Numeric { .. }), "{err}");
    let dir = unlearn_lab::experiment::run_dir_for(&cfg, out.path());
    let m = read_manifest(&dir).unwrap();
    assert_eq!(m.status, "failed");
    assert_eq!(m.failure_stage.as_deref(), Some("pretrain"));
    assert!(dir.join("config.resolved.toml").exists());
}

#[test]
fn one_point_sweep_matches_run_experiment() {
    let base: toml::Value = toml::from_str(DESK_CONFIG).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ms = sweep(&base, &[parse_axis("seed=0").unwrap()], a.path(), 2, opts(false)).unwrap();
    let m = run_experiment(&desk(), b.path(), opts(false)).unwrap();
    assert_eq!(ms.len(), 1);
    assert_eq!(ms[0].config_hash, m.config_hash);
    for f in files(Path::new(&m.run_dir)).iter().filter(|f| f.ends_with(".csv")) {
        assert_eq!(fs::read(Path::new(&ms[0].run_dir).join(f)).unwrap(), fs::read(Path::new(&m.run_dir).join(f)).unwrap(), "{f}");
    }
    let rows = fs::read_to_string(a.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
}

#[test]
fn sweep_shapes() {
    let base: toml::Value = toml::from_str(DESK_CONFIG).unwrap();
    let gammas = parse_axis("unlearn.gamma=0.01,0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.99").unwrap();
    let points = resolve(&base, &[gammas, parse_axis("unlearn.tau=0.5").unwrap()]).unwrap();
    assert_eq!(points.len(), 12);
    assert!(matches!(resolve(&base, &[]), Err(Error::Usage(_))));
    assert!(matches!(resolve(&base, &[parse_axis("unlearn.nonsense=1").unwrap()]), Err(Error::Usage(_))));

    let out = tempfile::tempdir().unwrap();
    let grid = [parse_axis("unlearn.gamma=0.2,0.8").unwrap(), parse_axis("seed=1,2").unwrap()];
    let ms = sweep(&base, &grid, out.path(), 3, opts(false)).unwrap();
    assert_eq!(ms.len(), 4);
    let summary = fs::read_to_string(out.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
    let table = fs::read_to_string(out.path().join("sweep_table.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 4);
    // four arms, two metrics each
    assert_eq!(table.lines().count(), 1 + 8);
    let hashes: BTreeSet<_> = ms.iter().map(|m| m.config_hash.clone()).collect();
    assert_eq!(hashes.len(), 4);
}

#[test]
fn config_roundtrip_through_resolved_file() {
    let out = tempfile::tempdir().unwrap();
    let m = run_experiment(&desk(), out.path(), opts(false)).unwrap();
    let text = fs::read_to_string(Path::new(&m.run_dir).join("config.resolved.toml")).unwrap();
    let back = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(back.config_hash(), m.config_hash);
}
