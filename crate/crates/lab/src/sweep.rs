//! Cartesian-product sweeps over config fields, run in parallel.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use unlearn_core::{Error, Result};

use crate::config::{parse_scalar, set_path, ExperimentConfig};
use crate::experiment::{run_experiment, RunManifest, RunOptions, Summary};

/// One grid dimension: a dotted config path and its candidate values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub path: String,
    pub values: Vec<toml::Value>,
}

/// Parses `unlearn.gamma=0.01,0.05,0.1`.
pub fn parse_axis(text: &str) -> Result<GridAxis> {
    let (path, vals) = text.split_once('=').ok_or_else(|| Error::Usage(format!("grid axis '{text}' must look like path=v1,v2")))?;
    let values: Vec<toml::Value> = vals.split(',').filter(|v| !v.trim().is_empty()).map(parse_scalar).collect();
    if path.trim().is_empty() || values.is_empty() {
        return Err(Error::Usage(format!("grid axis '{text}' has no values")));
    }
    Ok(GridAxis { path: path.trim().to_string(), values })
}

/// Every combination, as `(label, overrides)`; the last axis varies fastest.
pub fn expand(grid: &[GridAxis]) -> Vec<Vec<(String, toml::Value)>> {
    let mut points: Vec<Vec<(String, toml::Value)>> = vec![Vec::new()];
    for axis in grid {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.path.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn label(point: &[(String, toml::Value)]) -> String {
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

/// Resolves every grid point against `base`; fails before running anything if
/// any point does not validate.
pub fn resolve(base: &toml::Value, grid: &[GridAxis]) -> Result<Vec<(String, ExperimentConfig)>> {
    if grid.is_empty() {
        return Err(Error::Usage("sweep grid is empty".into()));
    }
    expand(grid)
        .into_iter()
        .map(|point| {
            let mut v = base.clone();
            for (k, val) in &point {
                set_path(&mut v, k, val.clone())?;
            }
            let cfg = ExperimentConfig::from_value(v).map_err(|e| Error::Usage(format!("grid point '{}': {e}", label(&point))))?;
            Ok((label(&point), cfg))
        })
        .collect()
}

/// Runs every grid point with up to `workers` threads and writes
/// `sweep_summary.csv` (one row per point) and `sweep_table.csv` (one row per
/// arm and metric, one column per point) into `out_dir`.
pub fn sweep(base: &toml::Value, grid: &[GridAxis], out_dir: &Path, workers: usize, opts: RunOptions) -> Result<Vec<RunManifest>> {
    let points = resolve(base, grid)?;
    if opts.dry_run {
        return points.iter().map(|(_, c)| run_experiment(c, out_dir, opts)).collect();
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io { path: out_dir.to_path_buf(), source: e })?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunManifest>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, cfg)) = points.get(i) else { break };
                let r = run_experiment(cfg, out_dir, opts);
                results.lock().expect("no poisoned runs")[i] = Some(r);
            });
        }
    });
    let manifests: Vec<RunManifest> = results
        .into_inner()
        .expect("no poisoned runs")
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect::<Result<_>>()?;
    write_tables(&points, &manifests, out_dir)?;
    Ok(manifests)
}

fn read_summary(m: &RunManifest) -> Result<Summary> {
    let p = Path::new(&m.run_dir).join("summary.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: p, msg: e.to_string() })
}

fn write_tables(points: &[(String, ExperimentConfig)], manifests: &[RunManifest], out_dir: &Path) -> Result<()> {
    let summaries: Vec<Summary> = manifests.iter().map(read_summary).collect::<Result<_>>()?;
    let csv_err = |e: csv::Error| Error::Usage(format!("csv: {e}"));
    let new = || csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());

    let mut rows = new();
    rows.write_record(["point", "config_hash", "arm", "fq_proxy", "mu_proxy", "forget_nll", "retain_nll", "retain_risk_increase"]).map_err(csv_err)?;
    // one row per grid point: arms are joined inside the fields
    for ((label, _), s) in points.iter().zip(&summaries) {
        let join = |f: &dyn Fn(&crate::experiment::ArmSummary) -> String| s.arms.iter().map(f).collect::<Vec<_>>().join(";");
        rows.write_record([
            label.clone(),
            s.config_hash.clone(),
            join(&|a| a.name.clone()),
            join(&|a| format!("{:.6e}", a.eval.fq_proxy)),
            join(&|a| format!("{:.6e}", a.eval.mu_proxy)),
            join(&|a| format!("{:.6e}", a.eval.forget_nll)),
            join(&|a| format!("{:.6e}", a.eval.retain_nll)),
            join(&|a| format!("{:.6e}", a.retain_risk_increase)),
        ])
        .map_err(csv_err)?;
    }

    let mut table = new();
    let mut header = vec!["arm".to_string(), "metric".to_string()];
    header.extend(points.iter().map(|(l, _)| l.clone()));
    table.write_record(&header).map_err(csv_err)?;
    let arm_names: Vec<String> = summaries.first().map(|s| s.arms.iter().map(|a| a.name.clone()).collect()).unwrap_or_default();
    for arm in &arm_names {
        for (metric, f) in [
            ("fq_proxy", (|a: &crate::experiment::ArmSummary| a.eval.fq_proxy) as fn(&crate::experiment::ArmSummary) -> f64),
            ("mu_proxy", |a| a.eval.mu_proxy),
        ] {
            let mut row = vec![arm.clone(), metric.to_string()];
            row.extend(summaries.iter().map(|s| {
                s.arms.iter().find(|a| &a.name == arm).map(|a| format!("{:.6e}", f(a))).unwrap_or_default()
            }));
            table.write_record(&row).map_err(csv_err)?;
        }
    }
    for (name, w) in [("sweep_summary.csv", rows), ("sweep_table.csv", table)] {
        let p = out_dir.join(name);
        let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
        std::fs::write(&p, bytes).map_err(|e| Error::Io { path: p, source: e })?;
    }
    Ok(())
}
