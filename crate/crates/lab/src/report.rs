//! Report emission: a JSON digest of a run plus optional SVG line charts of
//! the per-step cosine and retain risk, one chart per objective with every arm
//! overlaid.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unlearn_core::metrics::{read_trajectory_csv, StepRecord};
use unlearn_core::{Error, Result};

use crate::experiment::{read_manifest, ArmSummary, Summary, Writer, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmDigest {
    pub name: String,
    pub rectify: bool,
    pub fq_proxy: f64,
    pub mu_proxy: f64,
    pub final_unlearn_loss: Option<f64>,
    pub final_retain_risk: f64,
    pub retain_risk_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub loss: String,
    pub arms: Vec<ArmDigest>,
    /// True when only the unrectified arm ran.
    pub baseline_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment_id: String,
    pub config_hash: String,
    pub fq_statistic: String,
    pub original_fq_proxy: f64,
    pub original_mu_proxy: f64,
    pub gold_fq_proxy: f64,
    pub sections: Vec<Section>,
    pub figures: Vec<String>,
}

fn loss_tag(a: &ArmSummary) -> String {
    serde_json::to_value(a.loss).expect("loss tag").as_str().expect("string").to_string()
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Self-contained SVG with one polyline per series. Every series value becomes
/// exactly one polyline point.
pub fn line_chart(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let all = series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * ((if v.is_finite() { v } else { lo }) - lo) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black" stroke-width="1"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{hi:.4}</text>"#, PAD - 4.0);
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{lo:.4}</text>"#, H - PAD + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">step</text>"#, W - PAD, H - 12.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {})">{y_label}</text>"#, H / 2.0, H / 2.0);
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(s, r##"<line x1="{PAD}" x2="{}" y1="{1}" y2="{1}" stroke="#999" stroke-dasharray="4 3"/>"##, W - PAD, y(0.0));
    }
    for (k, (name, vals)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = vals.iter().enumerate().map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v))).collect();
        let _ = writeln!(s, r#"<polyline data-series="{name}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let ly = PAD + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#, W - PAD - 120.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Number of points in each polyline of an SVG produced by [`line_chart`].
pub fn polyline_point_counts(svg: &str) -> Vec<usize> {
    svg.split("points=\"")
        .skip(1)
        .map(|rest| rest.split('"').next().unwrap_or("").split_whitespace().count())
        .collect()
}

fn cos_series(recs: &[StepRecord]) -> Vec<f64> {
    // steps with an undefined cosine are drawn at 0
    recs.iter().map(|r| r.cos_post.unwrap_or(0.0)).collect()
}

/// Writes `report.json` and, with `svg`, the figures into the writer's directory.
pub fn emit_report_into(w: &mut Writer, summary: &Summary, svg: bool) -> Result<Report> {
    let mut losses: Vec<String> = Vec::new();
    for a in &summary.arms {
        let t = loss_tag(a);
        if !losses.contains(&t) {
            losses.push(t);
        }
    }
    let mut sections = Vec::new();
    let mut figures = Vec::new();
    for loss in &losses {
        let arms: Vec<&ArmSummary> = summary.arms.iter().filter(|a| &loss_tag(a) == loss).collect();
        let mut cos = Vec::new();
        let mut risk = Vec::new();
        let mut digests = Vec::new();
        for a in &arms {
            let p = w.path(&a.trajectory);
            if !p.exists() {
                return Err(Error::Io {
                    path: p,
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "trajectory listed in summary is missing"),
                });
            }
            let recs = read_trajectory_csv(&p)?;
            cos.push((a.name.clone(), cos_series(&recs)));
            risk.push((a.name.clone(), recs.iter().map(|r| r.retain_risk).collect()));
            digests.push(ArmDigest {
                name: a.name.clone(),
                rectify: a.rectify,
                fq_proxy: a.eval.fq_proxy,
                mu_proxy: a.eval.mu_proxy,
                final_unlearn_loss: recs.last().map(|r| r.unlearn_loss),
                final_retain_risk: a.final_retain_risk,
                retain_risk_increase: a.retain_risk_increase,
            });
        }
        if svg {
            let f = format!("cos_{loss}.svg");
            w.text("svg", &f, &line_chart(&format!("{loss}: cos(applied direction, EMA retain gradient)"), "cos", &cos))?;
            figures.push(f);
            let f = format!("retain_risk_{loss}.svg");
            w.text("svg", &f, &line_chart(&format!("{loss}: retain risk on probe set"), "retain NLL", &risk))?;
            figures.push(f);
        }
        sections.push(Section { loss: loss.clone(), baseline_only: arms.iter().all(|a| !a.rectify), arms: digests });
    }
    let report = Report {
        experiment_id: summary.experiment_id.clone(),
        config_hash: summary.config_hash.clone(),
        fq_statistic: summary.fq_statistic.clone(),
        original_fq_proxy: summary.original.fq_proxy,
        original_mu_proxy: summary.original.mu_proxy,
        gold_fq_proxy: summary.gold.fq_proxy,
        sections,
        figures,
    };
    w.json("report", "report.json", &report)?;
    Ok(report)
}

/// Re-emits the report of a finished run and refreshes its manifest.
pub fn emit_report(run_dir: &Path, svg: bool) -> Result<Report> {
    let mut manifest = read_manifest(run_dir)?;
    let sp = run_dir.join("summary.json");
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::Io { path: sp.clone(), source: e })?;
    let summary: Summary = serde_json::from_str(&text).map_err(|e| Error::Format { path: sp, msg: e.to_string() })?;
    for a in &manifest.artifacts {
        if a.kind != "svg" && a.kind != "report" && !run_dir.join(&a.path).exists() {
            return Err(Error::Io {
                path: run_dir.join(&a.path),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "artifact listed in manifest is missing"),
            });
        }
    }
    // drop stale figures before writing the new set
    for a in manifest.artifacts.iter().filter(|a| a.kind == "svg") {
        let _ = std::fs::remove_file(run_dir.join(&a.path));
    }
    manifest.artifacts.retain(|a| a.kind != "svg" && a.kind != "report" && a.kind != "manifest");
    let mut w = Writer::new(run_dir.to_path_buf());
    let report = emit_report_into(&mut w, &summary, svg)?;
    manifest.artifacts.extend(w.artifacts);
    manifest.artifacts.push(crate::experiment::Artifact { kind: "manifest".into(), path: MANIFEST_FILE.into() });
    let mut out = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    out.push('\n');
    let mp = run_dir.join(MANIFEST_FILE);
    std::fs::write(&mp, out).map_err(|e| Error::Io { path: mp, source: e })?;
    Ok(report)
}
