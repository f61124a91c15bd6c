//! The end-to-end pipeline: corpus → pretrain → retrain-gold → paired unlearning
//! arms → evaluation → calibration, with every artifact written under one run
//! directory and listed in its manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use unlearn_core::calibration::{calibrate_uwc, CalibrationSummary};
use unlearn_core::checkpoint;
use unlearn_core::gru::{run_unlearn, RunLog};
use unlearn_core::losses::LossKind;
use unlearn_core::metrics::{evaluate, mu_proxy, soft_token_accuracy, token_accuracy, write_trajectory_csv, EvalReport};
use unlearn_core::tru::{task_vector_baseline, tru_unlearn, TruLog, SUBSET_COLUMNS};
use unlearn_core::{Error, Model, ParamVector, Result, Split, TokenSequence};

use crate::config::{Arm, ExperimentConfig, RetentionProxy};
use crate::corpus::{gen_corpus, write_dataset, Corpus};
use crate::pretrain::{pretrain, PretrainLog};

/// Data and models shared by every arm of one experiment.
pub struct Prepared {
    pub corpus: Corpus,
    pub unlearn: Vec<TokenSequence>,
    pub retain: Vec<TokenSequence>,
    pub holdout: Vec<TokenSequence>,
    /// `θ_org`, trained on unlearn ∪ retain.
    pub original: Model,
    /// Trained on retain only.
    pub gold: Model,
    pub original_log: PretrainLog,
    pub gold_log: PretrainLog,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let corpus = gen_corpus(&cfg.corpus, cfg.seed)?;
    let unlearn = corpus.dataset.subset(Split::Unlearn);
    let retain = corpus.dataset.subset(Split::Retain);
    let holdout = corpus.dataset.subset(Split::Holdout);
    let train: Vec<TokenSequence> = corpus
        .dataset
        .sequences()
        .iter()
        .zip(corpus.dataset.splits())
        .filter(|(_, s)| **s != Split::Holdout)
        .map(|(q, _)| q.clone())
        .collect();
    let v = cfg.corpus.vocab_size;
    let (original, original_log) = pretrain(&train, cfg.model, v, &cfg.pretrain, cfg.seed, 0)?;
    let (gold, gold_log) = pretrain(&retain, cfg.model, v, &cfg.pretrain, cfg.seed, 1)?;
    Ok(Prepared { corpus, unlearn, retain, holdout, original, gold, original_log, gold_log })
}

impl Prepared {
    pub fn evaluate(&self, model: &Model, exact_ks: bool) -> Result<EvalReport> {
        evaluate(model, &self.gold, &self.unlearn, &self.retain, &self.holdout, exact_ks)
    }

    pub fn model(&self, params: &ParamVector) -> Result<Model> {
        self.original.with_params(params.clone())
    }

    pub fn retention(&self, proxy: RetentionProxy, params: &ParamVector) -> Result<f64> {
        let m = self.model(params)?;
        match proxy {
            RetentionProxy::RetainLikelihood => Ok((-m.mean_nll(&self.retain)?).exp()),
            RetentionProxy::SoftTokenAccuracy => soft_token_accuracy(&m, &self.retain),
            RetentionProxy::ModelUtility => mu_proxy(&m, &self.retain, &self.holdout),
            RetentionProxy::TokenAccuracy => token_accuracy(&m, &self.retain),
        }
    }
}

/// One unlearning arm.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub name: String,
    pub loss: LossKind,
    pub rectify: bool,
    pub params: ParamVector,
    pub log: RunLog,
    pub eval: EvalReport,
}

pub fn arm_name(loss: LossKind, rectify: bool) -> String {
    let l = serde_json::to_value(loss).expect("loss kind serialises");
    format!("{}_{}", l.as_str().expect("string tag"), if rectify { "gru" } else { "baseline" })
}

/// One arm per entry of `unlearn.arms`, all sharing data, θ_org and the batch stream.
pub fn run_arms(cfg: &ExperimentConfig, prep: &Prepared, loss: LossKind) -> Result<Vec<ArmResult>> {
    let gcfg = cfg.unlearn.gru_config(loss, prep.unlearn.len(), cfg.seed);
    cfg.unlearn
        .arms
        .iter()
        .map(|arm| {
            let rectify = *arm == Arm::Gru;
            let (params, log) = run_unlearn(&prep.original, &gcfg, &prep.unlearn, &prep.retain, rectify)?;
            let eval = prep.evaluate(&prep.model(&params)?, cfg.eval.exact_ks)?;
            Ok(ArmResult { name: arm_name(loss, rectify), loss, rectify, params, log, eval })
        })
        .collect()
}

/// Rectified and plain arms for one objective.
pub fn run_paired(cfg: &ExperimentConfig, prep: &Prepared, loss: LossKind) -> Result<(ArmResult, ArmResult)> {
    let mut c = cfg.clone();
    c.unlearn.arms = vec![Arm::Gru, Arm::Baseline];
    let mut arms = run_arms(&c, prep, loss)?.into_iter();
    Ok((arms.next().expect("gru arm"), arms.next().expect("baseline arm")))
}

#[derive(Debug, Clone)]
pub struct TruArm {
    pub name: String,
    pub params: ParamVector,
    pub log: TruLog,
    pub eval: EvalReport,
}

/// TRU and the unrectified task-vector baseline at the same strength.
pub fn run_tru_pair(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Option<(TruArm, TruArm)>> {
    let Some(section) = &cfg.tru else { return Ok(None) };
    let tcfg = section.tru_config(cfg.seed);
    let arm = |name: &str, (params, log): (ParamVector, TruLog)| -> Result<TruArm> {
        let eval = prep.evaluate(&prep.model(&params)?, cfg.eval.exact_ks)?;
        Ok(TruArm { name: name.into(), params, log, eval })
    };
    let tru = arm("tru", tru_unlearn(&prep.original, &prep.unlearn, &tcfg)?)?;
    let tv = arm("task_vector", task_vector_baseline(&prep.original, &prep.unlearn, &tcfg)?)?;
    Ok(Some((tru, tv)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub arm: String,
    pub target: f64,
    pub result: CalibrationSummary,
    pub eval: EvalReport,
}

pub fn calibrate_arm(cfg: &ExperimentConfig, prep: &Prepared, arm: &str, params: &ParamVector, target: f64) -> Result<CalibrationRecord> {
    let section = cfg.calibration.clone().unwrap_or_else(|| crate::config::CalibrationSection {
        targets: vec![target],
        tol: 0.01,
        max_iter: 10,
        proxy: RetentionProxy::default(),
    });
    let res = calibrate_uwc(
        params,
        prep.original.params(),
        |p| prep.retention(section.proxy, p),
        target,
        section.tol,
        section.max_iter,
    )?;
    let eval = prep.evaluate(&prep.model(&res.blended)?, cfg.eval.exact_ks)?;
    Ok(CalibrationRecord { arm: arm.into(), target, result: res.summary(section.proxy.name()), eval })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub loss: LossKind,
    pub rectify: bool,
    pub steps: usize,
    pub initial_retain_risk: f64,
    pub final_retain_risk: f64,
    pub retain_risk_increase: f64,
    pub min_cos_pre: Option<f64>,
    pub min_cos_post: Option<f64>,
    pub rectified_steps: usize,
    pub degenerate_steps: usize,
    pub eval: EvalReport,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruSummary {
    pub name: String,
    pub eval: EvalReport,
    pub retain_nll_increase: f64,
    pub forget_nll_increase: f64,
    pub subsets: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub fq_statistic: String,
    pub retention_proxy: Option<String>,
    pub original: EvalReport,
    pub gold: EvalReport,
    pub pretrain_epochs: usize,
    pub gold_epochs: usize,
    pub arms: Vec<ArmSummary>,
    pub tru: Vec<TruSummary>,
    pub calibration: Vec<CalibrationRecord>,
}

fn min_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    xs.flatten().fold(None, |m, x| Some(m.map_or(x, |m: f64| m.min(x))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: String,
    /// Relative to the run directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub run_dir: String,
    pub artifacts: Vec<Artifact>,
    pub status: String,
    pub failure_stage: Option<String>,
    pub error: Option<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub resolved_config: ExperimentConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub force: bool,
    pub dry_run: bool,
    pub svg: bool,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn run_dir_for(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    out_dir.join(format!("{}-{}", cfg.experiment_id, &cfg.config_hash()[..12]))
}

/// Collects artifacts as they are written.
pub struct Writer {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl Writer {
    pub fn new(dir: PathBuf) -> Self {
        Writer { dir, artifacts: Vec::new() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, kind: &str, name: &str) {
        self.artifacts.push(Artifact { kind: kind.into(), path: name.into() });
    }

    pub fn text(&mut self, kind: &str, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::Io { path: p, source: e })?;
        self.record(kind, name);
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, kind: &str, name: &str, value: &S) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).expect("serialisable");
        s.push('\n');
        self.text(kind, name, &s)
    }

    pub fn checkpoint(&mut self, name: &str, model: &Model) -> Result<()> {
        let (_, side) = checkpoint::save(model, &self.path(name))?;
        self.record("checkpoint", name);
        let side_name = side.file_name().expect("file name").to_string_lossy().into_owned();
        self.record("checkpoint_meta", &side_name);
        Ok(())
    }
}

fn batches_csv(log: &RunLog) -> String {
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    let mut s = String::from("step,unlearn,retain\n");
    for (i, b) in log.batches.iter().enumerate() {
        s.push_str(&format!("{i},{},{}\n", join(&b.unlearn), join(&b.retain)));
    }
    s
}

fn subsets_csv(log: &TruLog) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let io = |e: csv::Error| Error::Usage(format!("csv: {e}"));
    w.write_record(SUBSET_COLUMNS).map_err(io)?;
    for r in &log.subsets {
        w.write_record([
            r.subset_id.to_string(),
            r.size.to_string(),
            format!("{:.16e}", r.norm_raw),
            format!("{:.16e}", r.norm_rectified),
            format!("{:.16e}", r.inner_raw),
            format!("{:.16e}", r.inner_rectified),
            format!("{:.16e}", r.norm_ref),
            u8::from(r.rectified_fired).to_string(),
            u8::from(r.degenerate).to_string(),
        ])
        .map_err(io)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Usage(e.to_string()))?).expect("ascii"))
}

/// Runs every stage and writes the run directory. On failure the manifest is
/// still written, naming the failed stage, and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = run_dir_for(cfg, out_dir);
    let mut manifest = RunManifest {
        experiment_id: cfg.experiment_id.clone(),
        config_hash: cfg.config_hash(),
        seeds: vec![cfg.seed],
        run_dir: dir.display().to_string(),
        artifacts: Vec::new(),
        status: "planned".into(),
        failure_stage: None,
        error: None,
        started_unix: now(),
        finished_unix: None,
        resolved_config: cfg.clone(),
    };
    if opts.dry_run {
        return Ok(manifest);
    }
    if dir.join(MANIFEST_FILE).exists() && !opts.force {
        return Err(Error::Usage(format!(
            "run directory {} already holds results for config {}; pass --force to overwrite",
            dir.display(),
            &manifest.config_hash[..12]
        )));
    }
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let mut w = Writer::new(dir.clone());
    let mut stage = "config";
    let result = stages(cfg, &mut w, &mut stage, opts);
    manifest.finished_unix = Some(now());
    match result {
        Ok(()) => manifest.status = "complete".into(),
        Err(ref e) => {
            manifest.status = "failed".into();
            manifest.failure_stage = Some(stage.into());
            manifest.error = Some(e.to_string());
        }
    }
    w.record("manifest", MANIFEST_FILE);
    manifest.artifacts = w.artifacts.clone();
    w.artifacts.pop();
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    text.push('\n');
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, text).map_err(|e| Error::Io { path: mp, source: e })?;
    result.map(|_| manifest)
}

fn stages(cfg: &ExperimentConfig, w: &mut Writer, stage: &mut &'static str, opts: RunOptions) -> Result<()> {
    w.text("config", "config.resolved.toml", &cfg.to_toml())?;
    w.text("config", "config.resolved.json", &(cfg.canonical_json() + "\n"))?;

    *stage = "pretrain";
    let prep = prepare(cfg)?;
    write_dataset(&prep.corpus.dataset, &w.path("dataset.bin"))?;
    w.record("dataset", "dataset.bin");
    w.checkpoint("original.ckpt", &prep.original)?;
    w.checkpoint("gold.ckpt", &prep.gold)?;
    w.json("pretrain_log", "pretrain.json", &serde_json::json!({ "original": prep.original_log, "gold": prep.gold_log }))?;

    *stage = "evaluate_reference";
    let original = prep.evaluate(&prep.original, cfg.eval.exact_ks)?;
    let gold = prep.evaluate(&prep.gold, cfg.eval.exact_ks)?;

    let mut summary = Summary {
        experiment_id: cfg.experiment_id.clone(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        fq_statistic: original.fq_statistic.clone(),
        retention_proxy: cfg.calibration.as_ref().map(|c| c.proxy.name().to_string()),
        original,
        gold,
        pretrain_epochs: prep.original_log.epochs,
        gold_epochs: prep.gold_log.epochs,
        arms: Vec::new(),
        tru: Vec::new(),
        calibration: Vec::new(),
    };

    for &loss in &cfg.unlearn.losses {
        *stage = "unlearn";
        for arm in &run_arms(cfg, &prep, loss)? {
            let traj = format!("trajectory_{}.csv", arm.name);
            write_trajectory_csv(&arm.log.records, &w.path(&traj))?;
            w.record("trajectory", &traj);
            w.text("batches", &format!("batches_{}.csv", arm.name), &batches_csv(&arm.log))?;
            w.checkpoint(&format!("unlearned_{}.ckpt", arm.name), &prep.model(&arm.params)?)?;
            let recs = &arm.log.records;
            summary.arms.push(ArmSummary {
                name: arm.name.clone(),
                loss,
                rectify: arm.rectify,
                steps: recs.len(),
                initial_retain_risk: arm.log.initial_retain_risk,
                final_retain_risk: recs.last().map_or(arm.log.initial_retain_risk, |r| r.retain_risk),
                retain_risk_increase: arm.log.retain_risk_increase(),
                min_cos_pre: min_opt(recs.iter().map(|r| r.cos_pre)),
                min_cos_post: min_opt(recs.iter().map(|r| r.cos_post)),
                rectified_steps: recs.iter().filter(|r| r.rectified).count(),
                degenerate_steps: recs.iter().filter(|r| r.degenerate).count(),
                eval: arm.eval.clone(),
                trajectory: traj,
            });
            if let Some(cal) = &cfg.calibration {
                *stage = "calibrate";
                for &t in &cal.targets {
                    summary.calibration.push(calibrate_arm(cfg, &prep, &arm.name, &arm.params, t)?);
                }
                *stage = "unlearn";
            }
        }
    }

    *stage = "tru";
    if let Some((tru, tv)) = run_tru_pair(cfg, &prep)? {
        for arm in [&tru, &tv] {
            let name = format!("tru_subsets_{}.csv", arm.name);
            w.text("tru_subsets", &name, &subsets_csv(&arm.log)?)?;
            w.checkpoint(&format!("unlearned_{}.ckpt", arm.name), &prep.model(&arm.params)?)?;
            summary.tru.push(TruSummary {
                name: arm.name.clone(),
                eval: arm.eval.clone(),
                retain_nll_increase: arm.eval.retain_nll - summary.original.retain_nll,
                forget_nll_increase: arm.eval.forget_nll - summary.original.forget_nll,
                subsets: name,
            });
        }
    }

    *stage = "summary";
    w.json("summary", "summary.json", &summary)?;
    if !summary.calibration.is_empty() {
        w.json("calibration", "calibration.json", &summary.calibration)?;
    }

    *stage = "report";
    crate::report::emit_report_into(w, &summary, opts.svg)?;
    Ok(())
}

/// Reads `manifest.json` from a run directory.
pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    let p = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: p, msg: e.to_string() })
}
