use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use unlearn_core::{Error, Result, Split};
use unlearn_lab::config::{load_value, parse_scalar, set_path, ExperimentConfig, DESK_CONFIG};
use unlearn_lab::corpus::{gen_corpus, write_dataset};
use unlearn_lab::experiment::{calibrate_arm, prepare, run_arms, run_experiment, run_tru_pair, RunOptions, Writer};
use unlearn_lab::report::emit_report;
use unlearn_lab::sweep::{parse_axis, sweep};
use unlearn_lab::theorems::run_suite;

#[derive(Parser)]
#[command(name = "unlearn-lab", version, about = "Desk-scale gradient-rectified unlearning lab")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the bundled desk benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override a config field, e.g. `--set unlearn.gamma=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Overwrite results that already exist.
    #[arg(long, global = true)]
    force: bool,
    /// Resolve and print the plan without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Skip SVG charts.
    #[arg(long, global = true)]
    no_svg: bool,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic corpus and write `dataset.bin`.
    GenData,
    /// Train the original and retrain-gold models.
    Pretrain,
    /// Full pipeline: data, pretraining, paired unlearning arms, evaluation, calibration, report.
    Unlearn,
    /// TRU and the plain task-vector baseline at the configured strength.
    Tru,
    /// Calibrate every unlearning arm to retention targets by parameter blending.
    CalibrateUwc {
        /// Retention targets; defaults to the config's.
        #[arg(long = "target")]
        targets: Vec<f64>,
    },
    /// Run the quadratic verification suite and print its reports.
    VerifyTheorems {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// One run per point of a Cartesian grid, e.g. `--grid unlearn.gamma=0.1,0.5`.
    Sweep {
        #[arg(long = "grid", value_name = "PATH=V1,V2,...")]
        grid: Vec<String>,
    },
    /// Re-emit the report of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

fn base_value(c: &Common) -> Result<toml::Value> {
    let mut v = match &c.config {
        Some(p) => load_value(p)?,
        None => toml::from_str(DESK_CONFIG).map_err(|e| Error::Usage(format!("bundled config: {e}")))?,
    };
    for o in &c.overrides {
        let (k, val) = o.split_once('=').ok_or_else(|| Error::Usage(format!("--set '{o}' must look like path=value")))?;
        set_path(&mut v, k.trim(), parse_scalar(val))?;
    }
    if let Some(s) = c.seed {
        let s = i64::try_from(s).map_err(|_| Error::Usage("seed must fit in a signed 64-bit integer".into()))?;
        set_path(&mut v, "seed", toml::Value::Integer(s))?;
    }
    Ok(v)
}

fn print_json<S: Serialize>(v: &S) {
    // a closed pipe (`| head`) is not an error worth a panic
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serialisable"));
}

/// A writer into `out_dir` that refuses to clobber `names` without `--force`.
fn writer(c: &Common, names: &[&str]) -> Result<Writer> {
    if !c.force {
        if let Some(n) = names.iter().find(|n| c.out_dir.join(n).exists()) {
            return Err(Error::Usage(format!("{} exists; pass --force to overwrite", c.out_dir.join(n).display())));
        }
    }
    std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::Io { path: c.out_dir.clone(), source: e })?;
    Ok(Writer::new(c.out_dir.clone()))
}

fn planned(c: &Common, names: &[&str]) -> serde_json::Value {
    let files: Vec<String> = names.iter().map(|n| Path::new(&c.out_dir).join(n).display().to_string()).collect();
    serde_json::json!({ "dry_run": true, "would_write": files })
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let opts = RunOptions { force: c.force, dry_run: c.dry_run, svg: !c.no_svg };
    if let Cmd::Report { run_dir } = &cli.cmd {
        print_json(&emit_report(run_dir, opts.svg)?);
        return Ok(());
    }
    if let Cmd::VerifyTheorems { instances } = &cli.cmd {
        let suite = run_suite(c.seed.unwrap_or(0), *instances)?;
        print_json(&suite);
        return if suite.passed() {
            Ok(())
        } else {
            Err(Error::Numeric { step: None, msg: "theorem verification failed".into() })
        };
    }
    let value = base_value(c)?;
    if let Cmd::Sweep { grid } = &cli.cmd {
        let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>>>()?;
        let manifests = sweep(&value, &axes, &c.out_dir, c.workers, opts)?;
        print_json(&manifests.iter().map(|m| (&m.run_dir, &m.status)).collect::<Vec<_>>());
        return Ok(());
    }
    let cfg = ExperimentConfig::from_value(value)?;
    match &cli.cmd {
        Cmd::GenData => {
            const FILES: [&str; 2] = ["dataset.bin", "corpus.json"];
            if c.dry_run {
                print_json(&planned(c, &FILES));
                return Ok(());
            }
            let corpus = gen_corpus(&cfg.corpus, cfg.seed)?;
            let mut w = writer(c, &FILES)?;
            write_dataset(&corpus.dataset, &w.path(FILES[0]))?;
            let info = serde_json::json!({
                "config_hash": cfg.config_hash(),
                "seed": cfg.seed,
                "vocab_size": corpus.dataset.vocab_size(),
                "unlearn": corpus.dataset.count(Split::Unlearn),
                "retain": corpus.dataset.count(Split::Retain),
                "holdout": corpus.dataset.count(Split::Holdout),
                "forget_profiles": corpus.forget_profiles,
                "holdout_profiles": corpus.holdout_profiles,
            });
            w.json("corpus", FILES[1], &info)?;
            print_json(&info);
        }
        Cmd::Pretrain => {
            const FILES: [&str; 3] = ["original.ckpt", "gold.ckpt", "pretrain.json"];
            if c.dry_run {
                print_json(&planned(c, &FILES));
                return Ok(());
            }
            let mut w = writer(c, &FILES)?;
            let prep = prepare(&cfg)?;
            w.checkpoint(FILES[0], &prep.original)?;
            w.checkpoint(FILES[1], &prep.gold)?;
            let info = serde_json::json!({
                "original": { "log": prep.original_log, "eval": prep.evaluate(&prep.original, cfg.eval.exact_ks)? },
                "gold": { "log": prep.gold_log, "eval": prep.evaluate(&prep.gold, cfg.eval.exact_ks)? },
            });
            w.json("pretrain_log", FILES[2], &info)?;
            print_json(&info);
        }
        Cmd::Unlearn => print_json(&run_experiment(&cfg, &c.out_dir, opts)?),
        Cmd::Tru => {
            const FILES: [&str; 1] = ["tru.json"];
            if cfg.tru.is_none() {
                return Err(Error::Usage("config has no [tru] section".into()));
            }
            if c.dry_run {
                print_json(&planned(c, &FILES));
                return Ok(());
            }
            let mut w = writer(c, &FILES)?;
            let prep = prepare(&cfg)?;
            let (tru, tv) = run_tru_pair(&cfg, &prep)?.expect("tru section present");
            let original = prep.evaluate(&prep.original, cfg.eval.exact_ks)?;
            let arms: Vec<_> = [&tru, &tv]
                .iter()
                .map(|a| {
                    serde_json::json!({
                        "name": a.name,
                        "eval": a.eval,
                        "retain_nll_increase": a.eval.retain_nll - original.retain_nll,
                        "forget_nll_increase": a.eval.forget_nll - original.forget_nll,
                        "log": a.log,
                    })
                })
                .collect();
            let info = serde_json::json!({ "config_hash": cfg.config_hash(), "original": original, "arms": arms });
            w.json("tru", FILES[0], &info)?;
            print_json(&info);
        }
        Cmd::CalibrateUwc { targets } => {
            let targets = if targets.is_empty() {
                cfg.calibration.as_ref().map(|s| s.targets.clone()).unwrap_or_else(|| vec![0.85, 0.90, 0.95])
            } else {
                targets.clone()
            };
            if c.dry_run {
                print_json(&serde_json::json!({ "dry_run": true, "targets": targets }));
                return Ok(());
            }
            let prep = prepare(&cfg)?;
            let mut out = Vec::new();
            for &loss in &cfg.unlearn.losses {
                for arm in run_arms(&cfg, &prep, loss)? {
                    for &t in &targets {
                        out.push(calibrate_arm(&cfg, &prep, &arm.name, &arm.params, t)?);
                    }
                }
            }
            print_json(&out);
        }
        Cmd::VerifyTheorems { .. } | Cmd::Sweep { .. } | Cmd::Report { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(unlearn_lab::exit_code(&e) as u8)
        }
    }
}
