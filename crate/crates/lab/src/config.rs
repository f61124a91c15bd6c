//! Experiment configuration: a versioned TOML file resolved to a fully explicit
//! struct, hashed over its canonical JSON form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unlearn_core::gru::GruConfig;
use unlearn_core::losses::{LossKind, LossSpec};
use unlearn_core::model::ModelKind;
use unlearn_core::optim::{AdamHyper, OptimizerKind};
use unlearn_core::tru::{ConstraintSign, TruConfig};
use unlearn_core::{Error, Result};

use crate::corpus::CorpusSpec;
use crate::pretrain::PretrainSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment_id: String,
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub model: ModelKind,
    pub pretrain: PretrainSpec,
    pub unlearn: UnlearnSection,
    #[serde(default)]
    pub tru: Option<TruSection>,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_losses() -> Vec<LossKind> {
    vec![LossKind::Ga]
}

fn one() -> f64 {
    1.0
}

fn beta() -> f64 {
    0.1
}

fn probe() -> usize {
    64
}

/// With (`gru`) or without (`baseline`) rectification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Gru,
    Baseline,
}

fn default_arms() -> Vec<Arm> {
    vec![Arm::Gru, Arm::Baseline]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearnSection {
    /// Base objectives; each runs once per arm.
    #[serde(default = "default_losses")]
    pub losses: Vec<LossKind>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "beta")]
    pub beta: f64,
    #[serde(default)]
    pub length_normalize: bool,
    pub lr: f64,
    /// Passes over the unlearn set.
    pub epochs: usize,
    pub gamma: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    pub batch_u: usize,
    pub batch_r: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default = "probe")]
    pub probe_size: usize,
}

impl UnlearnSection {
    pub fn steps(&self, n_unlearn: usize) -> usize {
        self.epochs * n_unlearn.div_ceil(self.batch_u.max(1))
    }

    pub fn gru_config(&self, kind: LossKind, n_unlearn: usize, seed: u64) -> GruConfig {
        GruConfig {
            lr: self.lr,
            gamma: self.gamma,
            tau: self.tau,
            steps: self.steps(n_unlearn),
            batch_u: self.batch_u,
            batch_r: self.batch_r,
            loss: LossSpec { kind, lambda: self.lambda, beta: self.beta, length_normalize: self.length_normalize },
            optimizer: self.optimizer,
            adam: self.adam,
            seed,
            probe_size: self.probe_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruSection {
    pub k_subsets: usize,
    pub ft_steps: usize,
    pub ft_lr: f64,
    pub stg: f64,
    #[serde(default)]
    pub constraint_sign: ConstraintSign,
}

impl TruSection {
    pub fn tru_config(&self, seed: u64) -> TruConfig {
        TruConfig {
            k_subsets: self.k_subsets,
            ft_steps: self.ft_steps,
            ft_lr: self.ft_lr,
            stg: self.stg,
            constraint_sign: self.constraint_sign,
            seed,
        }
    }
}

/// Retention measure the calibration search holds at a fraction of its original value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetentionProxy {
    /// `exp(-R)` with `R` the retain loss (mean per-sequence NLL), so the
    /// retention fraction is `exp(-(R(θ) - R(θ_org)))`.
    #[default]
    RetainLikelihood,
    /// Mean probability assigned to the observed next token on the retain set.
    SoftTokenAccuracy,
    /// The model-utility proxy (retain and holdout accuracy, retain likelihood).
    ModelUtility,
    /// Argmax next-token accuracy on the retain set.
    TokenAccuracy,
}

impl RetentionProxy {
    pub fn name(self) -> &'static str {
        match self {
            RetentionProxy::RetainLikelihood => "retain likelihood (exp of minus mean per-sequence retain NLL)",
            RetentionProxy::ModelUtility => "model utility proxy (harmonic mean of accuracies and retain likelihood)",
            RetentionProxy::SoftTokenAccuracy => "retain soft token accuracy (mean p of observed token)",
            RetentionProxy::TokenAccuracy => "retain argmax token accuracy",
        }
    }
}

fn targets() -> Vec<f64> {
    vec![0.85, 0.90, 0.95]
}

fn cal_tol() -> f64 {
    0.01
}

fn max_iter() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default = "targets")]
    pub targets: Vec<f64>,
    #[serde(default = "cal_tol")]
    pub tol: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub proxy: RetentionProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Exact KS p-values when the forget set has at most 10 sequences.
    #[serde(default)]
    pub exact_ks: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_value(load_value(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Usage(format!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.experiment_id.is_empty() || !self.experiment_id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return Err(Error::Usage("experiment_id must be non-empty and use [A-Za-z0-9-_.]".into()));
        }
        self.corpus.validate()?;
        self.pretrain.validate()?;
        if self.unlearn.losses.is_empty() || self.unlearn.arms.is_empty() {
            return Err(Error::Usage("unlearn.losses and unlearn.arms must be non-empty".into()));
        }
        for &k in &self.unlearn.losses {
            self.unlearn.gru_config(k, 1, self.seed).validate()?;
        }
        if let Some(t) = &self.tru {
            let n_forget = self.corpus.n_forget() * self.corpus.seqs_per_profile;
            t.tru_config(self.seed).validate(n_forget)?;
        }
        if let Some(c) = &self.calibration {
            if c.targets.is_empty() || c.targets.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) || !(c.tol > 0.0) {
                return Err(Error::Usage("calibration: targets in (0, 1] and tol > 0 required".into()));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    /// Canonical JSON: struct field order, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises to JSON")
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

pub fn load_value(path: &Path) -> Result<toml::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    toml::from_str(&text).map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))
}

/// Sets a dotted path (`unlearn.gamma`) inside a TOML table, creating tables as needed.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Usage(format!("invalid config path '{path}'")));
    }
    let mut cur = root;
    for k in &keys[..keys.len() - 1] {
        let table = cur.as_table_mut().ok_or_else(|| Error::Usage(format!("'{path}': '{k}' is not a table")))?;
        cur = table.entry(k.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur.as_table_mut().ok_or_else(|| Error::Usage(format!("'{path}' does not name a table field")))?;
    let key = keys[keys.len() - 1];
    // `lr=1` on a float field means 1.0
    let value = match (table.get(key), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    table.insert(key.to_string(), value);
    Ok(())
}

/// Parses a grid literal: integer, float, boolean, or a bare string.
pub fn parse_scalar(text: &str) -> toml::Value {
    let t = text.trim();
    if let Ok(i) = t.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = t.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match t {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(t.to_string()),
    }
}

/// The desk benchmark: V = 32, 40 profiles, 5 % forget, tabular bigram.
pub const DESK_CONFIG: &str = include_str!("../configs/desk.toml");

pub fn desk() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(DESK_CONFIG).expect("bundled desk config is valid")
}
