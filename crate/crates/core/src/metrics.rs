//! Trajectory records and forget-quality / utility proxies.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, TokenSequence};
use crate::scalar::{self, Scalar};
use crate::vector::Grad;

/// Cosine similarity, or `None` when either norm is below `1e-15`.
pub fn cosine<T: Scalar>(a: &Grad<T>, b: &Grad<T>) -> Option<T> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub fn cosine_slices<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let (na, nb) = (scalar::norm(a), scalar::norm(b));
    let floor = T::lit(1e-15);
    if na < floor || nb < floor {
        return None;
    }
    Some(scalar::dot(a, b) / (na * nb))
}

/// One optimisation step of an unlearning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Unlearning objective on the step's batch, before the update.
    pub unlearn_loss: f64,
    /// Retain NLL on the fixed probe set, after the update.
    pub retain_risk: f64,
    /// `cos(g_u, ḡ_r)`.
    pub cos_pre: Option<f64>,
    /// `cos(g̃_u, ḡ_r)` for the direction actually applied.
    pub cos_post: Option<f64>,
    pub norm_gu: f64,
    /// Norm after rectification, before clipping.
    pub norm_rectified: f64,
    /// Norm of the direction handed to the optimizer.
    pub norm_applied: f64,
    pub norm_ema: f64,
    pub rectified: bool,
    pub clipped: bool,
    pub resampled: bool,
    pub degenerate: bool,
}

/// Column order of the trajectory CSV, schema version [`TRAJECTORY_SCHEMA_VERSION`].
pub const TRAJECTORY_COLUMNS: [&str; 13] = [
    "step",
    "unlearn_loss",
    "retain_risk",
    "cos_pre",
    "cos_post",
    "norm_gu",
    "norm_rectified",
    "norm_applied",
    "norm_ema",
    "rectified",
    "clipped",
    "resampled",
    "degenerate",
];

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Floats use 17 significant digits so values survive a write/parse cycle exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Header plus one row per step. Missing cosines are empty fields.
pub fn write_trajectory_csv(log: &[StepRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(TRAJECTORY_COLUMNS).map_err(io)?;
    for r in log {
        let b = |x: bool| if x { "1" } else { "0" }.to_string();
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.unlearn_loss),
            fmt_f64(r.retain_risk),
            fmt_opt(r.cos_pre),
            fmt_opt(r.cos_post),
            fmt_f64(r.norm_gu),
            fmt_f64(r.norm_rectified),
            fmt_f64(r.norm_applied),
            fmt_f64(r.norm_ema),
            b(r.rectified),
            b(r.clipped),
            b(r.resampled),
            b(r.degenerate),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Inverse of [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let fmt = |msg: String| Error::Format { path: path.to_path_buf(), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| fmt(e.to_string()))?.iter().map(String::from).collect();
    if header != TRAJECTORY_COLUMNS {
        return Err(fmt(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| fmt(e.to_string()))?;
        let f = |i: usize| row[i].parse::<f64>().map_err(|e| fmt(format!("column {}: {e}", TRAJECTORY_COLUMNS[i])));
        let o = |i: usize| if row[i].is_empty() { Ok(None) } else { f(i).map(Some) };
        let b = |i: usize| Ok::<_, Error>(&row[i] == "1");
        out.push(StepRecord {
            step: row[0].parse().map_err(|e| fmt(format!("step: {e}")))?,
            unlearn_loss: f(1)?,
            retain_risk: f(2)?,
            cos_pre: o(3)?,
            cos_post: o(4)?,
            norm_gu: f(5)?,
            norm_rectified: f(6)?,
            norm_applied: f(7)?,
            norm_ema: f(8)?,
            rectified: b(9)?,
            clipped: b(10)?,
            resampled: b(11)?,
            degenerate: b(12)?,
        });
    }
    Ok(out)
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} exp(-2k²λ²)`, the Kolmogorov survival function,
/// truncated once terms fall below `1e-12`. Clamped to `[0, 1]`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    // The alternating series converges too slowly to be useful below this point,
    // where Q is 1 to double precision anyway.
    if lambda < 0.18 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100_000u32 {
        let k = f64::from(k);
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("KS samples must be finite"));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(v)
}

/// `sup |F_a - F_b|` over the pooled support, by a merge walk over both sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::usage("KS samples must be non-empty"));
    }
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        // Counts as integers keep the statistic symmetric in (a, b).
        let gap = (i * m).abs_diff(j * n) as f64 / (n * m) as f64;
        d = d.max(gap);
    }
    Ok(d)
}

/// Two-sided two-sample KS test with the asymptotic p-value
/// `Q((√ne + 0.12 + 0.11/√ne)·D)`, `ne = nm/(n+m)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 5 || b.len() < 5 {
        return Err(Error::usage("KS test needs at least 5 observations per sample"));
    }
    let statistic = ks_statistic(a, b)?;
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let sq = ne.sqrt();
    let p_value = kolmogorov_q((sq + 0.12 + 0.11 / sq) * statistic);
    Ok(KsResult { statistic, p_value })
}

/// Exact two-sided p-value `P(D ≥ d)` under the null for continuous data, by counting
/// lattice paths that stay strictly inside the band `|i/n - j/m| < d`.
/// Only offered for `n, m ≤ 10`.
pub fn ks_exact_p_value(n: usize, m: usize, d: f64) -> Result<f64> {
    if n == 0 || m == 0 || n > 10 || m > 10 {
        return Err(Error::usage("exact KS p-values are limited to 1..=10 observations per sample"));
    }
    // Work in integer units of 1/(nm) to avoid rounding at the band edge.
    let dd = (d * (n * m) as f64 - 1e-7).ceil().max(0.0) as usize;
    let inside = |i: usize, j: usize| (i * m).abs_diff(j * n) < dd;
    let mut paths = vec![vec![0f64; m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            if !inside(i, j) {
                continue;
            }
            paths[i][j] = if i == 0 && j == 0 {
                1.0
            } else {
                (if i > 0 { paths[i - 1][j] } else { 0.0 }) + (if j > 0 { paths[i][j - 1] } else { 0.0 })
            };
        }
    }
    let total: f64 = (1..=n).fold(1.0, |acc, k| acc * (m + k) as f64 / k as f64);
    Ok((1.0 - paths[n][m] / total).clamp(0.0, 1.0))
}

/// Same as [`ks_two_sample`] but with the exact p-value when both samples hold ≤ 10 points.
pub fn ks_two_sample_exact(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let asym = ks_two_sample(a, b)?;
    let p_value = ks_exact_p_value(a.len(), b.len(), asym.statistic)?;
    Ok(KsResult { statistic: asym.statistic, p_value })
}

/// Per-sequence NLLs, in order.
pub fn sequence_nlls<T: Scalar>(model: &Model<T>, seqs: &[TokenSequence]) -> Result<Vec<f64>> {
    Ok(model.seq_log_probs(seqs)?.into_iter().map(|lp| -lp.as_f64()).collect())
}

/// `ln p` of a KS test between per-sequence NLLs of `unlearned` and `gold` on the
/// forget set. 0 is best.
pub fn fq_proxy<T: Scalar>(unlearned: &Model<T>, gold: &Model<T>, forget: &[TokenSequence], exact: bool) -> Result<f64> {
    if unlearned.vocab_size() != gold.vocab_size() {
        return Err(Error::usage("models must share a vocabulary"));
    }
    if forget.is_empty() {
        return Err(Error::usage("forget set must be non-empty"));
    }
    let a = sequence_nlls(unlearned, forget)?;
    let b = sequence_nlls(gold, forget)?;
    let ks = if exact && forget.len() <= 10 { ks_two_sample_exact(&a, &b)? } else { ks_two_sample(&a, &b)? };
    Ok(ks.p_value.ln())
}

/// Fraction of positions whose most likely next token is the observed one.
/// Ties resolve to the lowest token id.
pub fn token_accuracy<T: Scalar>(model: &Model<T>, seqs: &[TokenSequence]) -> Result<f64> {
    model.check_batch(seqs)?;
    let v = model.vocab_size();
    let table = model.log_prob_table();
    let argmax: Vec<usize> = (0..=v)
        .map(|c| {
            let row = &table[c * v..(c + 1) * v];
            (0..v).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect();
    let (mut hit, mut total) = (0usize, 0usize);
    for s in seqs {
        for (c, n) in s.transitions(v) {
            hit += usize::from(argmax[c] == n);
            total += 1;
        }
    }
    Ok(hit as f64 / total as f64)
}

/// Mean probability assigned to the observed next token. A smooth counterpart of
/// [`token_accuracy`].
pub fn soft_token_accuracy<T: Scalar>(model: &Model<T>, seqs: &[TokenSequence]) -> Result<f64> {
    model.check_batch(seqs)?;
    let v = model.vocab_size();
    let probs = model.prob_table();
    let (mut sum, mut total) = (0.0, 0usize);
    for s in seqs {
        for (c, n) in s.transitions(v) {
            sum += probs[c * v + n].as_f64();
            total += 1;
        }
    }
    Ok(sum / total as f64)
}

/// Mean NLL per token.
pub fn per_token_nll<T: Scalar>(model: &Model<T>, seqs: &[TokenSequence]) -> Result<f64> {
    model.check_batch(seqs)?;
    let tokens: usize = seqs.iter().map(TokenSequence::len).sum();
    let total: f64 = sequence_nlls(model, seqs)?.iter().sum();
    Ok(total / tokens as f64)
}

/// Harmonic mean of the components; 0 if any component is 0.
pub fn harmonic_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() || xs.iter().any(|&x| x <= 0.0) {
        return 0.0;
    }
    xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>()
}

/// Harmonic mean of retain accuracy, holdout accuracy and `exp(-retain NLL per token)`.
pub fn mu_proxy<T: Scalar>(model: &Model<T>, retain: &[TokenSequence], holdout: &[TokenSequence]) -> Result<f64> {
    let ra = token_accuracy(model, retain)?;
    let ha = token_accuracy(model, holdout)?;
    let rn = (-per_token_nll(model, retain)?).exp();
    Ok(harmonic_mean(&[ra, ha, rn]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per-token NLLs.
    pub forget_nll: f64,
    pub retain_nll: f64,
    pub holdout_nll: f64,
    pub retain_token_acc: f64,
    pub ks_statistic: f64,
    /// `ln` of the KS p-value against the retrained gold model; ≤ 0.
    pub fq_proxy: f64,
    pub mu_proxy: f64,
    /// What the forget-quality statistic is computed from.
    pub fq_statistic: String,
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    gold: &Model<T>,
    forget: &[TokenSequence],
    retain: &[TokenSequence],
    holdout: &[TokenSequence],
    exact_ks: bool,
) -> Result<EvalReport> {
    let a = sequence_nlls(model, forget)?;
    let b = sequence_nlls(gold, forget)?;
    let ks = if exact_ks && forget.len() <= 10 { ks_two_sample_exact(&a, &b)? } else { ks_two_sample(&a, &b)? };
    Ok(EvalReport {
        forget_nll: per_token_nll(model, forget)?,
        retain_nll: per_token_nll(model, retain)?,
        holdout_nll: per_token_nll(model, holdout)?,
        retain_token_acc: token_accuracy(model, retain)?,
        ks_statistic: ks.statistic,
        fq_proxy: ks.p_value.ln(),
        mu_proxy: mu_proxy(model, retain, holdout)?,
        fq_statistic: "per-sequence NLL, two-sided two-sample KS vs retrained gold".into(),
    })
}

/// Writes `bytes` to `path`, mapping errors to [`Error::Io`].
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}
