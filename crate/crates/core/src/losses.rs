//! Unlearning and retention objectives, each returning `(value, exact gradient)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_nll, Model, TokenSequence};
use crate::scalar::Scalar;
use crate::vector::Grad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "GD")]
    Gd,
    #[serde(rename = "NPO")]
    Npo,
    #[serde(rename = "NPO_GD")]
    NpoGd,
    #[serde(rename = "NPO_KL")]
    NpoKl,
}

impl LossKind {
    pub fn needs_reference(self) -> bool {
        matches!(self, LossKind::Npo | LossKind::NpoGd | LossKind::NpoKl)
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    0.1
}

/// Which objective to minimise and its weights. The frozen reference model for the
/// NPO family is supplied separately at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Weight on the retain / KL regulariser.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// NPO inverse temperature.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Divide NPO log-ratios by sequence length.
    #[serde(default)]
    pub length_normalize: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec { kind, lambda: default_lambda(), beta: default_beta(), length_normalize: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::usage("lambda must be finite and >= 0"));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::usage("beta must be finite and > 0"));
        }
        Ok(())
    }
}

fn mean_log_prob<T: Scalar>(model: &Model<T>, batch: &[TokenSequence]) -> Result<T> {
    let n = T::from_usize_lossy(batch.len());
    Ok(model.seq_log_probs(batch)?.into_iter().fold(T::zero(), |a, b| a + b) / n)
}

/// Gradient ascent: `(1/n) Σ log p(s)`, minimised to drive likelihood down.
pub fn ga_loss<T: Scalar>(model: &Model<T>, batch_u: &[TokenSequence]) -> Result<(T, Grad<T>)> {
    model.check_batch(batch_u)?;
    let value = mean_log_prob(model, batch_u)?;
    let w = T::one() / T::from_usize_lossy(batch_u.len());
    let grad = model.weighted_log_prob_grad(batch_u, &vec![w; batch_u.len()])?;
    Ok((value, grad))
}

/// Retain NLL: `-(1/m) Σ log p(s)`.
pub fn retain_loss<T: Scalar>(model: &Model<T>, batch_r: &[TokenSequence]) -> Result<(T, Grad<T>)> {
    model.check_batch(batch_r)?;
    let value = -mean_log_prob(model, batch_r)?;
    Ok((value, grad_nll(model, batch_r)?))
}

/// Gradient difference: GA plus `lambda` times the retain NLL.
pub fn gd_loss<T: Scalar>(
    model: &Model<T>,
    batch_u: &[TokenSequence],
    batch_r: &[TokenSequence],
    lambda: T,
) -> Result<(T, Grad<T>)> {
    if !(lambda >= T::zero()) {
        return Err(Error::usage("lambda must be >= 0"));
    }
    let (gv, gg) = ga_loss(model, batch_u)?;
    let (rv, rg) = retain_loss(model, batch_r)?;
    Ok((gv + lambda * rv, gg.add_scaled(lambda, &rg)?))
}

/// Negative preference optimisation:
/// `(1/n) Σ (2/β) log(1 + (p(s;θ)/p(s;θ_ref))^β)`, evaluated in log space.
pub fn npo_loss<T: Scalar>(
    model: &Model<T>,
    reference: &Model<T>,
    batch_u: &[TokenSequence],
    beta: T,
    length_normalize: bool,
) -> Result<(T, Grad<T>)> {
    if !(beta > T::zero()) {
        return Err(Error::usage("beta must be > 0"));
    }
    model.check_batch(batch_u)?;
    if reference.vocab_size() != model.vocab_size() {
        return Err(Error::usage("reference model vocabulary differs"));
    }
    let lp = model.seq_log_probs(batch_u)?;
    let lp_ref = reference.seq_log_probs(batch_u)?;
    let n = T::from_usize_lossy(batch_u.len());
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut weights = Vec::with_capacity(batch_u.len());
    for ((s, &a), &b) in batch_u.iter().zip(&lp).zip(&lp_ref) {
        let len = if length_normalize { T::from_usize_lossy(s.len()) } else { T::one() };
        let x = beta * (a - b) / len;
        let term = two / beta * x.softplus();
        if !term.is_finite() {
            return Err(Error::numeric("NPO log-ratio is not finite"));
        }
        value = value + term;
        // d/dlp of (2/β)·softplus(β·lp/len) = 2σ(x)/len
        weights.push(two * x.sigmoid() / len / n);
    }
    let grad = model.weighted_log_prob_grad(batch_u, &weights)?;
    Ok((value / n, grad))
}

/// Token-level forward KL `KL(p_ref(·|ctx) ‖ p_θ(·|ctx))`, averaged over every
/// position in the batch.
pub fn kl_regularizer<T: Scalar>(
    model: &Model<T>,
    reference: &Model<T>,
    batch_r: &[TokenSequence],
) -> Result<(T, Grad<T>)> {
    model.check_batch(batch_r)?;
    if reference.vocab_size() != model.vocab_size() {
        return Err(Error::usage("reference model vocabulary differs"));
    }
    let v = model.vocab_size();
    let lp = model.log_prob_table();
    let lq = reference.log_prob_table();
    let positions: usize = batch_r.iter().map(TokenSequence::len).sum();
    let inv = T::one() / T::from_usize_lossy(positions);
    let mut counts = vec![0usize; v + 1];
    for s in batch_r {
        for (c, _) in s.transitions(v) {
            counts[c] += 1;
        }
    }
    let mut value = T::zero();
    let mut dlogits = vec![T::zero(); (v + 1) * v];
    for (c, &k) in counts.iter().enumerate() {
        if k == 0 {
            continue;
        }
        let w = T::from_usize_lossy(k) * inv;
        let row = c * v..(c + 1) * v;
        let kl = lq[row.clone()]
            .iter()
            .zip(&lp[row.clone()])
            .fold(T::zero(), |acc, (&q, &p)| acc + q.exp() * (q - p));
        value = value + w * kl;
        for j in row {
            dlogits[j] = w * (lp[j].exp() - lq[j].exp());
        }
    }
    Ok((value, model.backprop(&dlogits)))
}

/// Dispatches on `spec.kind`. NPO-family kinds need `reference`.
pub fn composite_loss<T: Scalar>(
    spec: &LossSpec,
    reference: Option<&Model<T>>,
    model: &Model<T>,
    batch_u: &[TokenSequence],
    batch_r: &[TokenSequence],
) -> Result<(T, Grad<T>)> {
    spec.validate()?;
    let lambda = T::lit(spec.lambda);
    let beta = T::lit(spec.beta);
    let need_ref = || reference.ok_or_else(|| Error::usage(format!("{:?} requires a reference model", spec.kind)));
    let combine = |(av, ag): (T, Grad<T>), (bv, bg): (T, Grad<T>)| -> Result<(T, Grad<T>)> {
        Ok((av + lambda * bv, ag.add_scaled(lambda, &bg)?))
    };
    match spec.kind {
        LossKind::Ga => ga_loss(model, batch_u),
        LossKind::Gd => gd_loss(model, batch_u, batch_r, lambda),
        LossKind::Npo => npo_loss(model, need_ref()?, batch_u, beta, spec.length_normalize),
        LossKind::NpoGd => combine(
            npo_loss(model, need_ref()?, batch_u, beta, spec.length_normalize)?,
            retain_loss(model, batch_r)?,
        ),
        LossKind::NpoKl => {
            let r = need_ref()?;
            combine(
                npo_loss(model, r, batch_u, beta, spec.length_normalize)?,
                kl_regularizer(model, r, batch_r)?,
            )
        }
    }
}
