//! Retain-data-free unlearning with rectified task vectors.
//!
//! The unlearn set is split into `K` subsets. For each subset a task vector is
//! obtained by fine-tuning towards it, projected against the NLL gradient of the
//! remaining subsets (the internal reference), normalised, and the average is
//! subtracted from the original parameters.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{grad_nll, Model, TokenSequence};
use crate::rng::{stream, Stage};
use crate::scalar::Scalar;
use crate::vector::{Grad, Params};

const ZERO_NORM: f64 = 1e-15;

/// Which half-space the rectified task vector is projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSign {
    /// `⟨T̃, ∇R⟩ ≥ 0`: subtracting `T̃` cannot raise the reference NLL to first order.
    #[default]
    GruConsistent,
    /// `⟨-T̃, ∇R⟩ ≥ 0`, the mirrored constraint.
    Mirrored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector<T> {
    pub delta: Grad<T>,
    pub subset_id: usize,
    pub ref_grad: Grad<T>,
    pub rectified: bool,
    pub normalized: bool,
}

fn default_sign() -> ConstraintSign {
    ConstraintSign::GruConsistent
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruConfig {
    pub k_subsets: usize,
    pub ft_steps: usize,
    pub ft_lr: f64,
    /// Unlearning strength.
    pub stg: f64,
    #[serde(default = "default_sign")]
    pub constraint_sign: ConstraintSign,
    pub seed: u64,
}

/// Strength grid searched by default.
pub const STG_GRID: [f64; 7] = [0.50, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85];

impl TruConfig {
    pub fn validate(&self, n_unlearn: usize) -> Result<()> {
        if self.k_subsets < 2 {
            return Err(Error::usage("TRU needs at least 2 subsets"));
        }
        if self.k_subsets > n_unlearn {
            return Err(Error::usage(format!(
                "k_subsets = {} exceeds unlearn set size {n_unlearn}",
                self.k_subsets
            )));
        }
        if !(self.ft_lr > 0.0) || !(self.stg >= 0.0) || !self.stg.is_finite() {
            return Err(Error::usage("ft_lr must be > 0 and stg finite and >= 0"));
        }
        Ok(())
    }
}

/// Fine-tunes a copy of `theta_org` for `steps` full-batch ascent steps on the mean
/// log-likelihood of `subset` and returns `θ^(T) - θ_org`.
pub fn compute_task_vector<T: Scalar>(theta_org: &Model<T>, subset: &[TokenSequence], steps: usize, lr: T) -> Result<Grad<T>> {
    if subset.is_empty() {
        return Err(Error::usage("task-vector subset must be non-empty"));
    }
    let mut model = theta_org.clone();
    for t in 0..steps {
        // ∇ mean log p = -∇ mean NLL
        let g = grad_nll(&model, subset)?;
        let next = model.params().displaced(-lr, &g).map_err(|e| e.at_step(t))?;
        model = model.with_params(next)?;
    }
    model.params().diff(theta_org.params())
}

/// `∇ R(complement; θ_org)`: full-batch mean-NLL gradient.
pub fn reference_grad<T: Scalar>(theta_org: &Model<T>, complement: &[TokenSequence]) -> Result<Grad<T>> {
    if complement.is_empty() {
        return Err(Error::usage("reference complement must be non-empty"));
    }
    grad_nll(theta_org, complement)
}

/// Projects the task vector onto the configured half-space. A vanishing reference
/// gradient leaves it unchanged (the caller logs that case via the returned flag).
pub fn rectify_task_vector<T: Scalar>(tv: &TaskVector<T>, sign: ConstraintSign) -> Result<TaskVector<T>> {
    if tv.rectified {
        return Err(Error::usage("task vector is already rectified"));
    }
    tv.delta.check_len(tv.ref_grad.len(), "rectify_task_vector")?;
    let mut out = TaskVector { rectified: true, ..tv.clone() };
    let rr = tv.ref_grad.dot(&tv.ref_grad);
    if rr.sqrt() < T::lit(ZERO_NORM) {
        out.rectified = false;
        return Ok(out);
    }
    let ip = tv.delta.dot(&tv.ref_grad);
    let violated = match sign {
        ConstraintSign::GruConsistent => ip < T::zero(),
        ConstraintSign::Mirrored => ip > T::zero(),
    };
    if violated {
        out.delta = tv.delta.add_scaled(-(ip / rr), &tv.ref_grad)?;
    }
    Ok(out)
}

/// Scales the task vector to unit norm.
pub fn normalize_task_vector<T: Scalar>(tv: &TaskVector<T>) -> Result<TaskVector<T>> {
    let n = tv.delta.norm();
    if n < T::lit(ZERO_NORM) {
        return Err(Error::Degenerate(format!("task vector of subset {} has (near-)zero norm", tv.subset_id)));
    }
    Ok(TaskVector { delta: tv.delta.scaled(T::one() / n), normalized: true, ..tv.clone() })
}

/// Seeded partition of `0..n` into `k` subsets; the last one absorbs the remainder.
pub fn partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, Stage::TaskVector));
    let size = n / k;
    (0..k)
        .map(|i| {
            let end = if i + 1 == k { n } else { (i + 1) * size };
            let mut part = idx[i * size..end].to_vec();
            part.sort_unstable();
            part
        })
        .collect()
}

/// Per-subset diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub subset_id: usize,
    pub size: usize,
    pub norm_raw: f64,
    pub norm_rectified: f64,
    pub inner_raw: f64,
    pub inner_rectified: f64,
    pub norm_ref: f64,
    pub rectified_fired: bool,
    pub degenerate: bool,
}

pub const SUBSET_COLUMNS: [&str; 9] = [
    "subset_id",
    "size",
    "norm_raw",
    "norm_rectified",
    "inner_raw",
    "inner_rectified",
    "norm_ref",
    "rectified_fired",
    "degenerate",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruLog {
    pub rectify: bool,
    pub constraint_sign: ConstraintSign,
    pub subsets: Vec<SubsetRecord>,
    pub events: Vec<String>,
}

/// `θ_org - (stg/K)·Σ T̄_k`.
pub fn tru_unlearn<T: Scalar>(theta_org: &Model<T>, unlearn: &[TokenSequence], cfg: &TruConfig) -> Result<(Params<T>, TruLog)> {
    run_task_vectors(theta_org, unlearn, cfg, true)
}

/// Plain task-vector negation with the same subsets and normalisation but no projection.
pub fn task_vector_baseline<T: Scalar>(theta_org: &Model<T>, unlearn: &[TokenSequence], cfg: &TruConfig) -> Result<(Params<T>, TruLog)> {
    run_task_vectors(theta_org, unlearn, cfg, false)
}

fn run_task_vectors<T: Scalar>(
    theta_org: &Model<T>,
    unlearn: &[TokenSequence],
    cfg: &TruConfig,
    rectify: bool,
) -> Result<(Params<T>, TruLog)> {
    cfg.validate(unlearn.len())?;
    let parts = partition(unlearn.len(), cfg.k_subsets, cfg.seed);
    let mut log = TruLog { rectify, constraint_sign: cfg.constraint_sign, subsets: Vec::new(), events: Vec::new() };
    let mut sum = Grad::zeros(theta_org.params().layout().clone());
    let mut used = 0;
    for (k, part) in parts.iter().enumerate() {
        let subset: Vec<_> = part.iter().map(|&i| unlearn[i].clone()).collect();
        let complement: Vec<_> = (0..unlearn.len()).filter(|i| !part.contains(i)).map(|i| unlearn[i].clone()).collect();
        let delta = compute_task_vector(theta_org, &subset, cfg.ft_steps, T::lit(cfg.ft_lr))?;
        let ref_grad = reference_grad(theta_org, &complement)?;
        let tv = TaskVector { delta, subset_id: k, ref_grad, rectified: false, normalized: false };
        let inner_raw = tv.delta.dot(&tv.ref_grad).as_f64();
        let norm_raw = tv.delta.norm().as_f64();
        let tv = if rectify { rectify_task_vector(&tv, cfg.constraint_sign)? } else { tv };
        if rectify && !tv.rectified {
            log.events.push(format!("subset {k}: reference gradient vanishes; task vector left unprojected"));
        }
        let mut rec = SubsetRecord {
            subset_id: k,
            size: subset.len(),
            norm_raw,
            norm_rectified: tv.delta.norm().as_f64(),
            inner_raw,
            inner_rectified: tv.delta.dot(&tv.ref_grad).as_f64(),
            norm_ref: tv.ref_grad.norm().as_f64(),
            rectified_fired: rectify
                && tv.rectified
                && match cfg.constraint_sign {
                    ConstraintSign::GruConsistent => inner_raw < 0.0,
                    ConstraintSign::Mirrored => inner_raw > 0.0,
                },
            degenerate: false,
        };
        match normalize_task_vector(&tv) {
            Ok(unit) => {
                sum.axpy_in_place(T::one(), &unit.delta);
                used += 1;
            }
            Err(Error::Degenerate(msg)) => {
                rec.degenerate = true;
                log.events.push(format!("{msg}; excluded from the average"));
            }
            Err(e) => return Err(e),
        }
        log.subsets.push(rec);
    }
    if used == 0 {
        return Err(Error::Degenerate("every task vector is degenerate".into()));
    }
    let scale = -T::lit(cfg.stg) / T::from_usize_lossy(cfg.k_subsets);
    let theta = theta_org.params().displaced(scale, &sum)?;
    Ok((theta, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn g(v: &[f64]) -> Grad<f64> {
        Grad::from_vec(v.to_vec())
    }

    fn tv(d: &[f64], r: &[f64]) -> TaskVector<f64> {
        TaskVector { delta: g(d), subset_id: 0, ref_grad: g(r), rectified: false, normalized: false }
    }

    #[test]
    fn rectify_examples() {
        for sign in [ConstraintSign::GruConsistent, ConstraintSign::Mirrored] {
            let out = rectify_task_vector(&tv(&[1.0, 0.0], &[0.0, 1.0]), sign).unwrap();
            assert_eq!(out.delta.as_slice(), &[1.0, 0.0]);
            assert!(out.rectified);
            assert!(rectify_task_vector(&out, sign).is_err());
        }
        let out = rectify_task_vector(&tv(&[1.0, -1.0], &[0.0, 1.0]), ConstraintSign::GruConsistent).unwrap();
        assert_eq!(out.delta.as_slice(), &[1.0, 0.0]);
        let out = rectify_task_vector(&tv(&[1.0, 1.0], &[0.0, 1.0]), ConstraintSign::Mirrored).unwrap();
        assert_eq!(out.delta.as_slice(), &[1.0, 0.0]);
        let out = rectify_task_vector(&tv(&[0.0, -3.0], &[0.0, 1.0]), ConstraintSign::GruConsistent).unwrap();
        assert_eq!(out.delta.as_slice(), &[0.0, 0.0]);
        let out = rectify_task_vector(&tv(&[1.0, -1.0], &[0.0, 0.0]), ConstraintSign::GruConsistent).unwrap();
        assert!(!out.rectified);
        assert_eq!(out.delta.as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_task_vector(&tv(&[3.0, 4.0], &[0.0, 0.0])).unwrap();
        assert!((n.delta.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!(n.normalized);
        let again = normalize_task_vector(&n).unwrap();
        assert!((again.delta.norm() - 1.0).abs() < 1e-15);
        assert!(matches!(normalize_task_vector(&tv(&[0.0, 0.0], &[1.0, 0.0])), Err(Error::Degenerate(_))));
    }

    #[test]
    fn task_vector_zero_and_one_step() {
        let m = Model::<f64>::zeros(ModelKind::TabularBigram, 4).unwrap();
        let s = vec![TokenSequence::new(vec![0, 1]).unwrap()];
        assert!(compute_task_vector(&m, &s, 0, 0.1).unwrap().norm() == 0.0);
        let d = compute_task_vector(&m, &s, 1, 0.1).unwrap();
        let want = grad_nll(&m, &s).unwrap().scaled(-0.1);
        assert_eq!(d.as_slice(), want.as_slice());
        assert!(compute_task_vector(&m, &[], 1, 0.1).is_err());
    }

    #[test]
    fn partition_shapes() {
        let p = partition(11, 3, 5);
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 5]);
        let mut all: Vec<_> = p.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert_eq!(p, partition(11, 3, 5));
    }
}
