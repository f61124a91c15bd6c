//! Gradient-rectified unlearning.
//!
//! Each step computes the unlearning gradient `g_u` and a mini-batch retain gradient
//! `g_r`, folds `g_r` into an exponential moving average `ḡ_r`, and projects `g_u`
//! onto the half-space `⟨g, ḡ_r⟩ ≥ 0` before the (optional) norm clip and the
//! optimizer step.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{composite_loss, retain_loss, LossSpec};
use crate::metrics::{cosine, StepRecord};
use crate::model::{Model, TokenSequence};
use crate::optim::{AdamHyper, OptimizerKind, OptimizerState};
use crate::rng::{stream, Stage, StageRng};
use crate::scalar::Scalar;
use crate::vector::{Grad, Params};

/// Norm below which a reference gradient defines no half-space.
pub const ZERO_REFERENCE: f64 = 1e-15;
/// `cos(g_u, ḡ_r) ≤ -1 + DEGENERATE_TOL` counts as exactly anti-parallel.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Closest point to `g_u` in `{g : ⟨g, g_ref⟩ ≥ 0}`.
///
/// Returns `g_u` untouched when the constraint already holds or `g_ref` is
/// (numerically) zero; otherwise removes the component along `g_ref`.
pub fn rectify<T: Scalar>(g_u: &Grad<T>, g_ref: &Grad<T>) -> Result<Grad<T>> {
    Ok(rectify_with_flag(g_u, g_ref)?.0)
}

/// [`rectify`], also reporting whether the projection fired.
pub fn rectify_with_flag<T: Scalar>(g_u: &Grad<T>, g_ref: &Grad<T>) -> Result<(Grad<T>, bool)> {
    g_u.check_len(g_ref.len(), "rectify")?;
    let rr = g_ref.dot(g_ref);
    if rr.sqrt() < T::lit(ZERO_REFERENCE) {
        return Ok((g_u.clone(), false));
    }
    let ur = g_u.dot(g_ref);
    if ur >= T::zero() {
        return Ok((g_u.clone(), false));
    }
    Ok((g_u.add_scaled(-(ur / rr), g_ref)?, true))
}

/// `(1-γ)·ema_prev + γ·g_r`.
pub fn ema_update<T: Scalar>(ema_prev: &Grad<T>, g_r: &Grad<T>, gamma: T) -> Result<Grad<T>> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::usage("EMA smoothing must lie in [0, 1)"));
    }
    ema_prev.check_len(g_r.len(), "ema_update")?;
    ema_prev.scaled(T::one() - gamma).add_scaled(gamma, g_r)
}

/// Rescales `g` to norm `tau` when it is longer than `tau`.
pub fn clip<T: Scalar>(g: &Grad<T>, tau: T) -> Result<Grad<T>> {
    Ok(clip_with_flag(g, tau)?.0)
}

fn clip_with_flag<T: Scalar>(g: &Grad<T>, tau: T) -> Result<(Grad<T>, bool)> {
    if !(tau > T::zero()) {
        return Err(Error::usage("clip threshold must be > 0"));
    }
    let n = g.norm();
    if n <= tau {
        return Ok((g.clone(), false));
    }
    Ok((g.scaled(tau / n), true))
}

fn default_probe() -> usize {
    64
}

/// Hyper-parameters of one unlearning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GruConfig {
    pub lr: f64,
    /// EMA smoothing for the retain gradient, in `(0, 1)`.
    pub gamma: f64,
    /// Clip threshold; `None` disables clipping.
    #[serde(default)]
    pub tau: Option<f64>,
    pub steps: usize,
    pub batch_u: usize,
    pub batch_r: usize,
    pub loss: LossSpec,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamHyper,
    pub seed: u64,
    /// Size of the fixed retain probe set behind `StepRecord::retain_risk`.
    #[serde(default = "default_probe")]
    pub probe_size: usize,
}

impl GruConfig {
    /// Preset with `γ = 0.8`, `τ = 0.001`.
    pub fn preset(loss: LossSpec, lr: f64, steps: usize, seed: u64) -> Self {
        GruConfig {
            lr,
            gamma: 0.8,
            tau: Some(0.001),
            steps,
            batch_u: 4,
            batch_r: 8,
            loss,
            optimizer: OptimizerKind::Sgd,
            adam: AdamHyper::default(),
            seed,
            probe_size: default_probe(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::usage("lr must be positive"));
        }
        // γ = 0 would freeze ḡ_r at zero and silently switch rectification off.
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::usage("gamma must lie in (0, 1)"));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::usage("tau must be > 0 when present"));
            }
        }
        if self.batch_u == 0 || self.batch_r == 0 {
            return Err(Error::usage("batch sizes must be >= 1"));
        }
        self.loss.validate()
    }
}

/// Mutable state carried across steps.
#[derive(Debug, Clone)]
pub struct GruState<T> {
    pub theta: Params<T>,
    /// `ḡ_r`; starts at zero so the first EMA equals `γ·g_r`.
    pub ema_retain: Grad<T>,
    pub step: usize,
    pub optimizer: OptimizerState<T>,
}

impl<T: Scalar> GruState<T> {
    pub fn new(theta: Params<T>, cfg: &GruConfig) -> Self {
        let ema_retain = Grad::zeros(theta.layout().clone());
        let optimizer = OptimizerState::new(cfg.optimizer, theta.len(), cfg.adam);
        GruState { theta, ema_retain, step: 0, optimizer }
    }
}

/// Batch indices drawn at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchDraw {
    pub unlearn: Vec<usize>,
    pub retain: Vec<usize>,
}

/// Shuffled epochs without replacement over the unlearn set; independent uniform
/// draws with replacement from the retain set.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    unlearn_rng: StageRng,
    retain_rng: StageRng,
    resample_rng: StageRng,
    order: Vec<usize>,
    cursor: usize,
    n_retain: usize,
}

impl BatchSampler {
    pub fn new(seed: u64, n_unlearn: usize, n_retain: usize) -> Self {
        BatchSampler {
            unlearn_rng: stream(seed, Stage::Unlearn),
            retain_rng: stream(seed, Stage::Retain),
            resample_rng: stream(seed, Stage::Resample),
            order: (0..n_unlearn).collect(),
            // forces a shuffle on first use
            cursor: n_unlearn,
            n_retain,
        }
    }

    pub fn next_unlearn(&mut self, b: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut out = Vec::with_capacity(b.min(n));
        while out.len() < b.min(n) {
            if self.cursor == n {
                self.order.shuffle(&mut self.unlearn_rng);
                self.cursor = 0;
            }
            let take = (b.min(n) - out.len()).min(n - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }

    pub fn next_retain(&mut self, b: usize) -> Vec<usize> {
        (0..b).map(|_| self.retain_rng.random_range(0..self.n_retain)).collect()
    }

    /// Fresh unlearn batch from a separate stream, so paired runs keep identical
    /// main-stream draws.
    pub fn resample_unlearn(&mut self, b: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.order.len()).collect();
        idx.shuffle(&mut self.resample_rng);
        idx.truncate(b.min(idx.len()));
        idx
    }
}

/// Read-only inputs of a run.
pub struct UnlearnEnv<'a, T> {
    /// Architecture template; its parameters are `θ_org`, which is also the
    /// NPO reference.
    pub reference: &'a Model<T>,
    pub unlearn: &'a [TokenSequence],
    pub retain: &'a [TokenSequence],
    pub probe: Vec<TokenSequence>,
    pub rectify_enabled: bool,
}

impl<'a, T: Scalar> UnlearnEnv<'a, T> {
    pub fn new(
        reference: &'a Model<T>,
        unlearn: &'a [TokenSequence],
        retain: &'a [TokenSequence],
        cfg: &GruConfig,
        rectify_enabled: bool,
    ) -> Result<Self> {
        if unlearn.is_empty() || retain.is_empty() {
            return Err(Error::usage("unlearn and retain sets must be non-empty"));
        }
        let probe = probe_set(retain, cfg.probe_size, cfg.seed);
        Ok(UnlearnEnv { reference, unlearn, retain, probe, rectify_enabled })
    }
}

/// Fixed seed-determined subsample of the retain set (all of it when small).
pub fn probe_set(retain: &[TokenSequence], size: usize, seed: u64) -> Vec<TokenSequence> {
    if retain.len() <= size {
        return retain.to_vec();
    }
    let mut idx: Vec<usize> = (0..retain.len()).collect();
    idx.shuffle(&mut stream(seed, Stage::Eval));
    idx.truncate(size);
    idx.sort_unstable();
    idx.into_iter().map(|i| retain[i].clone()).collect()
}

/// What the update rule did with one pair of gradients.
#[derive(Debug, Clone)]
pub struct UpdateOutcome<T> {
    pub applied: Grad<T>,
    pub rectified: bool,
    pub clipped: bool,
    pub norm_rectified: T,
    pub cos_pre: Option<T>,
    pub cos_post: Option<T>,
}

/// EMA, rectification, clipping and optimizer step for given gradients.
///
/// This is the model-free core of [`gru_step`].
pub fn gru_update<T: Scalar>(
    state: &mut GruState<T>,
    g_u: &Grad<T>,
    g_r: &Grad<T>,
    cfg: &GruConfig,
    rectify_enabled: bool,
) -> Result<UpdateOutcome<T>> {
    state.ema_retain = ema_update(&state.ema_retain, g_r, T::lit(cfg.gamma))?;
    let outcome = direction(g_u, &state.ema_retain, cfg, rectify_enabled)?;
    state.theta = state.optimizer.step(&state.theta, &outcome.applied, T::lit(cfg.lr))?;
    state.step += 1;
    Ok(outcome)
}

fn direction<T: Scalar>(g_u: &Grad<T>, ema: &Grad<T>, cfg: &GruConfig, rectify_enabled: bool) -> Result<UpdateOutcome<T>> {
    let (rect, rectified) = if rectify_enabled { rectify_with_flag(g_u, ema)? } else { (g_u.clone(), false) };
    let norm_rectified = rect.norm();
    let (applied, clipped) = match cfg.tau {
        Some(t) => clip_with_flag(&rect, T::lit(t))?,
        None => (rect, false),
    };
    Ok(UpdateOutcome {
        cos_pre: cosine(g_u, ema),
        cos_post: cosine(&applied, ema),
        applied,
        rectified,
        clipped,
        norm_rectified,
    })
}

fn is_degenerate<T: Scalar>(g_u: &Grad<T>, ema: &Grad<T>) -> bool {
    cosine(g_u, ema).is_some_and(|c| c <= -T::one() + T::lit(DEGENERATE_TOL))
}

fn batch_of(data: &[TokenSequence], idx: &[usize]) -> Vec<TokenSequence> {
    idx.iter().map(|&i| data[i].clone()).collect()
}

/// One step of the rectified update loop. Returns the record and the batches used.
pub fn gru_step<T: Scalar>(
    state: &mut GruState<T>,
    cfg: &GruConfig,
    env: &UnlearnEnv<'_, T>,
    sampler: &mut BatchSampler,
) -> Result<(StepRecord, BatchDraw)> {
    let step = state.step;
    let model = env.reference.with_params(state.theta.clone())?;
    let mut draw = BatchDraw { unlearn: sampler.next_unlearn(cfg.batch_u), retain: sampler.next_retain(cfg.batch_r) };
    let b_r = batch_of(env.retain, &draw.retain);
    let loss_at = |idx: &[usize]| composite_loss(&cfg.loss, Some(env.reference), &model, &batch_of(env.unlearn, idx), &b_r);

    let (mut unlearn_value, mut g_u) = loss_at(&draw.unlearn)?;
    let (_, g_r) = retain_loss(&model, &b_r)?;
    let ema = ema_update(&state.ema_retain, &g_r, T::lit(cfg.gamma))?;

    let mut resampled = false;
    let mut degenerate = false;
    if env.rectify_enabled && is_degenerate(&g_u, &ema) {
        resampled = true;
        draw.unlearn = sampler.resample_unlearn(cfg.batch_u);
        (unlearn_value, g_u) = loss_at(&draw.unlearn)?;
        degenerate = is_degenerate(&g_u, &ema);
    }

    let outcome = if degenerate {
        state.ema_retain = ema;
        state.step += 1;
        UpdateOutcome {
            cos_pre: cosine(&g_u, &state.ema_retain),
            cos_post: None,
            applied: Grad::zeros(g_u.layout().clone()),
            rectified: true,
            clipped: false,
            norm_rectified: T::zero(),
        }
    } else {
        gru_update(state, &g_u, &g_r, cfg, env.rectify_enabled)?
    };

    let after = env.reference.with_params(state.theta.clone())?;
    let (risk, _) = retain_loss(&after, &env.probe)?;
    let record = StepRecord {
        step,
        unlearn_loss: unlearn_value.as_f64(),
        retain_risk: risk.as_f64(),
        cos_pre: outcome.cos_pre.map(Scalar::as_f64),
        cos_post: outcome.cos_post.map(Scalar::as_f64),
        norm_gu: g_u.norm().as_f64(),
        norm_rectified: outcome.norm_rectified.as_f64(),
        norm_applied: outcome.applied.norm().as_f64(),
        norm_ema: state.ema_retain.norm().as_f64(),
        rectified: outcome.rectified,
        clipped: outcome.clipped,
        resampled,
        degenerate,
    };
    Ok((record, draw))
}

/// Everything logged by [`run_unlearn`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rectify_enabled: bool,
    pub optimizer: OptimizerKind,
    /// Retain NLL on the probe set before the first step.
    pub initial_retain_risk: f64,
    pub records: Vec<StepRecord>,
    pub batches: Vec<BatchDraw>,
    /// Human-readable notes (degenerate steps, reference-model choice).
    pub events: Vec<String>,
}

impl RunLog {
    /// Final probe retain risk minus the initial one.
    pub fn retain_risk_increase(&self) -> f64 {
        self.records.last().map(|r| r.retain_risk - self.initial_retain_risk).unwrap_or(0.0)
    }
}

/// Runs `cfg.steps` steps from `theta0`. With `rectify_enabled = false` this is the
/// plain update `θ ← θ - lr·g_u` (through the configured optimizer).
///
/// The NPO reference model is `theta0` itself: the state immediately before
/// unlearning.
pub fn run_unlearn<T: Scalar>(
    theta0: &Model<T>,
    cfg: &GruConfig,
    unlearn: &[TokenSequence],
    retain: &[TokenSequence],
    rectify_enabled: bool,
) -> Result<(Params<T>, RunLog)> {
    cfg.validate()?;
    let env = UnlearnEnv::new(theta0, unlearn, retain, cfg, rectify_enabled)?;
    let (initial, _) = retain_loss(theta0, &env.probe)?;
    let mut log = RunLog {
        rectify_enabled,
        optimizer: cfg.optimizer,
        initial_retain_risk: initial.as_f64(),
        records: Vec::with_capacity(cfg.steps),
        batches: Vec::with_capacity(cfg.steps),
        events: vec!["reference model = parameters immediately before unlearning".into()],
    };
    let mut state = GruState::new(theta0.params().clone(), cfg);
    let mut sampler = BatchSampler::new(cfg.seed, unlearn.len(), retain.len());
    for t in 0..cfg.steps {
        let (rec, draw) = gru_step(&mut state, cfg, &env, &mut sampler).map_err(|e| e.at_step(t))?;
        if rec.degenerate {
            log.events.push(format!("step {t}: degenerate cos(g_u, ema) = -1 after resampling; zero update"));
        }
        log.records.push(rec);
        log.batches.push(draw);
    }
    Ok((state.theta, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::optim::sgd_step;

    fn g(v: &[f64]) -> Grad<f64> {
        Grad::from_vec(v.to_vec())
    }

    #[test]
    fn rectify_examples() {
        assert_eq!(rectify(&g(&[1.0, 0.0]), &g(&[0.0, 1.0])).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(rectify(&g(&[1.0, -1.0]), &g(&[0.0, 1.0])).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(rectify(&g(&[-2.0, 0.0]), &g(&[1.0, 0.0])).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(rectify(&g(&[-2.0, 1.0]), &g(&[0.0, 0.0])).unwrap().as_slice(), &[-2.0, 1.0]);
        assert!(rectify(&g(&[1.0]), &g(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn ema_examples() {
        let e = ema_update(&g(&[0.0, 0.0]), &g(&[1.0, 1.0]), 0.8).unwrap();
        assert_eq!(e.as_slice(), &[0.8, 0.8]);
        let e = ema_update(&g(&[0.0]), &g(&[5.0]), 0.0).unwrap();
        assert_eq!(e.as_slice(), &[0.0]);
        let mut e = g(&[0.0]);
        for _ in 0..3 {
            e = ema_update(&e, &g(&[1.0]), 0.5).unwrap();
        }
        assert!((e.as_slice()[0] - 0.875).abs() < 1e-15);
        assert!(ema_update(&e, &g(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn clip_examples() {
        let c = clip(&g(&[3.0, 4.0]), 1.0).unwrap();
        assert!((c.as_slice()[0] - 0.6).abs() < 1e-15 && (c.as_slice()[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip(&g(&[0.1, 0.0]), 1.0).unwrap().as_slice(), &[0.1, 0.0]);
        assert_eq!(clip(&c, 1.0).unwrap(), clip(&clip(&c, 1.0).unwrap(), 1.0).unwrap());
        assert_eq!(clip(&g(&[0.0, 0.0]), 1.0).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn quadratic_step_matches_hand_projection() {
        // g_u = (1, -2), g_r = (0, 1), γ = 0.5: ḡ_r = (0, 0.5); projection drops the
        // second coordinate, so θ' = θ - lr·(1, 0).
        let cfg = GruConfig { tau: None, gamma: 0.5, lr: 0.1, ..GruConfig::preset(LossSpec::new(LossKind::Ga), 0.1, 1, 0) };
        let theta = Params::from_vec(vec![2.0, 3.0]);
        let mut st = GruState::new(theta.clone(), &cfg);
        let out = gru_update(&mut st, &g(&[1.0, -2.0]), &g(&[0.0, 1.0]), &cfg, true).unwrap();
        assert!(out.rectified);
        let hand = sgd_step(&theta, &g(&[1.0, 0.0]), 0.1).unwrap();
        for (a, b) in st.theta.as_slice().iter().zip(hand.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(st.ema_retain.as_slice(), &[0.0, 0.5]);
    }

    #[test]
    fn config_validation() {
        let mut c = GruConfig::preset(LossSpec::new(LossKind::Ga), 0.1, 3, 0);
        assert!(c.validate().is_ok());
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c.gamma = 0.5;
        c.tau = Some(0.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn sampler_covers_epoch_without_replacement() {
        let mut s = BatchSampler::new(1, 10, 5);
        let mut seen: Vec<usize> = (0..5).flat_map(|_| s.next_unlearn(2)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(s.next_retain(20).iter().all(|&i| i < 5));
        assert_eq!(s.next_unlearn(50).len(), 10);
    }
}
