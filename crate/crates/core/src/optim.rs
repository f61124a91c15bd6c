//! Plain SGD and AdamW, fed with whatever (possibly rectified) gradient the caller supplies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{Grad, Params};

/// `θ - lr·g`.
pub fn sgd_step<T: Scalar>(theta: &Params<T>, g: &Grad<T>, lr: T) -> Result<Params<T>> {
    if !(lr > T::zero()) || !lr.is_finite() {
        return Err(Error::usage("learning rate must be positive and finite"));
    }
    theta.check_len(g.len(), "sgd_step")?;
    theta.displaced(-lr, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamHyper {
    fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::usage("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::usage("Adam eps must be > 0 and weight decay >= 0"));
        }
        Ok(())
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![T::zero(); len], v: vec![T::zero(); len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One decoupled-weight-decay Adam update with bias-corrected moments.
pub fn adamw_step<T: Scalar>(
    state: &AdamState<T>,
    theta: &Params<T>,
    g: &Grad<T>,
    lr: T,
    hp: &AdamHyper,
) -> Result<(Params<T>, AdamState<T>)> {
    hp.validate()?;
    theta.check_len(g.len(), "adamw_step")?;
    if state.m.len() != theta.len() {
        return Err(Error::usage(format!(
            "Adam state has length {} but parameters have {}",
            state.m.len(),
            theta.len()
        )));
    }
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let (eps, wd) = (T::lit(hp.eps), T::lit(hp.weight_decay));
    let t = state.t + 1;
    let c1 = T::one() - b1.powi(t as i32);
    let c2 = T::one() - b2.powi(t as i32);
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut next = theta.as_slice().to_vec();
    for (i, &gi) in g.as_slice().iter().enumerate() {
        m[i] = b1 * m[i] + (T::one() - b1) * gi;
        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        next[i] = next[i] * (T::one() - lr * wd) - lr * m_hat / (v_hat.sqrt() + eps);
    }
    let theta = Params::new(theta.layout().clone(), next)?;
    Ok((theta, AdamState { m, v, t }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW,
}

/// Per-run optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState<T> {
    Sgd,
    AdamW(AdamState<T>, AdamHyper),
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, len: usize, hp: AdamHyper) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::AdamW => OptimizerState::AdamW(AdamState::new(len), hp),
        }
    }

    pub fn step(&mut self, theta: &Params<T>, g: &Grad<T>, lr: T) -> Result<Params<T>> {
        match self {
            OptimizerState::Sgd => sgd_step(theta, g, lr),
            OptimizerState::AdamW(state, hp) => {
                let (next, st) = adamw_step(state, theta, g, lr, hp)?;
                *state = st;
                Ok(next)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let th = Params::from_vec(vec![1.0f64, 1.0]);
        let g = Grad::from_vec(vec![1.0, -1.0]);
        assert_eq!(sgd_step(&th, &g, 0.5).unwrap().as_slice(), &[0.5, 1.5]);
        let z = Grad::from_vec(vec![0.0, 0.0]);
        assert_eq!(sgd_step(&th, &z, 0.5).unwrap(), th);
        assert!(sgd_step(&th, &Grad::from_vec(vec![1.0]), 0.1).is_err());
        assert!(sgd_step(&th, &g, 0.0).is_err());
    }

    #[test]
    fn sgd_two_steps_on_half_square() {
        let mut th = Params::from_vec(vec![1.0f64]);
        for _ in 0..2 {
            let g = Grad::from_vec(th.as_slice().to_vec());
            th = sgd_step(&th, &g, 0.1).unwrap();
        }
        assert!((th.as_slice()[0] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_unit_scale() {
        // t = 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
        let th = Params::from_vec(vec![0.0f64]);
        let st = AdamState::new(1);
        let (next, st) = adamw_step(&st, &th, &Grad::from_vec(vec![1.0]), 0.1, &AdamHyper::default()).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((next.as_slice()[0] - want).abs() < 1e-15);
        assert_eq!(st.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_and_decay() {
        let mut th = Params::from_vec(vec![2.0f64, -1.0]);
        let mut st = AdamState::new(2);
        let z = Grad::from_vec(vec![0.0, 0.0]);
        for _ in 0..5 {
            let (n, s) = adamw_step(&st, &th, &z, 0.1, &AdamHyper::default()).unwrap();
            assert_eq!(n, th);
            th = n;
            st = s;
        }
        let hp = AdamHyper { weight_decay: 0.5, ..AdamHyper::default() };
        let (n, _) = adamw_step(&st, &th, &z, 0.1, &hp).unwrap();
        assert!((n.as_slice()[0] - 2.0 * 0.95).abs() < 1e-15);
        assert!(adamw_step(&AdamState::new(3), &th, &z, 0.1, &hp).is_err());
        let bad = AdamHyper { beta1: 1.0, ..AdamHyper::default() };
        assert!(adamw_step(&st, &th, &z, 0.1, &bad).is_err());
    }
}
