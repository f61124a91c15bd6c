//! The quadratic verification suite behind `verify-theorems`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use unlearn_core::rng::{stream, Stage};
use unlearn_core::theory::{
    adversarial_search, default_sampler, random_pair, verify_theorem1, verify_theorem1_from,
    verify_theorem2, Counterexample, Matrix, QuadraticPair, VerificationReport,
};
use unlearn_core::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSuite {
    pub seed: u64,
    pub theorem1: VerificationReport,
    /// Constructions with `g_r = -c·g_u` at the start point.
    pub degenerate: VerificationReport,
    pub theorem2: VerificationReport,
    pub adversarial: VerificationReport,
    pub counterexample: Option<Counterexample>,
}

impl TheoremSuite {
    pub fn passed(&self) -> bool {
        self.theorem1.passed
            && self.degenerate.passed
            && self.degenerate.degenerate_steps == self.degenerate.checks
            && self.theorem2.passed
            && self.counterexample.is_some()
    }
}

fn random_vec_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn total(name: &str) -> VerificationReport {
    VerificationReport { name: name.into(), passed: true, ..Default::default() }
}

/// Unlearn and retain minima placed symmetrically around `θ_0` with equal
/// isotropic curvature, so the two gradients are exactly antiparallel and stay
/// so while the update is zero.
pub fn antiparallel_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(QuadraticPair, Vec<f64>)> {
    let theta0 = random_vec_normal(n, rng);
    let d = random_vec_normal(n, rng);
    let c: f64 = rng.random_range(0.5..2.0);
    let a: Vec<f64> = theta0.iter().zip(&d).map(|(t, d)| t + d).collect();
    let b: Vec<f64> = theta0.iter().zip(&d).map(|(t, d)| t - d).collect();
    let m = Matrix::identity(n).scaled(c);
    Ok((QuadraticPair::new(m.clone(), a, m, b)?, theta0))
}

/// Theorem 1 on `instances` random quadratics (dims 2–10, `lr = 1.9/L`,
/// condition number up to 1e6), the antiparallel constructions, Theorem 2 on
/// `instances` quadratics and the adversarial counterexample search.
pub fn run_suite(seed: u64, instances: usize) -> Result<TheoremSuite> {
    let mut rng = stream(seed, Stage::Theory);
    let mut t1 = total("theorem1");
    for i in 0..instances {
        let pair = random_pair(2 + i % 9, 1e6, &mut rng)?;
        t1.merge(&verify_theorem1(&pair, 1.9 / pair.l_unlearn, 20, &mut rng));
    }
    let mut deg = total("theorem1_degenerate");
    for i in 0..instances.div_ceil(10) {
        let (pair, theta0) = antiparallel_pair(2 + i % 9, &mut rng)?;
        deg.merge(&verify_theorem1_from(&pair, 1.9 / pair.l_unlearn, 3, theta0));
    }
    let mut t2 = total("theorem2");
    for i in 0..instances {
        let pair = random_pair(2 + i % 9, 1e2, &mut rng)?;
        let lr = rng.random_range(0.05..=2.0) / pair.l_retain;
        t2.merge(&verify_theorem2(&pair, lr, default_sampler, 20, &mut rng)?);
    }
    let (adversarial, counterexample) = adversarial_search(5000, &mut rng)?;
    Ok(TheoremSuite { seed, theorem1: t1, degenerate: deg, theorem2: t2, adversarial, counterexample })
}
