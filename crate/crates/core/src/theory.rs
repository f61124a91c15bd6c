//! Quadratic test beds with exact smoothness constants, used to check the
//! descent and retention guarantees of the rectified update numerically.
//!
//! Unlearn loss `U(θ) = ½(θ-a)ᵀA(θ-a)`, retain loss `R(θ) = ½(θ-b)ᵀB(θ-b)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO_NORM: f64 = 1e-15;
const DEGENERATE_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-12;
const SIMPSON_NODES: usize = 65;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::usage(format!("matrix data has {} entries, expected {}", data.len(), n * n)));
        }
        Ok(Matrix { n, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::usage("matrix rows must form a square"));
        }
        Ok(Matrix { n, data: rows.concat() })
    }

    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.data[i * d.len() + i] = x;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol * (1.0 + self.get(i, j).abs())))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.n).map(|row| dot(row, x)).collect()
    }

    /// `xᵀMx`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    /// `Q·diag(eig)·Qᵀ` with `Q` given column-wise.
    pub fn from_eigen(q_cols: &[Vec<f64>], eig: &[f64]) -> Matrix {
        let n = eig.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = (0..n).map(|k| q_cols[k][i] * eig[k] * q_cols[k][j]).sum();
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], s: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + s * b).collect()
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_symmetric(1e-12) {
        return Err(Error::usage("eigenvalues requested for an asymmetric matrix"));
    }
    let n = m.n;
    let mut a = m.data.clone();
    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let scale = norm(&a).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off(&a) <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `(L, ℓ)`: largest and smallest eigenvalue.
pub fn smoothness_constants(m: &Matrix) -> Result<(f64, f64)> {
    let eig = jacobi_eigenvalues(m)?;
    match (eig.first(), eig.last()) {
        (Some(&lo), Some(&hi)) => Ok((hi, lo)),
        _ => Err(Error::usage("empty matrix")),
    }
}

/// `∫₀¹ (1-a)·gᵀBg da = ½gᵀBg` for a constant Hessian `B`.
pub fn q_curvature(b: &Matrix, g: &[f64], _q: f64) -> f64 {
    0.5 * b.quad_form(g)
}

/// `∫₀¹ (1-a)·gᵀH(θ - a·q·g)g da` by composite Simpson on 65 nodes.
pub fn q_curvature_simpson<H>(hessian: H, theta: &[f64], g: &[f64], q: f64) -> f64
where
    H: Fn(&[f64]) -> Matrix,
{
    let intervals = SIMPSON_NODES - 1;
    let h = 1.0 / intervals as f64;
    let f = |a: f64| (1.0 - a) * hessian(&axpy(theta, -a * q, g)).quad_form(g);
    let mut s = f(0.0) + f(1.0);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPair {
    pub a_mat: Matrix,
    pub a: Vec<f64>,
    pub b_mat: Matrix,
    pub b: Vec<f64>,
    pub l_unlearn: f64,
    pub l_retain: f64,
    pub ell_retain: f64,
}

impl QuadraticPair {
    pub fn new(a_mat: Matrix, a: Vec<f64>, b_mat: Matrix, b: Vec<f64>) -> Result<Self> {
        let n = a_mat.dim();
        if b_mat.dim() != n || a.len() != n || b.len() != n {
            return Err(Error::usage("quadratic pair dimensions disagree"));
        }
        let (l_unlearn, ell_u) = smoothness_constants(&a_mat)?;
        let (l_retain, ell_retain) = smoothness_constants(&b_mat)?;
        if ell_u < -1e-10 * l_unlearn.abs().max(1.0) || ell_retain < -1e-10 * l_retain.abs().max(1.0) {
            return Err(Error::usage("quadratic pair matrices must be positive semidefinite"));
        }
        Ok(QuadraticPair { a_mat, a, b_mat, b, l_unlearn, l_retain, ell_retain: ell_retain.max(0.0) })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn unlearn_loss(&self, theta: &[f64]) -> f64 {
        let d = axpy(theta, -1.0, &self.a);
        0.5 * self.a_mat.quad_form(&d)
    }

    pub fn unlearn_grad(&self, theta: &[f64]) -> Vec<f64> {
        self.a_mat.mul_vec(&axpy(theta, -1.0, &self.a))
    }

    pub fn retain_loss(&self, theta: &[f64]) -> f64 {
        let d = axpy(theta, -1.0, &self.b);
        0.5 * self.b_mat.quad_form(&d)
    }

    pub fn retain_grad(&self, theta: &[f64]) -> Vec<f64> {
        self.b_mat.mul_vec(&axpy(theta, -1.0, &self.b))
    }
}

/// Uniformly random orthonormal basis (Gram–Schmidt on Gaussian columns).
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(&v, c);
                v = axpy(&v, -p, c);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            cols.push(v.iter().map(|x| x / nv).collect());
        }
    }
    cols
}

/// Random SPD matrix with eigenvalues log-uniform in `[1, cond]`, times a random scale.
pub fn random_spd<R: Rng + ?Sized>(n: usize, max_cond: f64, rng: &mut R) -> Matrix {
    let q = random_orthonormal(n, rng);
    let cond = 10f64.powf(rng.random_range(0.0..=max_cond.log10()));
    let scale = 10f64.powf(rng.random_range(-1.0..=1.0));
    let mut eig: Vec<f64> = (0..n).map(|_| scale * cond.powf(rng.random::<f64>())).collect();
    // pin both ends so the condition number is exactly realised
    eig[0] = scale;
    if n > 1 {
        eig[n - 1] = scale * cond;
    }
    Matrix::from_eigen(&q, &eig)
}

fn random_vec<R: Rng + ?Sized>(n: usize, s: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random quadratic pair of dimension `n`; condition numbers at most `max_cond` (≤ 1e6).
pub fn random_pair<R: Rng + ?Sized>(n: usize, max_cond: f64, rng: &mut R) -> Result<QuadraticPair> {
    if n == 0 || !(1.0..=1e6).contains(&max_cond) {
        return Err(Error::usage("random_pair needs n >= 1 and 1 <= max_cond <= 1e6"));
    }
    let a_mat = random_spd(n, max_cond, rng);
    let b_mat = random_spd(n, max_cond, rng);
    let a = random_vec(n, 1.0, rng);
    let b = random_vec(n, 1.0, rng);
    QuadraticPair::new(a_mat, a, b_mat, b)
}

/// One-step rectification with exact gradients: `(g̃, fired)`.
pub fn project(g_u: &[f64], g_r: &[f64]) -> (Vec<f64>, bool) {
    let rr = dot(g_r, g_r);
    let ip = dot(g_u, g_r);
    if ip < 0.0 && rr.sqrt() >= ZERO_NORM {
        (axpy(g_u, -ip / rr, g_r), true)
    } else {
        (g_u.to_vec(), false)
    }
}

fn cos(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    (na >= ZERO_NORM && nb >= ZERO_NORM).then(|| dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VerificationReport {
    pub name: String,
    pub instances: usize,
    pub checks: usize,
    pub failures: usize,
    pub degenerate_steps: usize,
    pub rectified_steps: usize,
    pub out_of_hypothesis: usize,
    pub descent_bound_violations: usize,
    pub conditions_satisfied: usize,
    pub conditions_violated: usize,
    /// Condition-violated samples where the inequality failed.
    pub counterexamples: usize,
    pub min_delta: Option<f64>,
    pub max_delta: Option<f64>,
    pub worst_excess: f64,
    pub passed: bool,
}

impl VerificationReport {
    fn named(name: &str) -> Self {
        VerificationReport { name: name.to_string(), passed: true, ..Default::default() }
    }

    fn record_delta(&mut self, d: f64) {
        self.min_delta = Some(self.min_delta.map_or(d, |m| m.min(d)));
        self.max_delta = Some(self.max_delta.map_or(d, |m| m.max(d)));
    }

    /// Folds another report of the same kind into this one.
    pub fn merge(&mut self, other: &VerificationReport) {
        self.instances += other.instances;
        self.checks += other.checks;
        self.failures += other.failures;
        self.degenerate_steps += other.degenerate_steps;
        self.rectified_steps += other.rectified_steps;
        self.out_of_hypothesis += other.out_of_hypothesis;
        self.descent_bound_violations += other.descent_bound_violations;
        self.conditions_satisfied += other.conditions_satisfied;
        self.conditions_violated += other.conditions_violated;
        self.counterexamples += other.counterexamples;
        if let Some(d) = other.min_delta {
            self.record_delta(d);
        }
        if let Some(d) = other.max_delta {
            self.record_delta(d);
        }
        self.worst_excess = self.worst_excess.max(other.worst_excess);
        self.passed &= other.passed;
    }
}

fn rel_tol(x: f64) -> f64 {
    1e-9 * (1.0 + x.abs())
}

/// Runs `steps` rectified descent steps on the unlearn quadratic from `θ_0 ~ N(0, I)`
/// and checks that the unlearn loss never increases. Exact retain gradients
/// serve as the reference. A step with `cos(g_u, g_r) ≤ -1 + 1e-12` is
/// degenerate and applies a zero update.
pub fn verify_theorem1<R: Rng + ?Sized>(pair: &QuadraticPair, lr: f64, steps: usize, rng: &mut R) -> VerificationReport {
    let theta0 = random_vec(pair.dim(), 1.0, rng);
    verify_theorem1_from(pair, lr, steps, theta0)
}

/// [`verify_theorem1`] from a given starting point.
pub fn verify_theorem1_from(pair: &QuadraticPair, lr: f64, steps: usize, theta0: Vec<f64>) -> VerificationReport {
    let mut rep = VerificationReport::named("theorem1");
    rep.instances = 1;
    if !(lr > 0.0 && lr < 2.0 / pair.l_unlearn) {
        rep.out_of_hypothesis = 1;
    }
    let l = pair.l_unlearn;
    let mut theta = theta0;
    for _ in 0..steps {
        let g_u = pair.unlearn_grad(&theta);
        let g_r = pair.retain_grad(&theta);
        let u0 = pair.unlearn_loss(&theta);
        let degenerate = cos(&g_u, &g_r).is_some_and(|c| c <= -1.0 + DEGENERATE_TOL);
        let g_t = if degenerate {
            rep.degenerate_steps += 1;
            vec![0.0; theta.len()]
        } else {
            let (g, fired) = project(&g_u, &g_r);
            rep.rectified_steps += fired as usize;
            g
        };
        let next = axpy(&theta, -lr, &g_t);
        let u1 = pair.unlearn_loss(&next);
        let delta = u1 - u0;
        rep.record_delta(delta);
        rep.checks += 1;
        let excess = delta - rel_tol(u0);
        if excess > 0.0 {
            rep.failures += 1;
            rep.worst_excess = rep.worst_excess.max(excess);
        }
        if degenerate && next != theta {
            rep.failures += 1;
        }
        let bound = u0 - lr * dot(&g_u, &g_t) + 0.5 * l * lr * lr * dot(&g_t, &g_t);
        if u1 > bound + rel_tol(bound) {
            rep.descent_bound_violations += 1;
        }
        theta = next;
    }
    rep.passed = rep.failures == 0 && rep.descent_bound_violations == 0;
    rep
}

/// Outcome of one retention comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionSample {
    pub sin2_phi: f64,
    pub condition_a: bool,
    pub condition_b: bool,
    pub r_gru: f64,
    pub r_plain: f64,
}

/// Compares `R(θ - lr·g̃)` with `R(θ - lr·g_u)` for one `(θ, g_u)`.
pub fn retention_sample(pair: &QuadraticPair, lr: f64, theta: &[f64], g_u: &[f64]) -> RetentionSample {
    let g_r = pair.retain_grad(theta);
    let c = cos(g_u, &g_r).unwrap_or(1.0).clamp(-1.0, 1.0);
    let sin2_phi = (1.0 - c * c).max(0.0);
    let (g_t, _) = project(g_u, &g_r);
    RetentionSample {
        sin2_phi,
        condition_a: pair.ell_retain >= pair.l_retain * sin2_phi,
        condition_b: lr > 0.0 && lr <= 2.0 / pair.l_retain,
        r_gru: pair.retain_loss(&axpy(theta, -lr, &g_t)),
        r_plain: pair.retain_loss(&axpy(theta, -lr, g_u)),
    }
}

/// Default `(θ, g_u)` sampler: `θ ~ N(0, I)` and an unlearn gradient mixing the
/// retain-gradient direction with isotropic noise at a random ratio, so every
/// conflict angle is visited.
pub fn default_sampler<R: Rng + ?Sized>(pair: &QuadraticPair, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let n = pair.dim();
    let theta = random_vec(n, 1.0, rng);
    let g_r = pair.retain_grad(&theta);
    let nr = norm(&g_r).max(ZERO_NORM);
    let along = rng.random_range(-1.0..=1.0);
    let noise = 10f64.powf(rng.random_range(-3.0..=1.0));
    let g_u = g_r
        .iter()
        .map(|x| along * x / nr + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (theta, g_u)
}

/// Tallies the retention inequality separately for samples that satisfy both
/// conditions (`ℓ ≥ L·sin²φ` and `0 < lr ≤ 2/L`) and samples that do not.
pub fn verify_theorem2<R, S>(pair: &QuadraticPair, lr: f64, mut sampler: S, trials: usize, rng: &mut R) -> Result<VerificationReport>
where
    R: Rng + ?Sized,
    S: FnMut(&QuadraticPair, &mut R) -> (Vec<f64>, Vec<f64>),
{
    if trials == 0 {
        return Err(Error::usage("verify_theorem2 needs at least one trial"));
    }
    let mut rep = VerificationReport::named("theorem2");
    rep.instances = 1;
    for _ in 0..trials {
        let (theta, g_u) = sampler(pair, rng);
        let s = retention_sample(pair, lr, &theta, &g_u);
        rep.checks += 1;
        let delta = s.r_gru - s.r_plain;
        let excess = delta - rel_tol(s.r_plain);
        if s.condition_a && s.condition_b {
            rep.conditions_satisfied += 1;
            rep.record_delta(delta);
            if excess > 0.0 {
                rep.failures += 1;
                rep.worst_excess = rep.worst_excess.max(excess);
            }
        } else {
            rep.conditions_violated += 1;
            if excess > 0.0 {
                rep.counterexamples += 1;
            }
        }
    }
    rep.passed = rep.failures == 0;
    Ok(rep)
}

/// A condition-violated instance where rectification raises the retain loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub pair: QuadraticPair,
    pub lr: f64,
    pub theta: Vec<f64>,
    pub g_u: Vec<f64>,
    pub sin2_phi: f64,
    pub r_gru: f64,
    pub r_plain: f64,
}

/// Random search over 2-D instances with ill-conditioned, rotated retain
/// Hessians, `θ` close to the retain minimiser and a conflicting `g_u`.
pub fn adversarial_search<R: Rng + ?Sized>(trials: usize, rng: &mut R) -> Result<(VerificationReport, Option<Counterexample>)> {
    let mut rep = VerificationReport::named("theorem2_adversarial");
    let mut first = None;
    for _ in 0..trials {
        let pair = random_pair(2, 1e4, rng)?;
        let lr = rng.random_range(0.5..=2.0) / pair.l_retain;
        let offset = 10f64.powf(rng.random_range(-4.0..=-1.0));
        let theta = axpy(&pair.b, offset, &random_vec(2, 1.0, rng));
        let g_u = random_vec(2, 1.0, rng);
        let s = retention_sample(&pair, lr, &theta, &g_u);
        rep.instances += 1;
        rep.checks += 1;
        let excess = s.r_gru - s.r_plain - rel_tol(s.r_plain);
        if s.condition_a && s.condition_b {
            rep.conditions_satisfied += 1;
            if excess > 0.0 {
                rep.failures += 1;
            }
        } else {
            rep.conditions_violated += 1;
            if excess > 0.0 {
                rep.counterexamples += 1;
                if first.is_none() {
                    first = Some(Counterexample {
                        pair: pair.clone(),
                        lr,
                        theta,
                        g_u,
                        sin2_phi: s.sin2_phi,
                        r_gru: s.r_gru,
                        r_plain: s.r_plain,
                    });
                }
            }
        }
    }
    rep.passed = rep.failures == 0 && rep.counterexamples >= 1;
    Ok((rep, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stage};

    #[test]
    fn eigen_examples() {
        assert_eq!(smoothness_constants(&Matrix::diag(&[1.0, 4.0])).unwrap(), (4.0, 1.0));
        assert_eq!(smoothness_constants(&Matrix::identity(3)).unwrap(), (1.0, 1.0));
        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let (l, e) = smoothness_constants(&m).unwrap();
        assert!((l - 3.0).abs() < 1e-12 && (e - 1.0).abs() < 1e-12);
        let asym = Matrix::from_rows(&[&[1.0, 2.0], &[0.0, 1.0]]).unwrap();
        assert!(smoothness_constants(&asym).is_err());
    }

    #[test]
    fn q_curvature_examples() {
        assert_eq!(q_curvature(&Matrix::identity(2), &[1.0, 1.0], 0.3), 1.0);
        assert_eq!(q_curvature(&Matrix::zeros(2), &[1.0, 1.0], 0.3), 0.0);
        assert_eq!(q_curvature(&Matrix::diag(&[1.0, 4.0]), &[1.0, 1.0], 1.0), 2.5);
        let b = Matrix::diag(&[1.0, 4.0]);
        let s = q_curvature_simpson(|_| b.clone(), &[0.3, -0.2], &[1.0, 1.0], 0.7);
        assert!((s - 2.5).abs() < 1e-10);
    }

    #[test]
    fn random_spd_spectrum() {
        let mut rng = stream(3, Stage::Theory);
        for n in 2..=6 {
            let m = random_spd(n, 1e6, &mut rng);
            let (l, e) = smoothness_constants(&m).unwrap();
            assert!(l / e <= 1e6 * (1.0 + 1e-6) && e > 0.0);
        }
    }

    #[test]
    fn orthogonal_structure_never_rectifies() {
        let pair = QuadraticPair::new(Matrix::diag(&[1.0, 0.0]), vec![1.0, 0.0], Matrix::diag(&[0.0, 1.0]), vec![0.0, 1.0]).unwrap();
        let rep = verify_theorem1_from(&pair, 0.5, 5, vec![3.0, -2.0]);
        assert!(rep.passed);
        assert_eq!(rep.rectified_steps, 0);
        assert!(rep.max_delta.unwrap() < 0.0);
    }

    #[test]
    fn antiparallel_is_degenerate() {
        let pair = QuadraticPair::new(Matrix::identity(2), vec![1.0, 2.0], Matrix::identity(2), vec![-1.0, -2.0]).unwrap();
        let rep = verify_theorem1_from(&pair, 0.5, 3, vec![0.0, 0.0]);
        assert!(rep.passed);
        assert_eq!(rep.degenerate_steps, 3);
        assert_eq!(rep.max_delta, Some(0.0));
    }

    #[test]
    fn scaled_identity_always_retains() {
        let mut rng = stream(9, Stage::Theory);
        let mut pair = random_pair(4, 10.0, &mut rng).unwrap();
        pair = QuadraticPair::new(pair.a_mat.clone(), pair.a.clone(), Matrix::identity(4).scaled(3.0), pair.b.clone()).unwrap();
        let rep = verify_theorem2(&pair, 1.0 / 3.0, default_sampler, 200, &mut rng).unwrap();
        assert_eq!(rep.conditions_satisfied, 200);
        assert!(rep.passed);
    }

    #[test]
    fn parallel_gradient_is_identity() {
        let pair = QuadraticPair::new(Matrix::identity(2), vec![0.0; 2], Matrix::diag(&[1.0, 3.0]), vec![0.0; 2]).unwrap();
        let theta = [1.0, 1.0];
        let g_u = pair.retain_grad(&theta);
        let s = retention_sample(&pair, 0.5, &theta, &g_u);
        assert!(s.condition_a);
        assert_eq!(s.r_gru, s.r_plain);
    }
}
