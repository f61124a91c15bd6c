//! Post-hoc calibration: blend the unlearned and original parameters and search
//! for the largest blend weight that keeps a retention target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::Params;

/// Grid points used when the bisection sees a non-monotone response.
pub const FALLBACK_GRID: usize = 21;

/// `α·θ_u + (1-α)·θ_org`.
pub fn blend<T: Scalar>(theta_u: &Params<T>, theta_org: &Params<T>, alpha: T) -> Result<Params<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::usage(format!("blend weight {alpha} outside [0, 1]")));
    }
    theta_u.check_len(theta_org.len(), "blend")?;
    if alpha == T::zero() {
        return Ok(theta_org.clone());
    }
    if alpha == T::one() {
        return Ok(theta_u.clone());
    }
    let beta = T::one() - alpha;
    let values = theta_u
        .as_slice()
        .iter()
        .zip(theta_org.as_slice())
        .map(|(&u, &o)| alpha * u + beta * o)
        .collect();
    Params::new(theta_org.layout().clone(), values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult<T> {
    pub alpha: f64,
    pub achieved_retention_fraction: f64,
    pub target_fraction: f64,
    pub tol: f64,
    /// Bisection iterations (excluding the two endpoint evaluations).
    pub iterations: usize,
    /// Total calls to the retention function.
    pub evaluations: usize,
    pub converged: bool,
    pub non_monotone: bool,
    pub blended: Params<T>,
}

/// Serializable view of a [`CalibrationResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub alpha: f64,
    pub achieved_retention_fraction: f64,
    pub target_fraction: f64,
    pub tol: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub non_monotone: bool,
    pub retention_proxy: String,
    pub blended_norm: f64,
}

impl<T: Scalar> CalibrationResult<T> {
    pub fn summary(&self, retention_proxy: &str) -> CalibrationSummary {
        CalibrationSummary {
            alpha: self.alpha,
            achieved_retention_fraction: self.achieved_retention_fraction,
            target_fraction: self.target_fraction,
            tol: self.tol,
            iterations: self.iterations,
            evaluations: self.evaluations,
            converged: self.converged,
            non_monotone: self.non_monotone,
            retention_proxy: retention_proxy.to_string(),
            blended_norm: self.blended.norm().as_f64(),
        }
    }
}

/// Bisection on `α` for the largest blend whose retention is at least
/// `target_fraction · retain_eval(θ_org)`.
///
/// Stops as soon as the feasible end of the bracket is within `tol` of the
/// target fraction or after `max_iter` bisection steps. The bracket width is
/// not a stopping rule: a steep retention curve needs `α` far finer than `tol`. Retention values that break the expected
/// ordering along the search set `non_monotone` and trigger a coarse grid scan;
/// the larger feasible `α` of the two searches is returned.
pub fn calibrate_uwc<T, F>(
    theta_u: &Params<T>,
    theta_org: &Params<T>,
    mut retain_eval: F,
    target_fraction: f64,
    tol: f64,
    max_iter: usize,
) -> Result<CalibrationResult<T>>
where
    T: Scalar,
    F: FnMut(&Params<T>) -> Result<f64>,
{
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::usage(format!("target fraction {target_fraction} outside (0, 1]")));
    }
    if !(tol > 0.0) {
        return Err(Error::usage("calibration tolerance must be > 0"));
    }
    theta_u.check_len(theta_org.len(), "calibrate_uwc")?;
    let mut evaluations = 0;
    let mut eval = |alpha: f64, evaluations: &mut usize| -> Result<(Params<T>, f64)> {
        let p = blend(theta_u, theta_org, T::lit(alpha))?;
        *evaluations += 1;
        let r = retain_eval(&p)?;
        if !r.is_finite() {
            return Err(Error::numeric(format!("retention is non-finite at alpha = {alpha}")));
        }
        Ok((p, r))
    };

    let (p0, r0) = eval(0.0, &mut evaluations)?;
    if !(r0 > 0.0) {
        return Err(Error::usage(format!("retention of the original model must be > 0, got {r0}")));
    }
    let goal = target_fraction * r0;
    let done = |alpha: f64, r: f64, iterations, evaluations, converged, non_monotone, blended| CalibrationResult {
        alpha,
        achieved_retention_fraction: r / r0,
        target_fraction,
        tol,
        iterations,
        evaluations,
        converged,
        non_monotone,
        blended,
    };
    if theta_u == theta_org {
        return Ok(done(1.0, r0, 0, evaluations, true, false, theta_u.clone()));
    }
    let (p1, r1) = eval(1.0, &mut evaluations)?;
    if r1 >= goal {
        return Ok(done(1.0, r1, 0, evaluations, true, false, p1));
    }

    let (mut lo, mut r_lo, mut p_lo) = (0.0, r0, p0);
    let (mut hi, mut r_hi) = (1.0, r1);
    let mut non_monotone = false;
    // retention climbing back above an infeasible upper end means a larger
    // feasible α may hide above the bracket
    let mut recovers = false;
    let mut iterations = 0;
    while iterations < max_iter && hi - lo > f64::EPSILON && r_lo / r0 - target_fraction > tol {
        let mid = 0.5 * (lo + hi);
        let (pm, rm) = eval(mid, &mut evaluations)?;
        iterations += 1;
        if rm < r_hi {
            recovers = true;
        }
        non_monotone |= rm > r_lo || rm < r_hi;
        if rm >= goal {
            lo = mid;
            r_lo = rm;
            p_lo = pm;
        } else {
            hi = mid;
            r_hi = rm;
        }
    }

    if recovers {
        for i in (1..FALLBACK_GRID - 1).rev() {
            let a = i as f64 / (FALLBACK_GRID - 1) as f64;
            if a <= lo {
                break;
            }
            let (pa, ra) = eval(a, &mut evaluations)?;
            if ra >= goal {
                lo = a;
                r_lo = ra;
                p_lo = pa;
                break;
            }
        }
    }
    let converged = r_lo >= goal && r_lo / r0 - target_fraction <= tol;
    Ok(done(lo, r_lo, iterations, evaluations, converged, non_monotone, p_lo))
}
