//! Central finite differences, the independent oracle for every analytic gradient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vector::{Grad, Params};

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for each coordinate.
pub fn finite_diff_grad<T, F>(loss: F, theta: &Params<T>, h: T) -> Result<Grad<T>>
where
    T: Scalar,
    F: Fn(&Params<T>) -> Result<T>,
{
    if !(h > T::zero()) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let two_h = h + h;
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let up = loss(&theta.perturbed(i, h))?;
        let down = loss(&theta.perturbed(i, -h))?;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!("loss is not finite when perturbing coordinate {i}")));
        }
        out.push((up - down) / two_h);
    }
    Grad::new(theta.layout().clone(), out)
}

/// `‖a - b‖ / max(‖b‖, floor)`: the relative L2 error used by gradient checks.
pub fn relative_l2_error<T: Scalar>(a: &Grad<T>, b: &Grad<T>, floor: T) -> T {
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt();
    diff / b.norm().max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let th = Params::from_vec(vec![1.0f64, 2.0]);
        let g = finite_diff_grad(|p| Ok(0.5 * p.as_slice().iter().map(|x| x * x).sum::<f64>()), &th, 1e-5).unwrap();
        assert!((g.as_slice()[0] - 1.0).abs() < 1e-8);
        assert!((g.as_slice()[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn cubic_truncation_term() {
        // ((1+h)^3 - (1-h)^3) / 2h = 3 + h^2
        let th = Params::from_vec(vec![1.0f64]);
        let g = finite_diff_grad(|p| Ok(p.as_slice()[0].powi(3)), &th, 1e-3).unwrap();
        assert!((g.as_slice()[0] - 3.000001).abs() < 1e-9);
    }

    #[test]
    fn constant_loss_and_errors() {
        let th = Params::from_vec(vec![0.3f64, -1.0, 4.0]);
        let g = finite_diff_grad(|_| Ok(7.0), &th, 1e-4).unwrap();
        assert!(g.as_slice().iter().all(|&x| x == 0.0));
        assert!(finite_diff_grad(|_| Ok(1.0), &th, 0.0).is_err());
        assert!(matches!(
            finite_diff_grad(|p| Ok(if p.as_slice()[0] > 0.3 { f64::INFINITY } else { 0.0 }), &th, 1e-4),
            Err(Error::Numeric { .. })
        ));
    }
}
