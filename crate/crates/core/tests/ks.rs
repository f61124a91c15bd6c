use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::metrics::{ks_exact_p_value, ks_statistic, ks_two_sample, ks_two_sample_exact};

/// Brute force: evaluate both empirical CDFs at every pooled point.
fn brute_force(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count();
    a.iter()
        .chain(b)
        .map(|&x| {
            let (i, j) = (cdf(a, x), cdf(b, x));
            (i * b.len()).abs_diff(j * a.len()) as f64 / (a.len() * b.len()) as f64
        })
        .fold(0.0, f64::max)
}

fn sample(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(5..=40);
    // coarse grid so ties are common
    (0..n).map(|_| (rng.random_range(0..30) as f64) * 0.25).collect()
}

#[test]
fn statistic_equals_brute_force_on_200_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (a, b) = (sample(&mut rng), sample(&mut rng));
        assert_eq!(ks_statistic(&a, &b).unwrap(), brute_force(&a, &b));
        assert_eq!(ks_two_sample(&a, &b).unwrap(), ks_two_sample(&b, &a).unwrap());
    }
}

#[test]
fn spec_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.5, 2.5, 3.5, 4.5, 5.5];
    let r = ks_two_sample(&a, &b).unwrap();
    assert!((r.statistic - 0.2).abs() < 1e-15);
    // Kolmogorov series at λ = (√2.5 + 0.12 + 0.11/√2.5)·0.2, summed independently
    assert!((r.p_value - 0.9996217060535831).abs() < 1e-6, "{}", r.p_value);

    let same = ks_two_sample(&a, &a).unwrap();
    assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
    let r = ks_two_sample(&[0.0; 5], &[1.0; 5]).unwrap();
    assert_eq!(r.statistic, 1.0);
    assert!(ks_two_sample(&[0.0; 4], &[1.0; 5]).is_err());
}

#[test]
fn exact_p_value_small_cases() {
    // disjoint samples of 5: only the two fully separated orderings reach D = 1
    assert!((ks_exact_p_value(5, 5, 1.0).unwrap() - 2.0 / 252.0).abs() < 1e-15);
    assert_eq!(ks_exact_p_value(5, 5, 0.0).unwrap(), 1.0);
    let r = ks_two_sample_exact(&[0.0; 5], &[1.0; 5]).unwrap();
    assert!((r.p_value - 2.0 / 252.0).abs() < 1e-15);
    assert!(ks_exact_p_value(11, 5, 0.5).is_err());
}
