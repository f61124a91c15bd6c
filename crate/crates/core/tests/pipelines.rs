use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unlearn_core::gru::{run_unlearn, GruConfig};
use unlearn_core::losses::{LossKind, LossSpec};
use unlearn_core::metrics::{fq_proxy, read_trajectory_csv, write_trajectory_csv};
use unlearn_core::model::{grad_nll, Model, ModelKind, TokenSequence};
use unlearn_core::tru::*;
use unlearn_core::vector::Grad;

fn data(rng: &mut ChaCha8Rng, n: usize, vocab: u32) -> Vec<TokenSequence> {
    (0..n)
        .map(|_| TokenSequence::new((0..rng.random_range(2..=6)).map(|_| rng.random_range(0..vocab)).collect()).unwrap())
        .collect()
}

fn setup(seed: u64) -> (Model<f64>, Vec<TokenSequence>, Vec<TokenSequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Model::random(ModelKind::TabularBigram, 5, 0.5, &mut rng).unwrap();
    (m, data(&mut rng, 9, 5), data(&mut rng, 30, 5))
}

fn cfg(stg: f64) -> TruConfig {
    TruConfig { k_subsets: 2, ft_steps: 3, ft_lr: 0.5, stg, constraint_sign: ConstraintSign::GruConsistent, seed: 4 }
}

#[test]
fn tru_matches_hand_composed_pipeline() {
    let (m, du, _) = setup(1);
    let c = cfg(0.7);
    let (theta, log) = tru_unlearn(&m, &du, &c).unwrap();
    let parts = partition(du.len(), 2, c.seed);
    let mut sum = Grad::zeros(m.params().layout().clone());
    for (k, part) in parts.iter().enumerate() {
        let sub: Vec<_> = part.iter().map(|&i| du[i].clone()).collect();
        let comp: Vec<_> = (0..du.len()).filter(|i| !part.contains(i)).map(|i| du[i].clone()).collect();
        let tv = TaskVector {
            delta: compute_task_vector(&m, &sub, 3, 0.5).unwrap(),
            subset_id: k,
            ref_grad: reference_grad(&m, &comp).unwrap(),
            rectified: false,
            normalized: false,
        };
        let tv = normalize_task_vector(&rectify_task_vector(&tv, ConstraintSign::GruConsistent).unwrap()).unwrap();
        sum = sum.add_scaled(1.0, &tv.delta).unwrap();
    }
    let want = m.params().displaced(-0.7 / 2.0, &sum).unwrap();
    assert_eq!(theta, want);
    assert_eq!(log.subsets.len(), 2);
    let (again, _) = tru_unlearn(&m, &du, &c).unwrap();
    assert_eq!(again, theta);
}

#[test]
fn tru_zero_strength_is_identity() {
    let (m, du, _) = setup(2);
    let (theta, _) = tru_unlearn(&m, &du, &cfg(0.0)).unwrap();
    assert_eq!(&theta, m.params());
}

#[test]
fn task_vector_raises_subset_likelihood() {
    let (m, du, _) = setup(3);
    let d = compute_task_vector(&m, &du[..3], 1, 0.01).unwrap();
    let after = m.with_params(m.params().displaced(1.0, &d).unwrap()).unwrap();
    assert!(after.mean_nll(&du[..3]).unwrap() < m.mean_nll(&du[..3]).unwrap());
}

#[test]
fn rectified_task_vectors_retain_to_first_order() {
    for seed in 0..20 {
        let (m, du, _) = setup(seed);
        let parts = partition(du.len(), 3, seed);
        for part in &parts {
            let sub: Vec<_> = part.iter().map(|&i| du[i].clone()).collect();
            let comp: Vec<_> = (0..du.len()).filter(|i| !part.contains(i)).map(|i| du[i].clone()).collect();
            let r = reference_grad(&m, &comp).unwrap();
            let tv = TaskVector { delta: compute_task_vector(&m, &sub, 2, 0.3).unwrap(), subset_id: 0, ref_grad: r.clone(), rectified: false, normalized: false };
            let out = rectify_task_vector(&tv, ConstraintSign::GruConsistent).unwrap();
            // d/dε R(θ - ε T̃) = -⟨∇R, T̃⟩
            assert!(-out.delta.dot(&grad_nll(&m, &comp).unwrap()) <= 1e-9);
            assert!(out.delta.norm() <= tv.delta.norm() * (1.0 + 1e-15));
        }
    }
}

#[test]
fn paired_runs_share_batches_and_rectified_cos_is_nonnegative() {
    let (m, du, dr) = setup(5);
    for kind in [LossKind::Ga, LossKind::Npo, LossKind::NpoGd, LossKind::NpoKl, LossKind::Gd] {
        let c = GruConfig::preset(LossSpec::new(kind), 0.5, 25, 9);
        let (_, on) = run_unlearn(&m, &c, &du, &dr, true).unwrap();
        let (_, off) = run_unlearn(&m, &c, &du, &dr, false).unwrap();
        assert_eq!(on.batches.len(), 25);
        let unresampled = on.records.iter().zip(&on.batches).zip(&off.batches).filter(|((r, _), _)| !r.resampled);
        for ((_, a), b) in unresampled {
            assert_eq!(a, b);
        }
        assert!(on.records.iter().all(|r| r.cos_post.is_none_or(|c| c >= -1e-9)));
    }
}

#[test]
fn zero_steps_and_determinism() {
    let (m, du, dr) = setup(6);
    let c = GruConfig::preset(LossSpec::new(LossKind::Ga), 0.5, 0, 1);
    let (theta, log) = run_unlearn(&m, &c, &du, &dr, true).unwrap();
    assert_eq!(&theta, m.params());
    assert!(log.records.is_empty());

    let c = GruConfig::preset(LossSpec::new(LossKind::Npo), 0.5, 15, 1);
    let (a, la) = run_unlearn(&m, &c, &du, &dr, true).unwrap();
    let (b, lb) = run_unlearn(&m, &c, &du, &dr, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_trajectory_csv(&la.records, &p).unwrap();
    assert_eq!(read_trajectory_csv(&p).unwrap(), la.records);
    assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 16);
}

#[test]
fn fq_of_gold_against_itself_is_zero() {
    let (m, du, _) = setup(7);
    assert_eq!(fq_proxy(&m, &m, &du, false).unwrap(), 0.0);
}
