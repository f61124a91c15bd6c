use proptest::prelude::*;
use unlearn_core::calibration::{blend, calibrate_uwc};
use unlearn_core::gru::{clip, ema_update, rectify};
use unlearn_core::losses::{gd_loss, kl_regularizer, npo_loss};
use unlearn_core::model::{Model, ModelKind, TokenSequence};
use unlearn_core::optim::sgd_step;
use unlearn_core::rng::{stream, Stage};
use unlearn_core::tru::{normalize_task_vector, rectify_task_vector, ConstraintSign, TaskVector};
use unlearn_core::vector::{Grad, Params};

fn vecs(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n)))
}

fn seqs(vocab: u32) -> impl Strategy<Value = Vec<TokenSequence>> {
    prop::collection::vec(prop::collection::vec(0..vocab, 1..6), 1..5)
        .prop_map(|v| v.into_iter().map(|t| TokenSequence::new(t).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rectify_feasible_shrinking_pythagorean((u, r) in vecs(2..=8)) {
        let (gu, gr) = (Grad::from_vec(u), Grad::from_vec(r));
        let gt = rectify(&gu, &gr).unwrap();
        let tol = 1e-9 * gt.norm() * gr.norm();
        prop_assert!(gt.dot(&gr) >= -tol);
        prop_assert!(gt.norm() <= gu.norm() * (1.0 + 1e-15));
        let ip = gu.dot(&gr);
        if ip < 0.0 && gr.norm() >= 1e-15 {
            prop_assert!(gt.dot(&gr).abs() <= 1e-9 * gu.norm() * gr.norm());
            let lhs = gu.dot(&gu);
            let rhs = gt.dot(&gt) + ip * ip / gr.dot(&gr);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1e-300));
            prop_assert!(gt.norm() < gu.norm());
        } else {
            prop_assert_eq!(gt.as_slice(), gu.as_slice());
        }
        // idempotent up to rounding
        let again = rectify(&gt, &gr).unwrap();
        for (a, b) in again.as_slice().iter().zip(gt.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + gu.norm()));
        }
    }

    #[test]
    fn clip_bounds_norm((u, _) in vecs(1..=8), tau in 1e-3..5.0f64) {
        let g = Grad::from_vec(u);
        let c = clip(&g, tau).unwrap();
        prop_assert!(c.norm() <= tau * (1.0 + 1e-12) || c == g);
        prop_assert!(c.norm() <= g.norm() * (1.0 + 1e-15));
    }

    #[test]
    fn ema_is_convex_combination((a, b) in vecs(1..=6), gamma in 0.0..0.999f64) {
        let e = ema_update(&Grad::from_vec(a.clone()), &Grad::from_vec(b.clone()), gamma).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(e.as_slice()) {
            prop_assert!(*z >= x.min(*y) - 1e-12 && *z <= x.max(*y) + 1e-12);
        }
    }

    #[test]
    fn sgd_inverse_exact_on_dyadics(
        raw in prop::collection::vec((-1024i32..1024, -1024i32..1024), 1..8),
        shift in 0u32..6,
    ) {
        // values k/64 and a power-of-two lr keep every operation exact
        let theta = Params::from_vec(raw.iter().map(|p| f64::from(p.0) / 64.0).collect());
        let g = Grad::from_vec(raw.iter().map(|p| f64::from(p.1) / 64.0).collect());
        let lr = 0.5f64.powi(shift as i32);
        let there = sgd_step(&theta, &g, lr).unwrap();
        let back = there.displaced(lr, &g).unwrap();
        prop_assert_eq!(back, theta);
    }

    #[test]
    fn blend_is_linear((u, o) in vecs(1..=6), a1 in 0.0..=1.0f64, a2 in 0.0..=1.0f64) {
        let (pu, po) = (Params::from_vec(u), Params::from_vec(o));
        let b1 = blend(&pu, &po, a1).unwrap();
        let b2 = blend(&pu, &po, a2).unwrap();
        let mid = blend(&pu, &po, 0.5 * (a1 + a2)).unwrap();
        for ((x, y), m) in b1.as_slice().iter().zip(b2.as_slice()).zip(mid.as_slice()) {
            prop_assert!((0.5 * (x + y) - m).abs() <= 1e-15 * 10.0 * (1.0 + m.abs()));
        }
    }

    #[test]
    fn calibration_meets_target_within_eval_budget(slope in 0.2..5.0f64, target in 0.5..0.99f64) {
        // retention decreasing and linear in α with an arbitrary slope
        let f = |p: &Params<f64>| Ok((1.0 - slope * p.as_slice()[0] / 5.0).max(0.0) + 0.01);
        let tol = 0.01;
        let r = calibrate_uwc(&Params::from_vec(vec![1.0]), &Params::from_vec(vec![0.0]), f, target, tol, 50).unwrap();
        let budget = (1.0f64 / tol).log2().ceil() as usize + 2;
        prop_assert!(r.evaluations <= budget, "{} evaluations", r.evaluations);
        if r.alpha < 1.0 {
            prop_assert!(r.converged);
            prop_assert!(r.achieved_retention_fraction >= target && r.achieved_retention_fraction - target <= tol);
        }
    }

    #[test]
    fn tru_projection_properties((t, r) in vecs(2..=8)) {
        let tv = TaskVector { delta: Grad::from_vec(t), subset_id: 0, ref_grad: Grad::from_vec(r), rectified: false, normalized: false };
        for sign in [ConstraintSign::GruConsistent, ConstraintSign::Mirrored] {
            let out = rectify_task_vector(&tv, sign).unwrap();
            let ip = out.delta.dot(&out.ref_grad);
            let tol = 1e-9 * tv.delta.norm() * tv.ref_grad.norm();
            match sign {
                ConstraintSign::GruConsistent => prop_assert!(ip >= -tol),
                ConstraintSign::Mirrored => prop_assert!(ip <= tol),
            }
            prop_assert!(out.delta.norm() <= tv.delta.norm() * (1.0 + 1e-15));
            if out.delta.norm() > 1e-12 {
                let unit = normalize_task_vector(&out).unwrap();
                prop_assert!((unit.delta.norm() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn loss_identities(bu in seqs(4), br in seqs(4), seed in 0u64..1000, lam in 0.0..3.0f64) {
        let mut rng = stream(seed, Stage::Pretrain);
        let m = Model::<f64>::random(ModelKind::MlpLm { hidden_dim: 3 }, 4, 1.0, &mut rng).unwrap();
        let r = Model::<f64>::random(ModelKind::MlpLm { hidden_dim: 3 }, 4, 1.0, &mut rng).unwrap();
        prop_assert!(kl_regularizer(&m, &m, &br).unwrap().0.abs() <= 1e-12);
        let (v0, _) = gd_loss(&m, &bu, &br, 0.0).unwrap();
        let (v1, _) = gd_loss(&m, &bu, &br, 1.0).unwrap();
        let (vl, _) = gd_loss(&m, &bu, &br, lam).unwrap();
        prop_assert!((vl - (v0 + lam * (v1 - v0))).abs() <= 1e-10 * (1.0 + vl.abs()));
        let (npo, _) = npo_loss(&m, &r, &bu, 0.1, false).unwrap();
        prop_assert!(npo > 0.0 && npo.is_finite());
    }
}

#[test]
fn npo_monotone_in_log_ratio() {
    // raising the logit of the observed transitions raises log p(s; θ) and the loss
    let s = vec![TokenSequence::new(vec![1, 2]).unwrap()];
    let reference = Model::<f64>::zeros(ModelKind::TabularBigram, 3).unwrap();
    let mut last = 0.0;
    for k in 0..20 {
        let mut p = reference.params().clone().into_vec();
        p[3 * 3 + 1] = k as f64 * 0.5;
        let m = reference.with_params(Params::new(reference.params().layout().clone(), p).unwrap()).unwrap();
        let (v, _) = npo_loss(&m, &reference, &s, 0.1, false).unwrap();
        assert!(v > last);
        last = v;
    }
}
