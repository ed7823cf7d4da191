use nalgebra::{DVector, Vector6};
use olmpc_core::features::{sample_features, ResidualInput, ResidualModel};
use olmpc_core::learner::{estimation_regret, loss, ogd_step, project_block, EtaSchedule, LearnerConfig};
use olmpc_core::rigid_body::ResidualWrench;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng, m: usize, d: usize, scale: f64) -> ResidualModel {
    let mut model = ResidualModel::new(m, d, 0.7, rng.random(), None).unwrap();
    for a in model.alpha_mut() {
        *a = Vector6::from_fn(|_, _| rng.random_range(-scale..scale));
    }
    model
}

fn random_input(rng: &mut ChaCha8Rng, d: usize) -> ResidualInput {
    ResidualInput(DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)))
}

fn random_wrench(rng: &mut ChaCha8Rng) -> ResidualWrench {
    ResidualWrench::from_vector(&Vector6::from_fn(|_, _| rng.random_range(-40.0..40.0)))
}

#[test]
fn prediction_matches_explicit_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let m = rng.random_range(1..80);
        let d = rng.random_range(1..20);
        let model = random_model(&mut rng, m, d, 10.0);
        let z = random_input(&mut rng, d);
        let mut sum = [0.0; 6];
        for (s, a) in model.samples().iter().zip(model.alpha()) {
            let mut arg = s.b;
            for k in 0..d {
                arg += s.w[k] * z.0[k];
            }
            for c in 0..6 {
                sum[c] += arg.cos() * a[c];
            }
        }
        let got = model.predict_vector(&z);
        for c in 0..6 {
            assert!((got[c] - sum[c] / m as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_draws_same_features() {
    let a = sample_features(40, 15, 0.5, 9).unwrap();
    let b = sample_features(40, 15, 0.5, 9).unwrap();
    let c = sample_features(40, 15, 0.5, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|s| (0.0..std::f64::consts::TAU).contains(&s.b)));
    assert!(sample_features(0, 15, 0.5, 9).is_err());
}

#[test]
fn prediction_is_linear_in_coefficients_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let m1 = random_model(&mut rng, 25, 6, 10.0);
        let mut m2 = m1.clone();
        let mut sum = m1.clone();
        for ((a2, s), a1) in m2.alpha_mut().iter_mut().zip(sum.alpha_mut()).zip(m1.alpha()) {
            *a2 = Vector6::from_fn(|_, _| rng.random_range(-10.0..10.0));
            *s = a1 + *a2;
        }
        let z = random_input(&mut rng, 6);
        let lhs = sum.predict_vector(&z);
        let rhs = m1.predict_vector(&z) + m2.predict_vector(&z);
        assert!((lhs - rhs).amax() < 1e-12);
        let bound: Vector6<f64> = m1.alpha().iter().fold(Vector6::zeros(), |acc, a| acc + a.abs()) / 25.0;
        let pred = m1.predict_vector(&z);
        for c in 0..6 {
            assert!(pred[c].abs() <= bound[c] + 1e-12);
        }
    }
}

#[test]
fn prediction_is_lipschitz_in_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let model = random_model(&mut rng, 20, 5, 10.0);
        let lipschitz: f64 = model
            .samples()
            .iter()
            .zip(model.alpha())
            .map(|(s, a)| a.norm() * s.w.norm())
            .sum::<f64>()
            / 20.0;
        let z1 = random_input(&mut rng, 5);
        let z2 = random_input(&mut rng, 5);
        let gap = (model.predict_vector(&z1) - model.predict_vector(&z2)).norm();
        assert!(gap <= lipschitz * (&z1.0 - &z2.0).norm() + 1e-12);
    }
}

#[test]
fn repeated_steps_fit_a_single_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let m = 30;
    let mut model = ResidualModel::new(m, 8, 0.5, 4, None).unwrap();
    let z = random_input(&mut rng, 8);
    let target = random_wrench(&mut rng);
    // Each step scales the error by 1 − 2η‖φ‖²/M², so η = M²/(2‖φ‖²) would
    // land in one step; a quarter of that contracts by one half.
    let phi_sq = model.features(&z).norm_squared();
    let cfg = LearnerConfig::new((m * m) as f64 / (8.0 * phi_sq)).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..60 {
        let before = ogd_step(&mut model, &z, &target, &cfg);
        assert!(before <= last);
        last = before;
    }
    assert!(loss(&model, &z, &target) < 1e-12 * target.to_vector().norm_squared());
}

#[test]
fn zero_coefficients_and_zero_target_stay_fixed() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut model = ResidualModel::new(20, 15, 0.5, 5, None).unwrap();
    let cfg = LearnerConfig::new(3.0).unwrap();
    for _ in 0..20 {
        let z = random_input(&mut rng, 15);
        assert_eq!(ogd_step(&mut model, &z, &ResidualWrench::zeros(), &cfg), 0.0);
    }
    assert!(model.alpha().iter().all(|a| *a == Vector6::zeros()));
}

#[test]
fn no_regret_when_starting_at_the_generating_coefficients() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let truth = random_model(&mut rng, 10, 4, 20.0);
    let stream: Vec<_> = (0..300)
        .map(|_| {
            let z = random_input(&mut rng, 4);
            let h = truth.predict(&z);
            (z, h)
        })
        .collect();
    let r = estimation_regret(&truth, &stream, EtaSchedule::Constant { eta: 5.0 }, None).unwrap();
    let energy: f64 = stream.iter().map(|(_, h)| h.to_vector().norm_squared()).sum();
    assert_eq!(r.online_loss, 0.0);
    // The comparator carries a tiny ridge bias, so it can only tie.
    assert!(
        r.regret <= 0.0 && r.regret.abs() < 1e-9 * energy,
        "{} vs {energy}",
        r.regret
    );
}

#[test]
fn single_sample_regret_is_the_initial_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..20 {
        let model = random_model(&mut rng, 8, 3, 5.0);
        let z = random_input(&mut rng, 3);
        let h = random_wrench(&mut rng);
        let initial = loss(&model, &z, &h);
        let r = estimation_regret(&model, &[(z, h)], EtaSchedule::InverseSqrtStep { scale: 1.0 }, None).unwrap();
        assert_eq!(r.online_loss, initial);
        // One sample is interpolated exactly up to the ridge term.
        assert!(r.comparator_loss < 1e-6 * initial, "{} vs {initial}", r.comparator_loss);
        assert!((r.regret - initial).abs() < 1e-6 * initial);
    }
}

#[test]
fn empty_stream_is_rejected() {
    let model = ResidualModel::new(4, 3, 1.0, 0, None).unwrap();
    assert!(estimation_regret(&model, &[], EtaSchedule::Constant { eta: 1.0 }, None).is_err());
}

#[test]
fn projection_keeps_every_block_in_the_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let mut model = ResidualModel::new(15, 6, 0.5, 6, None).unwrap();
    let cfg = LearnerConfig::new(500.0).unwrap().with_projection(2.5).unwrap();
    for _ in 0..100 {
        let z = random_input(&mut rng, 6);
        ogd_step(&mut model, &z, &random_wrench(&mut rng), &cfg);
        assert!(model.alpha().iter().all(|a| a.norm() <= 2.5 * (1.0 + 1e-12)));
    }
}

proptest! {
    #[test]
    fn projection_is_idempotent(a in prop::array::uniform6(-100.0..100.0f64), bound in 0.01..50.0f64) {
        let a = Vector6::from(a);
        let p = project_block(&a, bound);
        prop_assert!(p.norm() <= bound * (1.0 + 1e-12));
        prop_assert!((project_block(&p, bound) - p).amax() < 1e-12 * bound);
        if a.norm() <= bound {
            prop_assert_eq!(p, a);
        } else {
            // Radial: the projection is parallel to the input.
            prop_assert!((p.normalize() - a.normalize()).amax() < 1e-12);
        }
    }

    #[test]
    fn record_round_trip_preserves_predictions(seed in any::<u64>(), m in 1usize..40, d in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = random_model(&mut rng, m, d, 100.0);
        if seed % 2 == 0 {
            model.set_b_h(Some(75.0));
        }
        let back = ResidualModel::from_record(&model.to_record()).unwrap();
        prop_assert_eq!(&back, &model);
        let z = random_input(&mut rng, d);
        prop_assert_eq!(back.predict_vector(&z), model.predict_vector(&z));
    }
}

#[test]
fn malformed_records_are_rejected() {
    let model = ResidualModel::new(3, 2, 1.0, 0, None).unwrap();
    let text = model.to_record();
    assert!(ResidualModel::from_record("").is_err());
    assert!(ResidualModel::from_record("not a record").is_err());
    assert!(ResidualModel::from_record(&text[..text.len() / 2]).is_err());
}
