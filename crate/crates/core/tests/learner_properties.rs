use auctionsim::learners::{exp3ix_distribution, hedge_distribution};
use auctionsim::{exp3ix_tuning, LearnerSpec, LearnerState};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0e4..1.0e4f64, len)
}

proptest! {
    #[test]
    fn softmax_is_a_positive_distribution(w in finite_vec(1..50), eta in 0.001..10.0f64) {
        for p in [hedge_distribution(&w, eta), exp3ix_distribution(&w, eta)] {
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            // The arg-max entry can never underflow.
            prop_assert!(p.iter().cloned().fold(0.0, f64::max) >= 1.0 / p.len() as f64);
        }
    }

    #[test]
    fn softmax_ignores_exact_shifts(
        w in proptest::collection::vec(-1000i32..1000, 1..30),
        shift in -1000i32..1000,
        eta in prop_oneof![Just(0.02), Just(0.5), Just(1.0)],
    ) {
        // Integer-valued weights make the shift exact in floating point,
        // so the distributions must agree bit for bit.
        let a: Vec<f64> = w.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = w.iter().map(|&x| (x + shift) as f64).collect();
        prop_assert_eq!(hedge_distribution(&a, eta), hedge_distribution(&b, eta));
        prop_assert_eq!(exp3ix_distribution(&a, eta), exp3ix_distribution(&b, eta));
    }

    #[test]
    fn softmax_shift_invariant_to_rounding(w in finite_vec(1..30), shift in -1.0e3..1.0e3f64) {
        let shifted: Vec<f64> = w.iter().map(|x| x + shift).collect();
        let (p, q) = (hedge_distribution(&w, 1.0), hedge_distribution(&shifted, 1.0));
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn updates_touch_only_the_realized_type(
        rewards in proptest::collection::vec(0.0..=1.0f64, 6),
        ty in 0usize..3,
        bidder in 0usize..2,
    ) {
        let mut state = LearnerState::with_dims(LearnerSpec::Hedge { eta: 0.02, raw_rewards: false }, 6, &[3, 3]);
        let before = state.clone();
        state.hedge_update(bidder, ty, &rewards).unwrap();
        for b in 0..2 {
            for t in 0..3 {
                if (b, t) == (bidder, ty) {
                    prop_assert_eq!(state.table(b, t), rewards.as_slice());
                } else {
                    prop_assert_eq!(state.table(b, t), before.table(b, t));
                }
            }
        }
    }

    #[test]
    fn exp3ix_losses_never_decrease(
        steps in proptest::collection::vec((0usize..2, 0usize..5, 0.0..=1.0f64), 1..200),
    ) {
        let spec = LearnerSpec::Exp3Ix { eta: 0.05, gamma: 0.01 };
        let mut state = LearnerState::with_dims(spec, 5, &[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scratch = vec![0.0; 5];
        for (ty, _, r) in steps {
            let before: Vec<Vec<f64>> = (0..2).map(|t| state.table(0, t).to_vec()).collect();
            let draw = state.sample(0, ty, &mut rng, &mut scratch);
            state.exp3ix_update(0, ty, draw.action, r, draw.prob).unwrap();
            for t in 0..2 {
                for (a, (&new, &old)) in state.table(0, t).iter().zip(&before[t]).enumerate() {
                    prop_assert!(new >= old);
                    if t != ty || a != draw.action {
                        prop_assert_eq!(new.to_bits(), old.to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn exp3ix_increment_example() {
    let mut state = LearnerState::with_dims(LearnerSpec::Exp3Ix { eta: 1.0, gamma: 0.1 }, 3, &[1]);
    state.exp3ix_update(0, 0, 1, 0.2, 0.5).unwrap();
    assert!((state.table(0, 0)[1] - 0.8 / 0.6).abs() < 1e-15);
    assert_eq!(state.table(0, 0)[0], 0.0);
    state.exp3ix_update(0, 0, 2, 1.0, 0.5).unwrap();
    assert_eq!(state.table(0, 0)[2], 0.0);
    assert!(state.exp3ix_update(0, 0, 2, 0.5, 0.0).is_err());
}

#[test]
fn softmax_examples() {
    let eta = 0.02;
    let p = hedge_distribution(&[eta * 2f64.ln(), 0.0], eta);
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    let p = exp3ix_distribution(&[0.0, 2f64.ln() / eta], eta);
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(hedge_distribution(&[4.0; 4], eta), vec![0.25; 4]);
    assert_eq!(exp3ix_distribution(&[4.0; 4], eta), vec![0.25; 4]);
}

#[test]
fn fresh_learner_samples_uniformly() {
    let state = LearnerState::with_dims(LearnerSpec::Hedge { eta: 0.02, raw_rewards: false }, 4, &[1]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut scratch = vec![0.0; 4];
    let mut counts = [0u32; 4];
    for _ in 0..40_000 {
        let d = state.sample(0, 0, &mut rng, &mut scratch);
        assert_eq!(d.prob, 0.25);
        counts[d.action] += 1;
    }
    for c in counts {
        assert!((c as f64 / 40_000.0 - 0.25).abs() < 0.01);
    }
}

#[test]
fn exp3ix_tuning_matches_reference_values() {
    // Reference values evaluated at 40 significant digits.
    let cases: [(usize, usize, f64); 4] = [
        (21, 1_000_000, 0.000_542_572_571_697_035_606_046_729_5),
        (21, 5_000_000, 0.000_242_645_830_608_290_009_079_657_1),
        (2, 2, 0.741_151_903_683_755_537_918_453_5),
        (84, 5_000_000, 0.000_145_449_242_602_921_145_942_614_8),
    ];
    for (k, t, gamma_ref) in cases {
        let (eta, gamma) = exp3ix_tuning(k, t).unwrap();
        assert!(((gamma - gamma_ref) / gamma_ref).abs() < 1e-12, "k={k} t={t}");
        assert_eq!(eta / gamma, 2.0);
    }
    assert!(exp3ix_tuning(1, 10).is_err());
    assert!(exp3ix_tuning(2, 0).is_err());
}
