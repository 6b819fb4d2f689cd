use proptest::prelude::*;
use proptest::sample::subsequence;

use pfml_core::functionals::{channel_functionals, compute_functionals, FunctionalId, FunctionalOptions, FunctionalSet};
use pfml_core::nn::{LossKind, Model, ModelConfig};
use pfml_core::pretrain::{masked_prediction_loss, PretrainConfig};
use pfml_core::signal::{frame_signal, FrameConfig, Signal};
use pfml_core::tensor::Tensor;

const ALL: [FunctionalId; 11] = [
    FunctionalId::Mean,
    FunctionalId::Variance,
    FunctionalId::Skewness,
    FunctionalId::Kurtosis,
    FunctionalId::Min,
    FunctionalId::Max,
    FunctionalId::Zcr,
    FunctionalId::AcfMean,
    FunctionalId::AcfVariance,
    FunctionalId::AcfSkewness,
    FunctionalId::AcfKurtosis,
];

fn frame() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-10.0f64..10.0, 2..200),
        prop::collection::vec((-3i32..=3).prop_map(f64::from), 2..200),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn functional_ranges(x in frame(), lag0 in any::<bool>()) {
        let f = channel_functionals(&x, &FunctionalSet::full(), FunctionalOptions { include_lag0: lag0 }).unwrap();
        let [mean, var, skew, kurt, lo, hi, zcr] = [f[0], f[1], f[2], f[3], f[4], f[5], f[6]];
        prop_assert!((0.0..=2.0).contains(&zcr));
        prop_assert!(var >= 0.0);
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
        prop_assert!(lo - slack <= mean && mean <= hi + slack);
        if var > 1e-9 {
            prop_assert!(kurt >= skew * skew + 1.0 - 1e-9, "kurtosis {} skewness {}", kurt, skew);
        }
        prop_assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn subset_equals_full_computation(x in frame(), ids in subsequence(ALL.to_vec(), 1..=11), lag0 in any::<bool>()) {
        let opts = FunctionalOptions { include_lag0: lag0 };
        let full = channel_functionals(&x, &FunctionalSet::full(), opts).unwrap();
        let set = FunctionalSet::new(ids.clone()).unwrap();
        let part = channel_functionals(&x, &set, opts).unwrap();
        for (id, v) in ids.iter().zip(&part) {
            let at = FunctionalSet::full().position(*id).unwrap();
            prop_assert_eq!(v.to_bits(), full[at].to_bits());
        }
    }

    // independently drawn frames; a frame and its time reversal share all
    // eleven functionals, so distinctness alone is not enough
    #[test]
    fn targets_vary_across_independent_frames(frames in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 16), 2..8)) {
        prop_assume!(frames.iter().all(|f| f.iter().any(|&v| v != f[0])));
        let set = FunctionalSet::full();
        let rows: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| compute_functionals(f, 1, &set, FunctionalOptions::default()).unwrap().into_values())
            .collect();
        let varies = (0..set.len()).any(|j| rows.iter().any(|r| r[j] != rows[0][j]));
        prop_assert!(varies);
    }

    #[test]
    fn masked_loss_is_mean_over_masked_entries(
        rows in 1usize..12,
        cols in 1usize..5,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.random_bool(0.5)).collect();
        mask[0] = true;
        let pred = Tensor::new(vec![rows, cols], p.clone()).unwrap();
        let targ = Tensor::new(vec![rows, cols], t.clone()).unwrap();
        for (kind, f) in [(LossKind::Mse, (|d: f64| d * d) as fn(f64) -> f64), (LossKind::L1, f64::abs)] {
            let mut sum = 0.0;
            let mut n = 0.0;
            for r in (0..rows).filter(|&r| mask[r]) {
                for c in 0..cols {
                    sum += f(p[r * cols + c] - t[r * cols + c]);
                    n += 1.0;
                }
            }
            let got = masked_prediction_loss(&pred, &targ, &mask, kind).unwrap();
            prop_assert!((got - sum / n).abs() <= 1e-12 * (sum / n).max(1.0));
        }
    }

    #[test]
    fn config_round_trips_to_canonical_form(seed in any::<u64>(), p_m in 0.0f64..1.0, l_m in 1usize..20, lr in 1e-6f64..1e-1) {
        let cfg: PretrainConfig = serde_json::from_value(serde_json::json!({
            "epochs": 3, "batch_size": 4, "lr": lr, "seed": seed,
            "mask": {"p_m": p_m, "l_m": l_m},
            "model": ModelConfig::tiny(1, 32, 8).unwrap(),
        })).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PretrainConfig = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.canonical().unwrap(), cfg.canonical().unwrap());
        prop_assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_without_dropout_is_pure(seed in any::<u64>(), frames in 1usize..6) {
        let model = Model::new(ModelConfig::tiny(2, 32, 8).unwrap(), seed).unwrap();
        let data: Vec<Vec<f64>> = (0..2)
            .map(|c| (0..32 * frames).map(|i| ((i * (c + 3)) as f64 * 0.37 + seed as f64).sin()).collect())
            .collect();
        let seq = frame_signal(&Signal::from_channels(data, 100.0).unwrap(), FrameConfig::new(32, 32).unwrap()).unwrap();
        let a = model.embed(&seq).unwrap();
        let b = model.embed(&seq).unwrap();
        prop_assert_eq!(a.shape(), &[frames, model.dim()][..]);
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
