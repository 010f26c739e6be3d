use mhtts_core::autodiff::{AdamConfig, Tensor};
use mhtts_core::bench::fit_loglog_slope;
use mhtts_core::container;
use mhtts_core::corpus::{
    aligned_durations, cer, corrupt, duration_rule, edit_distance, render_utterance, rule_durations,
    CorruptionSpec, OracleDecoder, Token,
};
use mhtts_core::model::{length_regulate, HiddenSequence, HiddenStage};
use proptest::prelude::*;

fn seq(v: Token, max: usize) -> impl Strategy<Value = Vec<Token>> {
    prop::collection::vec(0..v, 0..max)
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in seq(6, 12), b in seq(6, 12), c in seq(6, 12)) {
        let ab = edit_distance(&a, &b);
        prop_assert_eq!(ab, edit_distance(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(ab <= a.len().max(b.len()));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
        prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
    }

    #[test]
    fn cer_of_identity_is_zero(a in prop::collection::vec(0..40u32, 1..30)) {
        prop_assert_eq!(cer(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(cer(&a, &[]).unwrap(), 1.0);
    }

    #[test]
    fn render_decode_round_trip(a in prop::collection::vec(0..40u32, 1..60), speaker in 0u32..16) {
        let frames = render_utterance(&a, speaker, 16).unwrap();
        prop_assert_eq!(frames.rows(), rule_durations(&a, speaker).iter().sum::<usize>());
        prop_assert_eq!(OracleDecoder::new(40, 16).decode(&frames, speaker).unwrap(), a);
    }

    #[test]
    fn corruption_is_reproducible_and_bounded(a in seq(40, 40), p in 0.0f64..=1.0, seed in any::<u64>()) {
        let spec = CorruptionSpec::new(p, seed);
        let x = corrupt(&a, &spec, 40).unwrap();
        prop_assert_eq!(&x, &corrupt(&a, &spec, 40).unwrap());
        prop_assert!(x.len() <= 2 * a.len());
        prop_assert!(x.iter().all(|&t| t < 40));
        prop_assert!(edit_distance(&a, &x) <= a.len());
        prop_assert_eq!(corrupt(&a, &CorruptionSpec::new(0.0, seed), 40).unwrap(), a);
    }

    #[test]
    fn aligned_durations_tile_reference_frames(
        a in prop::collection::vec(0..40u32, 1..30),
        p in 0.0f64..0.8,
        seed in any::<u64>(),
        speaker in 0u32..4,
    ) {
        let t = corrupt(&a, &CorruptionSpec::new(p, seed), 40).unwrap();
        let d = aligned_durations(&a, &t, speaker);
        prop_assert_eq!(d.len(), t.len());
        if !t.is_empty() {
            let frames: usize = a.iter().map(|&k| duration_rule(speaker, k)).sum();
            prop_assert_eq!(d.iter().sum::<usize>(), frames);
        }
        prop_assert_eq!(aligned_durations(&a, &a, speaker), rule_durations(&a, speaker));
    }

    #[test]
    fn regulator_length_is_duration_sum(durs in prop::collection::vec(0usize..5, 1..12)) {
        let n = durs.len();
        let values = Tensor::new(vec![n, 3], (0..3 * n).map(|i| i as f64).collect()).unwrap();
        let h = HiddenSequence { values, stage: HiddenStage::Text };
        let f = length_regulate(&h, &durs).unwrap();
        prop_assert_eq!(f.values.rows(), durs.iter().sum::<usize>());
    }

    #[test]
    fn container_round_trips_at_f32(data in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let t = Tensor::vector(data.clone());
        let bytes = container::encode(&serde_json::json!({"k": 1}), &[("t".to_string(), &t)]);
        let back = container::decode(&bytes).unwrap();
        let got = back.get("t").unwrap();
        for (a, b) in got.data().iter().zip(&data) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
        prop_assert!(container::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn slope_recovers_power_law(k in 0.1f64..3.0, c in 1e-6f64..10.0) {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&l: &f64| (l, c * l.powf(k))).collect();
        prop_assert!((fit_loglog_slope(&pts).unwrap() - k).abs() < 1e-9);
    }

    #[test]
    fn learning_rate_decays_linearly(base in 1e-5f64..1.0, total in 1u64..10_000, t in 0u64..20_000) {
        let c = AdamConfig::new(base, total);
        let lr = c.learning_rate(t);
        prop_assert!(lr >= 0.0 && lr <= base);
        prop_assert!(c.learning_rate(t + 1) <= lr);
        if t >= total {
            prop_assert_eq!(lr, 0.0);
        }
    }
}
