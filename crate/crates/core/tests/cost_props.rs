use proptest::prelude::*;
use stochpool::cost::{analytic_cost, analytic_cost_features, instrumented_macs};
use stochpool::{CompressionConfig, Encoder, EncoderConfig, Triplet};

fn total(enc: &EncoderConfig, t: Triplet, frames: usize) -> u64 {
    analytic_cost(&t.config(enc.depth).unwrap(), enc, frames).unwrap().macs.total()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn instrumented_matches_analytic(s_f in 1usize..=3, s_k in 1usize..=3, s_q in 1usize..=3, frames in 1usize..40) {
        let enc = Encoder::<f64>::from_preset("tiny", 1).unwrap();
        let cfg = CompressionConfig::fixed(s_f, s_k, s_q, 2).unwrap();
        prop_assert_eq!(
            instrumented_macs(&enc, &cfg, frames).unwrap(),
            analytic_cost(&cfg, enc.config(), frames).unwrap().macs
        );
    }
}

proptest! {
    #[test]
    fn scores_shrink_with_pooling(s_f in 1usize..=3, s_k in 1usize..=2, s_q in 1usize..=2, frames in 1usize..3000) {
        let enc = EncoderConfig::preset("small").unwrap();
        let scores = |k, q| {
            let cfg = CompressionConfig::fixed(s_f, k, q, enc.depth).unwrap();
            analytic_cost(&cfg, &enc, frames).unwrap().macs.attn_scores
        };
        prop_assert!(scores(s_k + 1, s_q) <= scores(s_k, s_q));
        prop_assert!(scores(s_k, s_q + 1) <= scores(s_k, s_q));
    }

    #[test]
    fn standard_sweep_strictly_decreases(frames in 100usize..3000, preset in prop::sample::select(vec!["tiny", "small", "B"])) {
        let enc = EncoderConfig::preset(preset).unwrap();
        let t: Vec<u64> = Triplet::STANDARD.iter().map(|&t| total(&enc, t, frames)).collect();
        prop_assert!(t.windows(2).all(|w| w[0] > w[1]), "{:?}", t);
    }

    #[test]
    fn features_skip_only_the_front_end(s_f in 1usize..=3, frames in 1usize..2000) {
        let enc = EncoderConfig::preset("tiny").unwrap();
        let cfg = CompressionConfig::fixed(s_f, 2, 1, enc.depth).unwrap();
        let audio = analytic_cost(&cfg, &enc, frames).unwrap().macs;
        let feats = analytic_cost_features(&cfg, &enc, frames).unwrap().macs;
        prop_assert!(feats.fe < audio.fe);
        prop_assert_eq!((feats.attn_proj, feats.attn_scores, feats.ffn, feats.upsample),
            (audio.attn_proj, audio.attn_scores, audio.ffn, audio.upsample));
    }
}
