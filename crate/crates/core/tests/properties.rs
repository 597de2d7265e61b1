use proptest::prelude::*;

use prefcurate::curve::{build_curve, detect_landmarks, DetectParams, RewardCurve};
use prefcurate::dataset::{FeatureVector, LabelSource};
use prefcurate::reward::{bt_loss, pair_nll, TrainingRow};
use prefcurate::{Arch, Corpus, Label, Orientation, PreferencePair, RewardModel};

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn pair_strategy(d: usize) -> impl Strategy<Value = PreferencePair> {
    (vector(d), vector(d))
        .prop_map(|(a, b)| PreferencePair::new(0, FeatureVector::new(a).unwrap(), FeatureVector::new(b).unwrap()))
}

/// Steep, flat, steep with per-step jitter drawn from `jitter`.
fn piecewise(n: usize, elbow: usize, knee: usize, jitter: &[f64]) -> Vec<f64> {
    let mut y = 0.0;
    (0..n)
        .map(|i| {
            let v = y;
            let slope = if i < elbow || i >= knee { 4.0 } else { 0.01 };
            y -= slope * (1.0 + 0.2 * jitter[i % jitter.len()]);
            v
        })
        .collect()
}

fn curve_of(gaps: &[f64]) -> RewardCurve {
    RewardCurve::from_gaps(gaps.iter().enumerate().map(|(i, &g)| (i as u64, g)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gap_is_antisymmetric_in_the_label(pair in pair_strategy(5), w in vector(5)) {
        let model = RewardModel::new(Arch::Linear, 5, w).unwrap();
        let a = model.pair_gap(&pair, Label::A).unwrap();
        let b = model.pair_gap(&pair, Label::B).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn pair_probabilities_sum_to_one(gap in -30.0f64..30.0) {
        // p + (1 - p) = 1, so exp(-nll(g)) + exp(-nll(-g)) = 1
        let total = (-pair_nll(gap)).exp() + (-pair_nll(-gap)).exp();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_orientation_mirrors_the_curve(
        pairs in prop::collection::vec(pair_strategy(4), 5..60),
        w in vector(4),
        flips in prop::collection::vec(any::<bool>(), 60),
    ) {
        let pairs: Vec<PreferencePair> = pairs
            .into_iter()
            .enumerate()
            .map(|(i, p)| PreferencePair { id: i as u64, ..p })
            .collect();
        let corpus = Corpus::new(pairs, 4).unwrap();
        let labels = corpus.ids().map(|id| (id, if flips[id as usize] { Label::B } else { Label::A }));
        let orientation = Orientation::from_labels(labels, LabelSource::Llm);
        let model = RewardModel::new(Arch::Linear, 4, w).unwrap();
        let up = build_curve(&model, &corpus, &orientation).unwrap().gaps();
        let down = build_curve(&model, &corpus, &orientation.negated()).unwrap().gaps();
        let mirrored: Vec<f64> = up.iter().rev().map(|g| -g).collect();
        prop_assert_eq!(down, mirrored);
    }

    #[test]
    fn landmarks_ignore_positive_affine_maps(
        n in 500usize..3000,
        elbow_frac in 0.05f64..0.2,
        knee_frac in 0.75f64..0.95,
        jitter in prop::collection::vec(-1.0f64..1.0, 97),
        scale_exp in -8i32..8,
        shift in -100i32..100,
    ) {
        let gaps = piecewise(n, (elbow_frac * n as f64) as usize, (knee_frac * n as f64) as usize, &jitter);
        let params = DetectParams::default();
        let base = detect_landmarks(curve_of(&gaps), &params).unwrap().landmarks();
        let scale = 2f64.powi(scale_exp);
        let moved: Vec<f64> = gaps.iter().map(|g| scale * g + shift as f64).collect();
        let lm = detect_landmarks(curve_of(&moved), &params).unwrap().landmarks();
        prop_assert_eq!((lm.elbow_idx, lm.knee_idx, lm.fallback_used), (base.elbow_idx, base.knee_idx, base.fallback_used));
    }

    #[test]
    fn weights_match_expanded_repeats(a in pair_strategy(3), b in pair_strategy(3), w in vector(3), ka in 1u32..6, kb in 1u32..6) {
        let b = PreferencePair { id: 1, ..b };
        let corpus = Corpus::new(vec![a, b], 3).unwrap();
        let model = RewardModel::new(Arch::Linear, 3, w).unwrap();
        let weighted = [TrainingRow::new(0, Label::A).repeated(ka), TrainingRow::new(1, Label::B).repeated(kb)];
        let mut expanded = vec![TrainingRow::new(0, Label::A); ka as usize];
        expanded.extend(vec![TrainingRow::new(1, Label::B); kb as usize]);
        let lw = bt_loss(&model, &corpus, &weighted).unwrap();
        let le = bt_loss(&model, &corpus, &expanded).unwrap();
        prop_assert!((lw - le).abs() < 1e-12);
    }
}
