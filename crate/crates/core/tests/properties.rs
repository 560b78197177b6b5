mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use cnas_core::arch::{expand_output, ArchDescriptor};
use cnas_core::data::{synthetic_dataset, Split, SyntheticSpec};
use cnas_core::nn::checkpoint;
use cnas_core::rl::{normalize_rewards, ActorConfig, Controller};
use cnas_core::search::{greedy_rule, heuristic_func, Decision};
use cnas_core::stream::{make_stream, Scenario, ScenarioKind};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn morphisms_preserve_outputs(seed in any::<u64>()) {
        prop_assert!(preservation_trial(seed, 16) <= 1e-4);
    }

    #[test]
    fn layer_gradients_match_differences(seed in any::<u64>(), k in 0usize..6) {
        let (net, x) = isolate_smooth(LAYER_KINDS[k], seed);
        let (p, i) = network_gradient_error(&net, &x, seed);
        prop_assert!(p <= 1e-4 && i <= 1e-4, "{:?}: params {p:e} input {i:e}", LAYER_KINDS[k]);
    }

    #[test]
    fn heuristic_matches_oracle_and_ignores_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (v_prev, mut v) = heuristic_instance(&mut r);
        prop_assert!(heuristic_agrees(v_prev, &v));
        let before = heuristic_func(v_prev, &v).unwrap();
        v.shuffle(&mut r);
        prop_assert_eq!(heuristic_func(v_prev, &v).unwrap(), before);
    }

    #[test]
    fn heuristic_expansion_implies_greedy_expansion(seed in any::<u64>()) {
        let (v_prev, v) = heuristic_instance(&mut rng(seed));
        if heuristic_func(v_prev, &v).unwrap() == Decision::Expand {
            prop_assert_eq!(greedy_rule(v_prev, &v).unwrap(), Decision::Expand);
        }
    }

    #[test]
    fn aia_is_overall_accuracy_when_balanced(seed in any::<u64>()) {
        let (aia, overall) = aia_case(seed);
        prop_assert!((aia - overall).abs() <= 1e-12);
    }

    #[test]
    fn normalised_rewards_are_bounded(raw in prop::collection::vec(-1.0f64..1.0, 1..30)) {
        let n = normalize_rewards(&raw);
        prop_assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
        if raw.iter().any(|&v| v != 0.0) {
            let peak = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn descriptor_text_and_checkpoint_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let desc = random_descriptor(&mut r);
        let parsed: ArchDescriptor = desc.to_string().parse().unwrap();
        prop_assert_eq!(&parsed, &desc);
        let net = desc.instantiate(r.gen()).unwrap();
        prop_assert_eq!(net.param_count(), desc.param_count());
        let back = checkpoint::decode(&checkpoint::encode(&net)).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn output_growth_keeps_old_logits(seed in any::<u64>(), extra in 1usize..4) {
        let mut r = rng(seed);
        let desc = random_descriptor(&mut r);
        let net = desc.instantiate(r.gen()).unwrap();
        let k = net.class_count();
        let grown = expand_output(&net, k + extra, r.gen()).unwrap();
        let x = random_batch::<f32>(&mut r, 4, net.input_shape());
        let a = net.logits(&x).unwrap();
        let b = grown.logits(&x).unwrap();
        for row in 0..4 {
            prop_assert_eq!(a.row(row), &b.row(row)[..k]);
        }
    }

    #[test]
    fn mixed_streams_partition_the_data(seed in any::<u64>(), base in 1usize..4) {
        let ds = synthetic_dataset(&SyntheticSpec { classes: 8, per_class: 20, height: 4, width: 4, separation: 2.0 }, 1).unwrap();
        let scenario = Scenario { kind: ScenarioKind::Mixed, base, k_min: 1, k_max: 3, ..Scenario::default() };
        let stream = make_stream(&scenario, &ds, &(0..8).collect::<Vec<_>>(), seed).unwrap();
        let mut train: Vec<usize> = stream.steps.iter().flat_map(|s| s.train.iter().copied()).collect();
        train.sort_unstable();
        let mut expected = ds.select(Split::Train, |_| true);
        expected.sort_unstable();
        prop_assert_eq!(train, expected);
        prop_assert_eq!(stream.steps[0].new_classes.len(), base);
        let mut arrived: Vec<usize> = stream.steps.iter().flat_map(|s| s.new_classes.iter().copied()).collect();
        prop_assert_eq!(&arrived, &stream.arrival_order);
        arrived.sort_unstable();
        prop_assert_eq!(arrived, (0..8).collect::<Vec<_>>());
    }
}

#[test]
fn actor_gradients_match_differences() {
    let cfg = ActorConfig {
        hidden: 8,
        ..ActorConfig::default()
    };
    for s in 0..5 {
        let c = Controller::new(3, 3, &cfg, 40 + s);
        assert!(actor_gradient_error(&c.wider, s) <= 1e-4);
        assert!(actor_gradient_error(&c.deeper, s + 9) <= 1e-4);
    }
}

#[test]
fn bandit_concentrates_on_best_action() {
    let (w, d) = bandit(9, (0, 3), 200, 20);
    assert_eq!((modal(&w), modal(&d)), (0, 3));
}

#[test]
fn heuristic_boundary_keeps() {
    assert_eq!(heuristic_func(0.5, &[0.4, 0.9]).unwrap(), Decision::Keep);
    assert_eq!(heuristic_func(0.5, &[0.4, 0.9, 0.8]).unwrap(), Decision::Expand);
    assert_eq!(heuristic_func(0.5, &[0.5, 0.5]).unwrap(), Decision::Keep);
}
