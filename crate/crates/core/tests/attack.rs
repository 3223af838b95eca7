use std::sync::OnceLock;

use ddbsense::attack::{
    agreement, attack_one, deepfool_attack, fgsm_attack, is_attacked, lbfgs_attack, observe_decisions, pgd_attack,
    schedule_attacks, targeted_ddb_attack, train_surrogate, AttackConfig, AttackMethod, AttackMode, AttackOutcome,
    AttackerKnowledge,
};
use ddbsense::classifier::{FusionClassifier, ScoreModel, TrainConfig};
use ddbsense::ddb::{lrt_direction, SearchConfig};
use ddbsense::experiment::{ExperimentConfig, World};
use ddbsense::scenario::{ChannelScenario, Dataset, Label, ScenarioSpec};
use proptest::prelude::*;

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| World::build(&ExperimentConfig::default()).unwrap())
}

fn white_box(m: usize) -> AttackerKnowledge {
    AttackerKnowledge::first_nodes(20, m, AttackMode::WhiteBox, None).unwrap()
}

fn check_outcome(w: &World, k: &AttackerKnowledge, x: &[f64], o: &AttackOutcome) {
    for (j, (a, b)) in o.perturbed.values.iter().zip(x).enumerate() {
        assert!(*a >= 0.0);
        if !k.mask()[j] {
            assert_eq!(a, b, "uncontrolled node {j} moved");
        }
    }
    let norm = o
        .perturbed
        .values
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!((norm - o.perturbation_norm).abs() < 1e-9);
    let flipped = w.model.classify(&o.perturbed.values).unwrap() != w.model.classify(x).unwrap();
    assert_eq!(o.success, flipped);
}

#[test]
fn every_method_respects_mask_and_non_negativity() {
    let w = world();
    let k = w.knowledge(&[0, 3, 5, 8, 13]).unwrap();
    for method in AttackMethod::ALL {
        let cfg = AttackConfig {
            method,
            ..AttackConfig::default()
        };
        for x in w.test.iter().take(40) {
            let o = attack_one(&w.model, &k, x, &cfg, &w.search).unwrap();
            assert!(o.attacked);
            check_outcome(w, &k, &x.values, &o);
        }
    }
}

#[test]
fn scheduler_rate_and_nesting() {
    let seed = 77;
    let hits = (0..10_000u64).filter(|&t| is_attacked(seed, t, 0.3)).count();
    assert!((hits as f64 / 10_000.0 - 0.3).abs() <= 0.02, "{hits}");
    for t in 0..2_000u64 {
        assert!(!is_attacked(seed, t, 0.0));
        assert!(is_attacked(seed, t, 1.0));
        if is_attacked(seed, t, 0.2) {
            assert!(is_attacked(seed, t, 0.5));
        }
    }
}

#[test]
fn schedule_is_deterministic_and_order_free() {
    let w = world();
    let k = white_box(7);
    let cfg = AttackConfig {
        occurrence_ratio: 0.4,
        ..AttackConfig::default()
    };
    let stream = &w.test[..400];
    let a = schedule_attacks(&w.model, &k, stream, &cfg, &w.search).unwrap();
    let b = schedule_attacks(&w.model, &k, stream, &cfg, &w.search).unwrap();
    assert_eq!(a, b);
    let tail = schedule_attacks(&w.model, &k, &stream[200..], &cfg, &w.search).unwrap();
    assert_eq!(&a[200..], &tail[..]);
    for o in a.iter().filter(|o| !o.attacked) {
        assert!(!o.success);
        assert_eq!(o.perturbation_norm, 0.0);
    }
}

#[test]
fn surrogate_agrees_with_fusion() {
    let w = world();
    let train: Vec<_> = observe_decisions(&w.model, &w.train.records()[..5_000]).unwrap();
    let obs: Vec<(&[f64], Label)> = train.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
    let s = train_surrogate(
        &obs,
        &TrainConfig {
            seed: 99,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let held: Vec<&[f64]> = w.test.iter().take(5_000).map(|r| r.values.as_slice()).collect();
    let a = agreement(&s, &w.model, held.iter().copied()).unwrap();
    assert!(a >= 0.98, "{a}");
    assert!(train_surrogate(&[], &TrainConfig::default()).is_err());
    // disagreements concentrate near the boundary
    let margins: Vec<f64> = held.iter().map(|x| w.model.margin(x).unwrap().abs()).collect();
    let mut sorted = margins.clone();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted[sorted.len() / 2];
    let high: Vec<&[f64]> = held
        .iter()
        .zip(&margins)
        .filter(|(_, m)| **m >= cut)
        .map(|(x, _)| *x)
        .collect();
    assert_eq!(agreement(&s, &w.model, high.iter().copied()).unwrap(), 1.0);
}

fn success_rate(w: &World, k: &AttackerKnowledge, method: AttackMethod, step: f64, steps: u32, n: usize) -> f64 {
    let cfg = AttackConfig {
        method,
        step_size: step,
        pgd_steps: steps,
        ..AttackConfig::default()
    };
    let hits = w.test[..n]
        .iter()
        .filter(|x| attack_one(&w.model, k, x, &cfg, &w.search).unwrap().success)
        .count();
    hits as f64 / n as f64
}

#[test]
fn fgsm_success_in_band_and_pgd_keeps_up() {
    let w = world();
    let k = w.knowledge(&(0..7).collect::<Vec<_>>()).unwrap();
    let fgsm = success_rate(w, &k, AttackMethod::Fgsm, 3.5, 1, 4_000);
    assert!((0.25..=0.60).contains(&fgsm), "fgsm {fgsm}");
    // same ℓ2 budget: one sign step of 3.5 on 7 nodes has norm 3.5·√7.
    // White-box, since early stopping on a surrogate flip leaves PGD points
    // just past the surrogate boundary.
    let k = white_box(7);
    let fgsm = success_rate(w, &k, AttackMethod::Fgsm, 3.5, 1, 4_000);
    let pgd = success_rate(w, &k, AttackMethod::Pgd, 3.5 * 7f64.sqrt() / 10.0, 10, 4_000);
    assert!(pgd >= fgsm - 0.10, "pgd {pgd} vs fgsm {fgsm}");
}

#[test]
fn more_nodes_more_success() {
    let w = world();
    let rates: Vec<f64> = [3, 7, 12, 19]
        .iter()
        .map(|&m| success_rate(w, &white_box(m), AttackMethod::Fgsm, 3.5, 1, 2_000))
        .collect();
    assert!(rates.windows(2).all(|p| p[1] >= p[0]), "{rates:?}");
}

#[test]
fn masked_deepfool_needs_more_than_unmasked() {
    let w = world();
    let masked = white_box(7);
    let full = white_box(19);
    for x in w.test.iter().take(100) {
        let a = deepfool_attack(&w.model, &masked, x, 1.02, &w.search).unwrap();
        let b = deepfool_attack(&w.model, &full, x, 1.02, &w.search).unwrap();
        if a.success && b.success {
            assert!(
                a.perturbation_norm >= b.perturbation_norm - 1e-6,
                "{} < {}",
                a.perturbation_norm,
                b.perturbation_norm
            );
        }
    }
}

fn linear_case() -> (ChannelScenario, FusionClassifier, ddbsense::ddb::BoundaryDirection) {
    let s = ChannelScenario::synthetic(&ScenarioSpec::default()).unwrap();
    let dir = lrt_direction(s.scale_h0(), s.scale_h1(), s.sample_count(), 1.0).unwrap();
    let m = FusionClassifier::affine(dir.weights(), dir.bias()).unwrap();
    (s, m, dir)
}

#[test]
fn boundary_attacks_on_linear_model_match_hyperplane() {
    let (s, model, dir) = linear_case();
    let k = white_box(19);
    let data = Dataset::generate(&s, 50, 41).unwrap();
    let search = SearchConfig {
        input_box: Some(ddbsense::ddb::InputBox::from_dataset(&data, 0.5).unwrap()),
        ..SearchConfig::default()
    };
    for x in data.records() {
        // node 20 is uncontrolled; compare against the distance restricted
        // to the first 19 coordinates
        let w = dir.weights();
        let restricted = dir.hyperplane_value(&x.values).abs() / w[..19].iter().map(|v| v * v).sum::<f64>().sqrt();
        let o = deepfool_attack(&model, &k, x, 1.02, &search).unwrap();
        if o.perturbed.values.iter().all(|v| *v > 0.0) {
            assert!(
                (o.perturbation_norm - 1.02 * restricted).abs() < 1e-2 * restricted.max(1.0),
                "{} vs {}",
                o.perturbation_norm,
                restricted
            );
            assert!(o.success);
        }
        let l = lbfgs_attack(&model, &k, x, 1.02, &search).unwrap();
        check_outcome_linear(&model, &k, &x.values, &l);
    }
}

fn check_outcome_linear(model: &FusionClassifier, k: &AttackerKnowledge, x: &[f64], o: &AttackOutcome) {
    assert!(o.perturbed.values.iter().all(|v| *v >= 0.0));
    for ((v, orig), on) in o.perturbed.values.iter().zip(x).zip(k.mask()) {
        if !on {
            assert_eq!(v, orig);
        }
    }
    assert_eq!(
        o.success,
        model.classify(&o.perturbed.values).unwrap() != model.classify(x).unwrap()
    );
}

#[test]
fn targeted_attack_zero_distance_lands_on_plane() {
    let (s, model, dir) = linear_case();
    let controlled: Vec<usize> = (0..7).collect();
    for x in Dataset::generate(&s, 50, 42).unwrap().records() {
        let side = model.classify(&x.values).unwrap();
        let t = targeted_ddb_attack(
            &model,
            &dir,
            &x.values,
            &x.values,
            0.0,
            side,
            &controlled,
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(dir.hyperplane_value(&t.perturbed).abs() < 1e-9);
        assert!(t.perturbed[7..] == x.values[7..]);
    }
}

#[test]
fn knowledge_validation() {
    assert!(AttackerKnowledge::new(20, &[], AttackMode::WhiteBox, None).is_err());
    assert!(AttackerKnowledge::new(20, &(0..20).collect::<Vec<_>>(), AttackMode::WhiteBox, None).is_err());
    assert!(AttackerKnowledge::new(20, &[3, 3], AttackMode::WhiteBox, None).is_err());
    assert!(AttackerKnowledge::new(20, &[20], AttackMode::WhiteBox, None).is_err());
    assert!(AttackerKnowledge::new(20, &[1], AttackMode::Surrogate, None).is_err());
    let (_, m, _) = linear_case();
    assert!(AttackerKnowledge::new(20, &[1], AttackMode::WhiteBox, Some(m)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_attacks_keep_invariants(
        idx in 0usize..5_000,
        nodes in prop::collection::btree_set(0usize..20, 1..19),
        step in 0.1f64..8.0,
        pgd in any::<bool>(),
    ) {
        let w = world();
        let nodes: Vec<usize> = nodes.into_iter().collect();
        let k = AttackerKnowledge::new(20, &nodes, AttackMode::WhiteBox, None).unwrap();
        let x = &w.test[idx];
        let o = if pgd { pgd_attack(&w.model, &k, x, step, 5).unwrap() } else { fgsm_attack(&w.model, &k, x, step).unwrap() };
        check_outcome(w, &k, &x.values, &o);
    }
}
