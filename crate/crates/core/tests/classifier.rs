use std::sync::OnceLock;

use ddbsense::classifier::{dataset_accuracy, train, Activation, FusionClassifier, ScoreModel, TrainConfig};
use ddbsense::scenario::{ChannelScenario, Dataset, Label, ScenarioSpec};
use proptest::prelude::*;

fn model() -> &'static FusionClassifier {
    static M: OnceLock<FusionClassifier> = OnceLock::new();
    M.get_or_init(|| {
        let s = ChannelScenario::synthetic(&ScenarioSpec::default()).unwrap();
        train(&Dataset::generate(&s, 3_000, 21).unwrap(), &TrainConfig::default())
            .unwrap()
            .0
    })
}

#[test]
fn trained_model_is_accurate() {
    let s = ChannelScenario::synthetic(&ScenarioSpec::default()).unwrap();
    let test = Dataset::generate(&s, 5_000, 22).unwrap();
    assert!(dataset_accuracy(model(), &test).unwrap() > 0.99);
}

#[test]
fn training_is_deterministic() {
    let s = ChannelScenario::synthetic(&ScenarioSpec::default()).unwrap();
    let d = Dataset::generate(&s, 500, 23).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    assert_eq!(train(&d, &cfg).unwrap().0, train(&d, &cfg).unwrap().0);
}

#[test]
fn persistence_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    model().save(&path).unwrap();
    let back = FusionClassifier::load(&path).unwrap();
    assert_eq!(&back, model());
    let mut a = Vec::new();
    let mut b = Vec::new();
    model().write_to(&mut a).unwrap();
    back.write_to(&mut b).unwrap();
    assert_eq!(a, b);
    let x = vec![3.0; 20];
    assert_eq!(model().scores(&x).unwrap(), back.scores(&x).unwrap());
}

#[test]
fn corrupt_model_files_are_rejected() {
    let mut bytes = Vec::new();
    model().write_to(&mut bytes).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    assert!(FusionClassifier::read_from(&mut bad_magic.as_slice()).is_err());
    let truncated = &bytes[..bytes.len() / 2];
    assert!(FusionClassifier::read_from(&mut &truncated[..]).is_err());
}

#[test]
fn both_activations_round_trip() {
    let s = ChannelScenario::synthetic(&ScenarioSpec {
        node_count: 4,
        ..Default::default()
    })
    .unwrap();
    let d = Dataset::generate(&s, 200, 24).unwrap();
    for activation in [Activation::Tanh, Activation::Softplus] {
        let cfg = TrainConfig {
            epochs: 2,
            activation,
            hidden_sizes: vec![5],
            ..TrainConfig::default()
        };
        let m = train(&d, &cfg).unwrap().0;
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(FusionClassifier::read_from(&mut buf.as_slice()).unwrap(), m);
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    assert!(model().scores(&[1.0; 3]).is_err());
    assert!(model().gradients(&[1.0; 21]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_central_differences(x in prop::collection::vec(0.5f64..12.0, 20)) {
        let g = model().gradients(&x).unwrap();
        for label in [Label::Unavailable, Label::Available] {
            for j in 0..20 {
                let h = 1e-5 * x[j].max(1.0);
                let mut up = x.clone();
                let mut dn = x.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (model().scores(&up).unwrap().score(label) - model().scores(&dn).unwrap().score(label)) / (2.0 * h);
                let a = g.grad(label)[j];
                prop_assert!((a - fd).abs() <= 1e-5 * a.abs().max(1.0), "node {} {} vs {}", j, a, fd);
            }
        }
    }

    #[test]
    fn classify_agrees_with_margin_sign(x in prop::collection::vec(0.0f64..15.0, 20)) {
        let s = model().scores(&x).unwrap();
        prop_assert_eq!(s.label() == Label::Available, s.margin() > 0.0);
    }
}
