//! Browser bindings. Every function returns a JSON string, or throws a
//! string describing the error.

use ddbsense::attack::{fgsm_attack, AttackMode, AttackerKnowledge};
use ddbsense::classifier::FusionClassifier;
use ddbsense::ddb::{
    binary_search_ddb, binary_search_ddb_traced, lrt_direction, BoundaryDirection, SearchConfig, SearchEvent,
};
use ddbsense::ks::{detect, stream_detect, DdbBaseline};
use ddbsense::scenario::{ChannelScenario, Dataset, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(|e| JsValue::from_str(&e.to_string()))
}

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct Step {
    kind: &'static str,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize)]
struct Trace {
    steps: Vec<Step>,
    boundary_point: Vec<f64>,
    distance: f64,
    exact: f64,
    iterations: u32,
}

/// Binary search from `(x0, x1)` toward the line `w0·x + w1·y + b = 0`.
#[wasm_bindgen]
pub fn search_trace(w0: f64, w1: f64, b: f64, x0: f64, x1: f64, initial_step: f64) -> Result<String, JsValue> {
    let w = [w0, w1];
    let model = FusionClassifier::affine(&w, b).map_err(err)?;
    let dir = BoundaryDirection::from_hyperplane(w.to_vec(), b).map_err(err)?;
    let cfg = SearchConfig {
        initial_step,
        ..SearchConfig::default()
    };
    cfg.validate().map_err(err)?;
    let x = [x0, x1];
    let mut steps = Vec::new();
    let res = binary_search_ddb_traced(&model, &x, &dir, &cfg, |e| match e {
        SearchEvent::Doubling { .. } => {}
        SearchEvent::Bracketed { lower, upper, .. } => steps.push(Step {
            kind: "bracket",
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        }),
        SearchEvent::Bisection { lower, upper, .. } => steps.push(Step {
            kind: "bisect",
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        }),
    })
    .map_err(err)?;
    to_js(&Trace {
        steps,
        boundary_point: res.boundary_point,
        distance: res.distance,
        exact: dir.hyperplane_distance(&x),
        iterations: res.iterations,
    })
}

#[derive(Serialize)]
struct KsView {
    d_ks: f64,
    p_value: f64,
    flagged: bool,
    baseline: Vec<f64>,
    group: Vec<f64>,
}

/// A Gamma(2, 1) baseline against one group scaled by `scale`.
#[wasm_bindgen]
pub fn ks_explorer(
    seed: u64,
    baseline_size: usize,
    group_size: usize,
    scale: f64,
    alpha: f64,
) -> Result<String, JsValue> {
    if baseline_size < 2 || group_size == 0 || scale.is_nan() || scale <= 0.0 {
        return Err(err("need baseline_size >= 2, group_size >= 1, scale > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Gamma::new(2.0, 1.0).map_err(err)?;
    let base: Vec<f64> = (0..baseline_size).map(|_| g.sample(&mut rng)).collect();
    let group: Vec<f64> = (0..group_size).map(|_| g.sample(&mut rng) * scale).collect();
    let baseline = DdbBaseline::new(&base).map_err(err)?;
    let d = detect(&baseline, &group, alpha).map_err(err)?;
    let mut group = group;
    group.sort_by(f64::total_cmp);
    to_js(&KsView {
        d_ks: d.d_ks,
        p_value: d.p_value,
        flagged: d.flagged,
        baseline: baseline.distances().to_vec(),
        group,
    })
}

#[derive(Serialize)]
struct Histograms {
    edges: Vec<f64>,
    clean: Vec<usize>,
    attacked: Vec<usize>,
    attack_success_rate: f64,
    clean_flag_rate: f64,
    attacked_flag_rate: f64,
}

fn histogram(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; edges.len() - 1];
    let last = edges.len() - 2;
    for v in values {
        let i = edges.partition_point(|e| e <= v).saturating_sub(1).min(last);
        counts[i] += 1;
    }
    counts
}

/// DDBs of a clean and an FGSM-attacked stream on the default scenario,
/// with the LRT detector as fusion model and `m` white-box attackers.
#[wasm_bindgen]
pub fn ddb_histogram(seed: u64, m: usize, step_size: f64, group_size: usize, alpha: f64) -> Result<String, JsValue> {
    let s = ChannelScenario::synthetic(&ScenarioSpec::default()).map_err(err)?;
    let dir = lrt_direction(s.scale_h0(), s.scale_h1(), s.sample_count(), 1.0).map_err(err)?;
    let model = FusionClassifier::affine(dir.weights(), dir.bias()).map_err(err)?;
    let knowledge = AttackerKnowledge::first_nodes(s.node_count(), m, AttackMode::WhiteBox, None).map_err(err)?;
    let cfg = SearchConfig::default();
    let ddbs = |data: &Dataset| -> Result<Vec<f64>, JsValue> {
        data.records()
            .iter()
            .map(|r| {
                binary_search_ddb(&model, &r.values, &dir, &cfg)
                    .map(|d| d.distance)
                    .map_err(err)
            })
            .collect()
    };
    let train = Dataset::generate(&s, 2_000, seed).map_err(err)?;
    let clean = Dataset::generate_from(&s, 2_000, seed.wrapping_add(1), 2_000).map_err(err)?;
    let test = Dataset::generate_from(&s, 2_000, seed.wrapping_add(2), 4_000).map_err(err)?;
    let mut attacked = Vec::with_capacity(test.len());
    let mut wins = 0usize;
    for r in test.records() {
        let o = fgsm_attack(&model, &knowledge, r, step_size).map_err(err)?;
        wins += o.success as usize;
        attacked.push(
            binary_search_ddb(&model, &o.perturbed.values, &dir, &cfg)
                .map_err(err)?
                .distance,
        );
    }
    let base = ddbs(&train)?;
    let clean_d = ddbs(&clean)?;
    let baseline = DdbBaseline::new(&base).map_err(err)?;
    let rate = |v: &[f64]| -> Result<f64, JsValue> {
        let d = stream_detect(&baseline, v, group_size, alpha).map_err(err)?;
        Ok(ddbsense::ks::flag_rate(&d))
    };
    let hi = clean_d.iter().chain(&attacked).cloned().fold(0.0, f64::max).max(1e-9);
    let edges: Vec<f64> = (0..=40).map(|i| hi * i as f64 / 40.0).collect();
    to_js(&Histograms {
        clean: histogram(&clean_d, &edges),
        attacked: histogram(&attacked, &edges),
        edges,
        attack_success_rate: wins as f64 / test.len() as f64,
        clean_flag_rate: rate(&clean_d)?,
        attacked_flag_rate: rate(&attacked)?,
    })
}
