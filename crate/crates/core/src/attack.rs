//! Adversarial spectrum attacks from `m` compromised nodes.
//!
//! Node indices are zero-based throughout the library.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_on, FusionClassifier, ScoreModel, TrainConfig};
use crate::ddb::{
    binary_search_ddb, deepfool_ddb_masked, lbfgs_ddb_masked, BoundaryDirection, DdbResult, SearchConfig,
};
use crate::error::{Error, Result};
use crate::scenario::{Label, SensingVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Gradients of the fusion model itself.
    WhiteBox,
    /// Gradients of the attacker's own model trained on fusion decisions.
    Surrogate,
}

#[derive(Debug, Clone)]
pub struct AttackerKnowledge {
    controlled: Vec<usize>,
    mask: Vec<bool>,
    mode: AttackMode,
    surrogate: Option<FusionClassifier>,
}

impl AttackerKnowledge {
    /// `controlled` must be distinct indices below `node_count`, with
    /// `1 ≤ m < node_count`. A surrogate is required iff `mode` is
    /// [`AttackMode::Surrogate`].
    pub fn new(
        node_count: usize,
        controlled: &[usize],
        mode: AttackMode,
        surrogate: Option<FusionClassifier>,
    ) -> Result<Self> {
        let mut nodes = controlled.to_vec();
        nodes.sort_unstable();
        nodes.dedup();
        if nodes.len() != controlled.len() {
            return Err(Error::InvalidAttacker("controlled nodes contain duplicates".into()));
        }
        if nodes.is_empty() || nodes.len() >= node_count {
            return Err(Error::InvalidAttacker(format!(
                "need 1 <= m < {node_count} controlled nodes, got {}",
                nodes.len()
            )));
        }
        if let Some(&bad) = nodes.iter().find(|&&j| j >= node_count) {
            return Err(Error::InvalidAttacker(format!(
                "node index {bad} out of range 0..{node_count}"
            )));
        }
        match (mode, &surrogate) {
            (AttackMode::Surrogate, None) => {
                return Err(Error::InvalidAttacker("surrogate mode needs a surrogate model".into()))
            }
            (AttackMode::WhiteBox, Some(_)) => {
                return Err(Error::InvalidAttacker("white-box mode takes no surrogate".into()))
            }
            (AttackMode::Surrogate, Some(s)) if s.input_dim() != node_count => {
                return Err(Error::DimensionMismatch {
                    expected: node_count,
                    got: s.input_dim(),
                })
            }
            _ => {}
        }
        let mut mask = vec![false; node_count];
        nodes.iter().for_each(|&j| mask[j] = true);
        Ok(Self {
            controlled: nodes,
            mask,
            mode,
            surrogate,
        })
    }

    /// Nodes `0..m`.
    pub fn first_nodes(
        node_count: usize,
        m: usize,
        mode: AttackMode,
        surrogate: Option<FusionClassifier>,
    ) -> Result<Self> {
        Self::new(node_count, &(0..m).collect::<Vec<_>>(), mode, surrogate)
    }

    pub fn controlled_nodes(&self) -> &[usize] {
        &self.controlled
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn m(&self) -> usize {
        self.controlled.len()
    }

    pub fn node_count(&self) -> usize {
        self.mask.len()
    }

    pub fn mode(&self) -> AttackMode {
        self.mode
    }

    pub fn surrogate(&self) -> Option<&FusionClassifier> {
        self.surrogate.as_ref()
    }

    /// The model whose gradients drive the attack.
    pub fn attacker_model<'a>(&'a self, fusion: &'a FusionClassifier) -> &'a FusionClassifier {
        self.surrogate.as_ref().unwrap_or(fusion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    #[serde(rename = "deepfool")]
    DeepFool,
    Lbfgs,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 4] = [
        AttackMethod::Fgsm,
        AttackMethod::Pgd,
        AttackMethod::DeepFool,
        AttackMethod::Lbfgs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::DeepFool => "deepfool",
            AttackMethod::Lbfgs => "lbfgs",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "pgd" => Ok(AttackMethod::Pgd),
            "deepfool" | "deepfool_attack" => Ok(AttackMethod::DeepFool),
            "lbfgs" | "lbfgs_attack" => Ok(AttackMethod::Lbfgs),
            other => Err(Error::config(format!("unknown attack method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// FGSM sign-step size and PGD per-step ℓ2 length, raw power units.
    pub step_size: f64,
    pub pgd_steps: u32,
    pub occurrence_ratio: f64,
    /// Boundary-seeking attacks scale their perturbation by this factor.
    pub overshoot: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Fgsm,
            step_size: 3.5,
            pgd_steps: 10,
            occurrence_ratio: 1.0,
            overshoot: 1.02,
            seed: 7,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config("attack.step_size must be positive"));
        }
        if self.pgd_steps == 0 {
            return Err(Error::config("attack.pgd_steps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.occurrence_ratio) {
            return Err(Error::config("attack.occurrence_ratio must lie in [0, 1]"));
        }
        if !(self.overshoot.is_finite() && self.overshoot >= 1.0) {
            return Err(Error::config("attack.overshoot must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub perturbed: SensingVector,
    /// The scheduler fired for this timeslot.
    pub attacked: bool,
    /// The true fusion label changed.
    pub success: bool,
    pub perturbation_norm: f64,
    pub method: AttackMethod,
}

impl AttackOutcome {
    fn untouched(x: &SensingVector, method: AttackMethod, attacked: bool) -> Self {
        Self {
            perturbed: x.clone(),
            attacked,
            success: false,
            perturbation_norm: 0.0,
            method,
        }
    }
}

/// Fit the attacker's model to `(input, fusion decision)` pairs.
pub fn train_surrogate(observations: &[(&[f64], Label)], config: &TrainConfig) -> Result<FusionClassifier> {
    if observations.is_empty() {
        return Err(Error::InvalidDataset("surrogate needs observations".into()));
    }
    Ok(train_on(observations, config)?.0)
}

/// Label each record with the fusion decision, as the attacker observes it.
pub fn observe_decisions(fusion: &impl ScoreModel, records: &[SensingVector]) -> Result<Vec<(Vec<f64>, Label)>> {
    records
        .iter()
        .map(|r| Ok((r.values.clone(), fusion.classify(&r.values)?)))
        .collect()
}

/// Fraction of `inputs` on which two models agree.
pub fn agreement<'a>(
    a: &impl ScoreModel,
    b: &impl ScoreModel,
    inputs: impl IntoIterator<Item = &'a [f64]>,
) -> Result<f64> {
    let (mut same, mut total) = (0usize, 0usize);
    for x in inputs {
        same += (a.classify(x)? == b.classify(x)?) as usize;
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidDataset("agreement over an empty set".into()));
    }
    Ok(same as f64 / total as f64)
}

fn check_dim(knowledge: &AttackerKnowledge, x: &[f64]) -> Result<()> {
    if x.len() != knowledge.node_count() {
        return Err(Error::DimensionMismatch {
            expected: knowledge.node_count(),
            got: x.len(),
        });
    }
    Ok(())
}

// +1 when the margin has to rise to flip `label`, -1 when it has to fall.
fn flip_sign(label: Label) -> f64 {
    match label {
        Label::Unavailable => 1.0,
        Label::Available => -1.0,
    }
}

fn finish(
    fusion: &impl ScoreModel,
    x: &SensingVector,
    mut values: Vec<f64>,
    mask: &[bool],
    method: AttackMethod,
) -> Result<AttackOutcome> {
    for ((v, orig), on) in values.iter_mut().zip(&x.values).zip(mask) {
        *v = if *on { v.max(0.0) } else { *orig };
    }
    let norm = values
        .iter()
        .zip(&x.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let success = fusion.classify(&values)? != fusion.classify(&x.values)?;
    Ok(AttackOutcome {
        perturbed: SensingVector {
            timeslot: x.timeslot,
            values,
            label: x.label,
        },
        attacked: true,
        success,
        perturbation_norm: norm,
        method,
    })
}

/// One signed step `step_size · sign(∇)` on the controlled nodes, in the
/// direction that pushes the attacker model's margin across zero.
pub fn fgsm_attack(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    step_size: f64,
) -> Result<AttackOutcome> {
    check_dim(knowledge, &x.values)?;
    let model = knowledge.attacker_model(fusion);
    let grads = model.gradients(&x.values)?;
    let s = flip_sign(grads.scores.label()) * step_size;
    let values = x
        .values
        .iter()
        .zip(grads.margin_gradient())
        .zip(knowledge.mask())
        .map(|((v, g), on)| if *on && g != 0.0 { v + s * g.signum() } else { *v })
        .collect();
    finish(fusion, x, values, knowledge.mask(), AttackMethod::Fgsm)
}

/// Up to `steps` normalized gradient steps of ℓ2 length `step_size`,
/// each projected onto the controlled coordinates and `x ≥ 0`. Stops early
/// once the attacker model flips.
pub fn pgd_attack(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    step_size: f64,
    steps: u32,
) -> Result<AttackOutcome> {
    check_dim(knowledge, &x.values)?;
    let model = knowledge.attacker_model(fusion);
    let start = model.classify(&x.values)?;
    let s = flip_sign(start) * step_size;
    let mut cur = x.values.clone();
    for _ in 0..steps {
        let mut g = model.gradients(&cur)?.margin_gradient();
        // drop uncontrolled coordinates and those pinned at zero that the
        // step would push further down
        for ((gj, on), c) in g.iter_mut().zip(knowledge.mask()).zip(&cur) {
            if !on || (*c <= 0.0 && s * *gj < 0.0) {
                *gj = 0.0;
            }
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        for ((c, gj), on) in cur.iter_mut().zip(&g).zip(knowledge.mask()) {
            if *on {
                *c = (*c + s * gj / norm).max(0.0);
            }
        }
        if model.classify(&cur)? != start {
            break;
        }
    }
    finish(fusion, x, cur, knowledge.mask(), AttackMethod::Pgd)
}

fn boundary_attack(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    overshoot: f64,
    method: AttackMethod,
    solved: DdbResult,
) -> Result<AttackOutcome> {
    if !(solved.converged && solved.distance.is_finite()) {
        return Ok(AttackOutcome::untouched(x, method, true));
    }
    let values = x
        .values
        .iter()
        .zip(&solved.boundary_point)
        .map(|(v, b)| v + overshoot * (b - v))
        .collect();
    finish(fusion, x, values, knowledge.mask(), method)
}

/// Masked DeepFool on the attacker model, overshooting the boundary point.
pub fn deepfool_attack(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    overshoot: f64,
    search: &SearchConfig,
) -> Result<AttackOutcome> {
    check_dim(knowledge, &x.values)?;
    let model = knowledge.attacker_model(fusion);
    let solved = deepfool_ddb_masked(model, &x.values, search, Some(knowledge.mask()))?;
    boundary_attack(fusion, knowledge, x, overshoot, AttackMethod::DeepFool, solved)
}

/// Masked LBFGS-style penalty search on the attacker model toward the
/// opposite label, overshooting the result.
pub fn lbfgs_attack(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    overshoot: f64,
    search: &SearchConfig,
) -> Result<AttackOutcome> {
    check_dim(knowledge, &x.values)?;
    let model = knowledge.attacker_model(fusion);
    let target = model.classify(&x.values)?.opposite();
    let solved = lbfgs_ddb_masked(model, &x.values, target, search, Some(knowledge.mask()))?;
    boundary_attack(fusion, knowledge, x, overshoot, AttackMethod::Lbfgs, solved)
}

/// Run `config.method` against one vector unconditionally.
pub fn attack_one(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    x: &SensingVector,
    config: &AttackConfig,
    search: &SearchConfig,
) -> Result<AttackOutcome> {
    match config.method {
        AttackMethod::Fgsm => fgsm_attack(fusion, knowledge, x, config.step_size),
        AttackMethod::Pgd => pgd_attack(fusion, knowledge, x, config.step_size, config.pgd_steps),
        AttackMethod::DeepFool => deepfool_attack(fusion, knowledge, x, config.overshoot, search),
        AttackMethod::Lbfgs => lbfgs_attack(fusion, knowledge, x, config.overshoot, search),
    }
}

/// Whether `timeslot` is attacked. One uniform draw per timeslot from its
/// own ChaCha stream, so the answer does not depend on batch order and the
/// attacked set grows monotonically with the ratio.
pub fn is_attacked(seed: u64, timeslot: u64, ratio: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(timeslot);
    rng.random::<f64>() < ratio
}

/// Per-timeslot Bernoulli(`occurrence_ratio`) scheduling of `config.method`.
pub fn schedule_attacks(
    fusion: &FusionClassifier,
    knowledge: &AttackerKnowledge,
    stream: &[SensingVector],
    config: &AttackConfig,
    search: &SearchConfig,
) -> Result<Vec<AttackOutcome>> {
    config.validate()?;
    let one = |x: &SensingVector| {
        if is_attacked(config.seed, x.timeslot, config.occurrence_ratio) {
            attack_one(fusion, knowledge, x, config, search)
        } else {
            Ok(AttackOutcome::untouched(x, config.method, false))
        }
    };
    #[cfg(feature = "parallel")]
    return stream.par_iter().map(one).collect();
    #[cfg(not(feature = "parallel"))]
    return stream.iter().map(one).collect();
}

/// `timeslot,attacked,success,perturbation_norm,method`.
pub fn write_attack_csv<W: Write>(outcomes: &[AttackOutcome], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timeslot", "attacked", "success", "perturbation_norm", "method"])?;
    for o in outcomes {
        wtr.write_record([
            o.perturbed.timeslot.to_string(),
            o.attacked.to_string(),
            o.success.to_string(),
            o.perturbation_norm.to_string(),
            o.method.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Result of [`targeted_ddb_attack`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetedAttack {
    pub perturbed: Vec<f64>,
    pub target_distance: f64,
    /// DDB of `perturbed` under the fusion model, by binary search along
    /// the hyperplane normal.
    pub achieved_distance: f64,
    pub perturbation_norm: f64,
}

/// Oracle attacker that places `x` at signed distance `target_distance`
/// from the hyperplane `wᵀx + b = 0`, on the `side` label's side, by the
/// minimum-norm change of the controlled coordinates.
///
/// `believed` is the attacker's view of `x`: the true values on controlled
/// nodes and possibly wrong values elsewhere. The constraint is solved on
/// `believed`; the change is applied to the true `x`. Values are not
/// clamped, so the constraint holds exactly when `believed == x`.
#[allow(clippy::too_many_arguments)]
pub fn targeted_ddb_attack(
    fusion: &impl ScoreModel,
    direction: &BoundaryDirection,
    x: &[f64],
    believed: &[f64],
    target_distance: f64,
    side: Label,
    controlled: &[usize],
    search: &SearchConfig,
) -> Result<TargetedAttack> {
    let n = direction.dim();
    if x.len() != n || believed.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if x.len() != n { x.len() } else { believed.len() },
        });
    }
    if !(target_distance.is_finite() && target_distance >= 0.0) {
        return Err(Error::config("target distance must be finite and non-negative"));
    }
    if let Some(&bad) = controlled.iter().find(|&&j| j >= n) {
        return Err(Error::InvalidAttacker(format!("node index {bad} out of range 0..{n}")));
    }
    let w = direction.weights();
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let wc2: f64 = controlled.iter().map(|&j| w[j] * w[j]).sum();
    if wc2.is_nan() || wc2 <= 0.0 {
        return Err(Error::Infeasible("controlled nodes carry zero weight".into()));
    }
    let sign = match side {
        Label::Available => 1.0,
        Label::Unavailable => -1.0,
    };
    let needed = sign * target_distance * wn - direction.hyperplane_value(believed);
    let t = needed / wc2;
    let mut perturbed = x.to_vec();
    controlled.iter().for_each(|&j| perturbed[j] += t * w[j]);
    let perturbation_norm = t.abs() * wc2.sqrt();
    let achieved = binary_search_ddb(fusion, &perturbed, direction, search)?;
    Ok(TargetedAttack {
        perturbed,
        target_distance,
        achieved_distance: achieved.distance,
        perturbation_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(values: Vec<f64>) -> SensingVector {
        SensingVector {
            timeslot: 3,
            values,
            label: Label::Available,
        }
    }

    fn linear() -> FusionClassifier {
        FusionClassifier::affine(&[1.0, -0.5, 0.25, 2.0], -3.0).unwrap()
    }

    #[test]
    fn knowledge_validation() {
        assert!(AttackerKnowledge::new(4, &[], AttackMode::WhiteBox, None).is_err());
        assert!(AttackerKnowledge::new(4, &[0, 1, 2, 3], AttackMode::WhiteBox, None).is_err());
        assert!(AttackerKnowledge::new(4, &[0, 0], AttackMode::WhiteBox, None).is_err());
        assert!(AttackerKnowledge::new(4, &[4], AttackMode::WhiteBox, None).is_err());
        assert!(AttackerKnowledge::new(4, &[1], AttackMode::Surrogate, None).is_err());
        assert!(AttackerKnowledge::new(4, &[1], AttackMode::WhiteBox, Some(linear())).is_err());
        let k = AttackerKnowledge::new(4, &[3, 1], AttackMode::Surrogate, Some(linear())).unwrap();
        assert_eq!(k.controlled_nodes(), &[1, 3]);
        assert_eq!(k.mask(), &[false, true, false, true]);
    }

    #[test]
    fn fgsm_flips_above_closed_form_threshold() {
        let fusion = linear();
        let k = AttackerKnowledge::first_nodes(4, 3, AttackMode::WhiteBox, None).unwrap();
        // only the controlled part of w counts
        let x = sv(vec![2.0, 1.0, 1.0, 1.0]);
        let g = fusion.margin(&x.values).unwrap();
        let threshold = g.abs() / (1.0 + 0.5 + 0.25);
        let below = fgsm_attack(&fusion, &k, &x, threshold * 0.99).unwrap();
        let above = fgsm_attack(&fusion, &k, &x, threshold * 1.01).unwrap();
        assert!(!below.success);
        assert!(above.success);
        assert_eq!(above.perturbed.values[3], 1.0);
    }

    #[test]
    fn perturbations_stay_non_negative_and_masked() {
        let fusion = linear();
        let k = AttackerKnowledge::new(4, &[0, 2], AttackMode::WhiteBox, None).unwrap();
        let x = sv(vec![0.1, 0.2, 0.05, 3.0]);
        let search = SearchConfig {
            input_box: Some(crate::ddb::InputBox::new(vec![0.0; 4], vec![10.0; 4]).unwrap()),
            ..SearchConfig::default()
        };
        let cfgs = AttackMethod::ALL.map(|method| AttackConfig {
            method,
            step_size: 5.0,
            ..AttackConfig::default()
        });
        for cfg in &cfgs {
            let o = attack_one(&fusion, &k, &x, cfg, &search).unwrap();
            assert!(o.perturbed.values.iter().all(|v| *v >= 0.0), "{}", cfg.method);
            assert_eq!(o.perturbed.values[1], 0.2);
            assert_eq!(o.perturbed.values[3], 3.0);
        }
    }

    #[test]
    fn pgd_single_step_is_normalized_gradient_step() {
        let fusion = linear();
        let k = AttackerKnowledge::first_nodes(4, 2, AttackMode::WhiteBox, None).unwrap();
        let x = sv(vec![5.0, 5.0, 5.0, 5.0]);
        let o = pgd_attack(&fusion, &k, &x, 0.3, 1).unwrap();
        assert!((o.perturbation_norm - 0.3).abs() < 1e-12);
        let w = [1.0, -0.5];
        let wn = (1.25f64).sqrt();
        for (v, wj) in o.perturbed.values.iter().zip(w) {
            assert!((v - (5.0 - 0.3 * wj / wn)).abs() < 1e-12);
        }
    }

    #[test]
    fn deepfool_attack_full_control_matches_hyperplane_distance() {
        let fusion = FusionClassifier::affine(&[1.0, 1.0, -1.0], -1.0).unwrap();
        let k = AttackerKnowledge::new(3, &[0, 1], AttackMode::WhiteBox, None).unwrap();
        let x = sv(vec![3.0, 3.0, 1.0]);
        let o = deepfool_attack(&fusion, &k, &x, 1.02, &SearchConfig::default()).unwrap();
        // boundary on the controlled subspace: distance |g| / ||w_c||
        let g: f64 = 3.0 + 3.0 - 1.0 - 1.0;
        assert!((o.perturbation_norm - 1.02 * g / 2f64.sqrt()).abs() < 1e-9);
        assert!(o.success);
    }

    #[test]
    fn scheduler_extremes_and_determinism() {
        let fusion = linear();
        let k = AttackerKnowledge::first_nodes(4, 2, AttackMode::WhiteBox, None).unwrap();
        let stream: Vec<SensingVector> = (0..50)
            .map(|t| SensingVector {
                timeslot: t,
                values: vec![1.0, 2.0, 3.0, 1.5],
                label: Label::Available,
            })
            .collect();
        let search = SearchConfig::default();
        let none = AttackConfig {
            occurrence_ratio: 0.0,
            ..AttackConfig::default()
        };
        let out = schedule_attacks(&fusion, &k, &stream, &none, &search).unwrap();
        assert!(out.iter().all(|o| !o.attacked && !o.success));
        assert!(out.iter().zip(&stream).all(|(o, s)| &o.perturbed == s));
        let all = AttackConfig::default();
        let out = schedule_attacks(&fusion, &k, &stream, &all, &search).unwrap();
        assert!(out.iter().all(|o| o.attacked));
        let half = AttackConfig {
            occurrence_ratio: 0.5,
            ..AttackConfig::default()
        };
        let a = schedule_attacks(&fusion, &k, &stream, &half, &search).unwrap();
        let b = schedule_attacks(&fusion, &k, &stream, &half, &search).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attacked_sets_are_nested_in_the_ratio() {
        for t in 0..500 {
            let lo = is_attacked(9, t, 0.2);
            let hi = is_attacked(9, t, 0.6);
            assert!(!lo || hi);
        }
    }

    #[test]
    fn targeted_zero_distance_lands_on_hyperplane() {
        let w = vec![0.5, -1.0, 2.0, 0.25];
        let b = 0.7;
        let dir = BoundaryDirection::from_hyperplane(w.clone(), b).unwrap();
        let fusion = FusionClassifier::affine(&w, b).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let r = targeted_ddb_attack(
            &fusion,
            &dir,
            &x,
            &x,
            0.0,
            Label::Available,
            &[0, 2],
            &SearchConfig::default(),
        )
        .unwrap();
        assert!(dir.hyperplane_value(&r.perturbed).abs() < 1e-9);
        assert_eq!(r.perturbed[1], 2.0);
        assert_eq!(r.perturbed[3], 4.0);
    }

    #[test]
    fn targeted_zero_weight_is_infeasible() {
        let dir = BoundaryDirection::from_hyperplane(vec![0.0, 1.0], 0.0).unwrap();
        let fusion = FusionClassifier::affine(&[0.0, 1.0], 0.0).unwrap();
        let e = targeted_ddb_attack(
            &fusion,
            &dir,
            &[1.0, 1.0],
            &[1.0, 1.0],
            1.0,
            Label::Available,
            &[0],
            &SearchConfig::default(),
        );
        assert!(matches!(e, Err(Error::Infeasible(_))));
    }

    #[test]
    fn csv_header() {
        let o = AttackOutcome::untouched(&sv(vec![1.0]), AttackMethod::Pgd, false);
        let mut buf = Vec::new();
        write_attack_csv(&[o], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "timeslot,attacked,success,perturbation_norm,method\n3,false,false,0,pgd\n"
        );
    }

    #[test]
    fn method_parsing() {
        for m in AttackMethod::ALL {
            assert_eq!(m.as_str().parse::<AttackMethod>().unwrap(), m);
        }
        assert!("en".parse::<AttackMethod>().is_err());
    }
}
