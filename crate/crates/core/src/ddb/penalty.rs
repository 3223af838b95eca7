//! Optimization baselines: a box-projected penalty method in the spirit of
//! the L-BFGS adversarial formulation, and Carlini-Wagner L2.
//!
//! Both run Adam on an inner objective for a sequence of penalty constants
//! `C` and keep the smallest successful perturbation seen at any inner step.

use crate::classifier::ScoreModel;
use crate::error::{Error, Result};
use crate::scenario::Label;

use super::{distance, DdbMethod, DdbResult, InputBox, SearchConfig};

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    /// One update with the step size scaled by `scale`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], scale: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= scale * self.lr * mh / (vh.sqrt() + 1e-12);
        }
    }
}

/// Outer search over `C`. `success_wants_larger`: after a success, move `C`
/// up (true) or down (false). Geometric bisection once bracketed.
fn search_constant(
    initial: f64,
    steps: usize,
    success_wants_larger: bool,
    mut run: impl FnMut(f64) -> Result<bool>,
) -> Result<()> {
    let mut c = initial;
    let mut last_success: Option<f64> = None;
    let mut last_failure: Option<f64> = None;
    for _ in 0..steps {
        let ok = run(c)?;
        if ok {
            last_success = Some(c);
        } else {
            last_failure = Some(c);
        }
        c = match (last_success, last_failure) {
            (Some(s), Some(f)) => (s * f).sqrt(),
            (Some(s), None) => {
                if success_wants_larger {
                    s * 2.0
                } else {
                    s / 2.0
                }
            }
            (None, Some(f)) => {
                if success_wants_larger {
                    f / 2.0
                } else {
                    f * 2.0
                }
            }
            (None, None) => unreachable!(),
        };
    }
    Ok(())
}

/// Closest successful iterate plus the last iterate of every successful run.
/// The latter sit near the stationary direction once the step size has
/// decayed, so after pulling back they often beat the first crossing.
struct Best {
    point: Option<Vec<f64>>,
    distance: f64,
    finals: Vec<Vec<f64>>,
}

impl Best {
    fn new() -> Self {
        Self {
            point: None,
            distance: f64::INFINITY,
            finals: Vec::new(),
        }
    }

    fn offer(&mut self, cand: &[f64], x: &[f64]) {
        let d = distance(cand, x);
        if d < self.distance {
            self.distance = d;
            self.point = Some(cand.to_vec());
        }
    }
}

fn decay(k: usize, total: usize) -> f64 {
    1.0 - k as f64 / total as f64
}

/// Pull each candidate back along its segment from `x` to within `tol` of
/// the first point that still satisfies `accept`; keep the closest.
fn pull_back(
    model: &impl ScoreModel,
    x: &[f64],
    best: &mut Best,
    tol: f64,
    accept: impl Fn(&crate::classifier::PredictionScores) -> bool,
) -> Result<()> {
    let mut cands = std::mem::take(&mut best.finals);
    cands.extend(best.point.take());
    best.distance = f64::INFINITY;
    for p in cands {
        let len = distance(&p, x);
        let at = |t: f64| -> Vec<f64> { x.iter().zip(&p).map(|(a, b)| a + t * (b - a)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        while (hi - lo) * len > tol {
            let mid = 0.5 * (lo + hi);
            if accept(&model.scores(&at(mid))?) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        best.offer(&at(hi), x);
    }
    Ok(())
}

fn check_mask(mask: Option<&[bool]>, n: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != n => Err(Error::DimensionMismatch {
            expected: n,
            got: m.len(),
        }),
        _ => Ok(()),
    }
}

/// Minimize `C‖δ‖₂ + CE(x + δ, target)` subject to the box, searching over `C`.
pub fn lbfgs_ddb(model: &impl ScoreModel, x: &[f64], target: Label, config: &SearchConfig) -> Result<DdbResult> {
    lbfgs_ddb_masked(model, x, target, config, None)
}

pub fn lbfgs_ddb_masked(
    model: &impl ScoreModel,
    x: &[f64],
    target: Label,
    config: &SearchConfig,
    mask: Option<&[bool]>,
) -> Result<DdbResult> {
    let n = x.len();
    check_mask(mask, n)?;
    let bounds = config.require_box(n)?.covering(x);
    if model.classify(x)? == target {
        return Err(Error::config("LBFGS target label equals the current label"));
    }
    let width: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| h - l).collect();
    let to_raw = |s: &[f64]| -> Vec<f64> {
        s.iter()
            .zip(&bounds.lo)
            .zip(&width)
            .map(|((v, l), w)| l + v * w)
            .collect()
    };
    let start: Vec<f64> = x
        .iter()
        .zip(&bounds.lo)
        .zip(&width)
        .map(|((v, l), w)| (v - l) / w)
        .collect();
    let sign = match target {
        Label::Available => 1.0,
        Label::Unavailable => -1.0,
    };

    let p = &config.penalty;
    let mut best = Best::new();
    let mut steps = 0u32;
    search_constant(p.initial_constant, p.constant_steps, true, |c| {
        let mut s = start.clone();
        let mut adam = Adam::new(n, p.learning_rate);
        let mut success = false;
        let mut last_ok = None;
        for k in 0..p.inner_steps {
            let mut raw = to_raw(&s);
            if let Some(mk) = mask {
                raw.iter_mut()
                    .zip(mk)
                    .zip(x)
                    .filter(|((_, on), _)| !**on)
                    .for_each(|((r, _), v)| *r = *v);
            }
            let grads = model.gradients(&raw)?;
            steps += 1;
            last_ok = None;
            if grads.scores.label() == target {
                success = true;
                best.offer(&raw, x);
                last_ok = Some(raw.clone());
            }
            // margin toward the target label
            let m = sign * grads.scores.margin();
            let sig = 1.0 / (1.0 + m.exp());
            let dg = grads.margin_gradient();
            let delta: Vec<f64> = raw.iter().zip(x).map(|(a, b)| a - b).collect();
            let dn = super::l2(&delta);
            let mut g: Vec<f64> = (0..n)
                .map(|j| {
                    let pen = if dn > 0.0 { c * delta[j] / dn } else { 0.0 };
                    (pen - sig * sign * dg[j]) * width[j]
                })
                .collect();
            if let Some(mk) = mask {
                g.iter_mut().zip(mk).filter(|(_, on)| !**on).for_each(|(v, _)| *v = 0.0);
            }
            adam.step(&mut s, &g, decay(k, p.inner_steps));
            s.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        best.finals.extend(last_ok);
        Ok(success)
    })?;

    pull_back(model, x, &mut best, 0.1 * config.stop_threshold, |s| {
        s.label() == target
    })?;
    Ok(finish(best, x, steps, DdbMethod::Lbfgs))
}

/// Carlini-Wagner L2: minimize `‖δ‖₂ + C·max(Z_orig - Z_other, -κ)` over
/// `ρ` with `x' = lo + (hi - lo)(tanh ρ + 1)/2`, searching over `C`.
pub fn cw_ddb(model: &impl ScoreModel, x: &[f64], config: &SearchConfig) -> Result<DdbResult> {
    let n = x.len();
    let bounds: InputBox = config.require_box(n)?.covering(x);
    let orig = model.classify(x)?;
    let kappa = config.confidence;
    let half: Vec<f64> = bounds.lo.iter().zip(&bounds.hi).map(|(l, h)| 0.5 * (h - l)).collect();
    let to_raw = |rho: &[f64]| -> Vec<f64> {
        rho.iter()
            .zip(&bounds.lo)
            .zip(&half)
            .map(|((r, l), h)| l + h * (r.tanh() + 1.0))
            .collect()
    };
    let start: Vec<f64> = x
        .iter()
        .zip(&bounds.lo)
        .zip(&half)
        .map(|((v, l), h)| ((v - l) / h - 1.0).clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh())
        .collect();
    // sign converts the margin g = Z_1 - Z_0 into Z_orig - Z_other
    let sign = match orig {
        Label::Available => 1.0,
        Label::Unavailable => -1.0,
    };

    let p = &config.penalty;
    let mut best = Best::new();
    let mut steps = 0u32;
    search_constant(p.initial_constant, p.constant_steps, false, |c| {
        let mut rho = start.clone();
        let mut adam = Adam::new(n, p.learning_rate);
        let mut success = false;
        let mut last_ok = None;
        for k in 0..p.inner_steps {
            let raw = to_raw(&rho);
            let grads = model.gradients(&raw)?;
            steps += 1;
            let orig_minus_other = sign * grads.scores.margin();
            last_ok = None;
            if grads.scores.label() != orig && -orig_minus_other >= kappa {
                success = true;
                best.offer(&raw, x);
                last_ok = Some(raw.clone());
            }
            let delta: Vec<f64> = raw.iter().zip(x).map(|(a, b)| a - b).collect();
            let dn = super::l2(&delta);
            let active = orig_minus_other >= -kappa;
            let dg = grads.margin_gradient();
            let g: Vec<f64> = (0..n)
                .map(|j| {
                    let mut d_raw = if dn > 0.0 { delta[j] / dn } else { 0.0 };
                    if active {
                        d_raw += c * sign * dg[j];
                    }
                    let t = rho[j].tanh();
                    d_raw * half[j] * (1.0 - t * t)
                })
                .collect();
            adam.step(&mut rho, &g, decay(k, p.inner_steps));
        }
        best.finals.extend(last_ok);
        Ok(success)
    })?;

    pull_back(model, x, &mut best, 0.1 * config.stop_threshold, |s| {
        s.label() != orig && -sign * s.margin() >= kappa
    })?;
    Ok(finish(best, x, steps, DdbMethod::Cw))
}

fn finish(best: Best, x: &[f64], steps: u32, method: DdbMethod) -> DdbResult {
    match best.point {
        Some(point) => DdbResult {
            distance: best.distance,
            boundary_point: point,
            iterations: steps,
            method,
            converged: true,
        },
        None => DdbResult::failed(x, steps, method),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{CountingModel, FusionClassifier};
    use crate::ddb::BoundaryDirection;

    fn setup() -> (FusionClassifier, BoundaryDirection, SearchConfig) {
        let w = vec![0.8, -0.4, 0.5, -1.1];
        let b = -1.5;
        let cfg = SearchConfig {
            input_box: Some(InputBox::new(vec![-20.0; 4], vec![20.0; 4]).unwrap()),
            ..SearchConfig::default()
        };
        (
            FusionClassifier::affine(&w, b).unwrap(),
            BoundaryDirection::from_hyperplane(w, b).unwrap(),
            cfg,
        )
    }

    const POINTS: [[f64; 4]; 3] = [[1.0, 2.0, 3.0, 4.0], [5.0, -2.0, 1.0, 0.5], [-3.0, 0.0, 2.0, 2.0]];

    #[test]
    fn lbfgs_reaches_target_and_respects_box() {
        let (model, plane, cfg) = setup();
        for x in POINTS {
            let target = model.classify(&x).unwrap().opposite();
            let r = lbfgs_ddb(&model, &x, target, &cfg).unwrap();
            assert!(r.converged);
            assert_eq!(model.classify(&r.boundary_point).unwrap(), target);
            assert!(cfg.input_box.as_ref().unwrap().contains(&r.boundary_point));
            let exact = plane.hyperplane_distance(&x);
            assert!(r.distance >= exact - 0.01);
            assert!(r.distance <= exact * 1.05 + 0.01, "{} vs {exact}", r.distance);
        }
    }

    #[test]
    fn lbfgs_rejects_current_label_as_target() {
        let (model, _, cfg) = setup();
        let x = POINTS[0];
        let here = model.classify(&x).unwrap();
        assert!(lbfgs_ddb(&model, &x, here, &cfg).is_err());
        let nobox = SearchConfig::default();
        assert!(lbfgs_ddb(&model, &x, here.opposite(), &nobox).is_err());
    }

    #[test]
    fn cw_matches_hyperplane_distance() {
        let (model, plane, cfg) = setup();
        for x in POINTS {
            let r = cw_ddb(&model, &x, &cfg).unwrap();
            assert!(r.converged);
            assert_ne!(model.classify(&r.boundary_point).unwrap(), model.classify(&x).unwrap());
            let exact = plane.hyperplane_distance(&x);
            assert!(
                (r.distance - exact).abs() <= (0.05 * exact).max(0.01),
                "{} vs {exact}",
                r.distance
            );
            assert!(model.margin(&r.boundary_point).unwrap().abs() <= cfg.boundary_tolerance + 0.05);
        }
    }

    #[test]
    fn cw_confidence_is_honoured() {
        let (model, _, mut cfg) = setup();
        cfg.confidence = 0.5;
        for x in POINTS {
            let orig = model.classify(&x).unwrap();
            let r = cw_ddb(&model, &x, &cfg).unwrap();
            assert!(r.converged);
            let s = model.scores(&r.boundary_point).unwrap();
            assert!(s.score(orig.opposite()) - s.score(orig) >= 0.5);
        }
    }

    #[test]
    fn penalty_methods_use_gradients_every_step() {
        let (model, _, cfg) = setup();
        let counted = CountingModel::new(&model);
        let r = cw_ddb(&counted, &POINTS[0], &cfg).unwrap();
        assert_eq!(counted.gradient_calls(), r.iterations as u64);
        counted.reset();
        let t = model.classify(&POINTS[0]).unwrap().opposite();
        let r = lbfgs_ddb(&counted, &POINTS[0], t, &cfg).unwrap();
        assert_eq!(counted.gradient_calls(), r.iterations as u64);
    }

    #[test]
    fn masked_lbfgs_only_moves_masked_coordinates() {
        let (model, _, cfg) = setup();
        let x = POINTS[1];
        let t = model.classify(&x).unwrap().opposite();
        let mask = [true, true, false, false];
        let r = lbfgs_ddb_masked(&model, &x, t, &cfg, Some(&mask)).unwrap();
        assert!(r.converged);
        assert_eq!(&r.boundary_point[2..], &x[2..]);
    }
}
