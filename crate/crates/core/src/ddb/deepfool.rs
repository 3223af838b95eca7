use crate::classifier::ScoreModel;
use crate::error::{Error, Result};

use super::{distance, DdbMethod, DdbResult, SearchConfig};

/// DeepFool for the two-class margin: repeatedly step to the zero of the
/// local linearization, `δ_k = -g(x_k) ∇g(x_k) / ‖∇g(x_k)‖²`, until
/// `|g| ≤ boundary_tolerance`.
pub fn deepfool_ddb(model: &impl ScoreModel, x: &[f64], config: &SearchConfig) -> Result<DdbResult> {
    deepfool_ddb_masked(model, x, config, None)
}

/// As [`deepfool_ddb`], with steps restricted to coordinates where
/// `mask[j]` is true.
pub fn deepfool_ddb_masked(
    model: &impl ScoreModel,
    x: &[f64],
    config: &SearchConfig,
    mask: Option<&[bool]>,
) -> Result<DdbResult> {
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: m.len(),
            });
        }
    }
    let mut cur = x.to_vec();
    let mut steps = 0u32;
    loop {
        let grads = model.gradients(&cur)?;
        let g = grads.scores.margin();
        if !g.is_finite() {
            return Ok(DdbResult::failed(x, steps, DdbMethod::DeepFool));
        }
        if g.abs() <= config.boundary_tolerance {
            break;
        }
        if steps >= config.deepfool_max_iterations {
            return Ok(DdbResult::failed(x, steps, DdbMethod::DeepFool));
        }
        let mut grad = grads.margin_gradient();
        if let Some(m) = mask {
            grad.iter_mut()
                .zip(m)
                .filter(|(_, on)| !**on)
                .for_each(|(v, _)| *v = 0.0);
        }
        let norm2: f64 = grad.iter().map(|v| v * v).sum();
        if norm2.is_nan() || norm2 <= 1e-24 {
            return Ok(DdbResult::failed(x, steps, DdbMethod::DeepFool));
        }
        let scale = -g / norm2;
        cur.iter_mut().zip(&grad).for_each(|(c, d)| *c += scale * d);
        steps += 1;
    }
    Ok(DdbResult {
        distance: distance(&cur, x),
        boundary_point: cur,
        iterations: steps,
        method: DdbMethod::DeepFool,
        converged: true,
    })
}
