use crate::classifier::ScoreModel;
use crate::error::{Error, Result};
use crate::scenario::Label;

use super::{distance, BoundaryDirection, DdbMethod, DdbResult, SearchConfig};

/// Progress of [`binary_search_ddb_traced`].
#[derive(Debug, Clone, PartialEq)]
pub enum SearchEvent<'a> {
    /// The probe at `step` did not flip the label; the step was doubled.
    Doubling { step: f64 },
    /// Bracket found. `lower` is labelled 0, `upper` labelled 1.
    Bracketed {
        lower: &'a [f64],
        upper: &'a [f64],
        doublings: u32,
    },
    /// One bisection; `lower`/`upper` are the bracket after the update.
    Bisection {
        midpoint: &'a [f64],
        midpoint_label: Label,
        lower: &'a [f64],
        upper: &'a [f64],
    },
}

/// DDB along the LRT normal: double the step until the fusion label flips,
/// then bisect until the bracket is no wider than `stop_threshold`.
pub fn binary_search_ddb(
    model: &impl ScoreModel,
    x: &[f64],
    direction: &BoundaryDirection,
    config: &SearchConfig,
) -> Result<DdbResult> {
    binary_search_ddb_traced(model, x, direction, config, |_| {})
}

pub fn binary_search_ddb_traced(
    model: &impl ScoreModel,
    x: &[f64],
    direction: &BoundaryDirection,
    config: &SearchConfig,
    mut observe: impl FnMut(SearchEvent<'_>),
) -> Result<DdbResult> {
    if direction.dim() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: direction.dim(),
            got: x.len(),
        });
    }
    let label = model.classify(x)?;
    let dir = direction.search_direction(label);
    let along = |eps: f64| -> Vec<f64> { x.iter().zip(&dir).map(|(v, d)| v + eps * d).collect() };

    let mut step = config.initial_step;
    let mut doublings = 0u32;
    let probe = loop {
        let probe = along(step);
        if model.classify(&probe)? != label {
            break probe;
        }
        if doublings >= config.max_doublings {
            return Ok(DdbResult::failed(x, doublings, DdbMethod::LrtBinarySearch));
        }
        step *= 2.0;
        doublings += 1;
        observe(SearchEvent::Doubling { step });
    };

    let (mut lower, mut upper) = match label {
        Label::Unavailable => (x.to_vec(), probe),
        Label::Available => (probe, x.to_vec()),
    };
    observe(SearchEvent::Bracketed {
        lower: &lower,
        upper: &upper,
        doublings,
    });

    let mut bisections = 0u32;
    let mut midpoint;
    loop {
        midpoint = lower
            .iter()
            .zip(&upper)
            .map(|(a, b)| 0.5 * (a + b))
            .collect::<Vec<f64>>();
        bisections += 1;
        let mid_label = model.classify(&midpoint)?;
        match mid_label {
            Label::Unavailable => lower.copy_from_slice(&midpoint),
            Label::Available => upper.copy_from_slice(&midpoint),
        }
        observe(SearchEvent::Bisection {
            midpoint: &midpoint,
            midpoint_label: mid_label,
            lower: &lower,
            upper: &upper,
        });
        if distance(&lower, &upper) <= config.stop_threshold {
            break;
        }
    }

    Ok(DdbResult {
        distance: distance(&midpoint, x),
        boundary_point: midpoint,
        iterations: doublings + bisections,
        method: DdbMethod::LrtBinarySearch,
        converged: true,
    })
}
