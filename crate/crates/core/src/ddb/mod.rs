//! Distance to the decision boundary (DDB).
//!
//! Four solvers share one result type:
//!
//! * [`binary_search_ddb`]: fixed direction from the Gamma likelihood-ratio
//!   hyperplane, bracket by doubling then bisect. Forward passes only.
//! * [`deepfool_ddb`]: linearize the margin and step to its zero, repeat.
//! * [`lbfgs_ddb`]: box-constrained penalty method `C‖δ‖ + CE(target)`.
//! * [`cw_ddb`]: `‖δ‖ + C·F` over a tanh change of variables.
//!
//! All distances are Euclidean and in raw power units.

mod binary_search;
mod deepfool;
mod penalty;
mod set;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Dataset, Label};

pub use binary_search::{binary_search_ddb, binary_search_ddb_traced, SearchEvent};
pub use deepfool::{deepfool_ddb, deepfool_ddb_masked};
pub use penalty::{cw_ddb, lbfgs_ddb, lbfgs_ddb_masked};
pub use set::{compute_ddb, compute_ddb_set, write_ddb_csv, DdbSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DdbMethod {
    #[serde(rename = "lrt")]
    LrtBinarySearch,
    DeepFool,
    Lbfgs,
    Cw,
}

impl DdbMethod {
    pub const ALL: [DdbMethod; 4] = [
        DdbMethod::LrtBinarySearch,
        DdbMethod::DeepFool,
        DdbMethod::Cw,
        DdbMethod::Lbfgs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DdbMethod::LrtBinarySearch => "lrt",
            DdbMethod::DeepFool => "deepfool",
            DdbMethod::Lbfgs => "lbfgs",
            DdbMethod::Cw => "cw",
        }
    }
}

impl fmt::Display for DdbMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DdbMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lrt" | "lrt_binary_search" => Ok(DdbMethod::LrtBinarySearch),
            "deepfool" => Ok(DdbMethod::DeepFool),
            "lbfgs" => Ok(DdbMethod::Lbfgs),
            "cw" => Ok(DdbMethod::Cw),
            other => Err(Error::config(format!("unknown DDB method {other:?}"))),
        }
    }
}

/// Outcome of one distance computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdbResult {
    /// `‖boundary_point - x‖₂`; `+∞` when the search failed.
    pub distance: f64,
    pub boundary_point: Vec<f64>,
    /// Doublings + bisections for the binary search, Newton steps for
    /// DeepFool, inner optimizer steps for the penalty methods.
    pub iterations: u32,
    pub method: DdbMethod,
    pub converged: bool,
}

impl DdbResult {
    pub(crate) fn failed(x: &[f64], iterations: u32, method: DdbMethod) -> Self {
        Self {
            distance: f64::INFINITY,
            boundary_point: x.to_vec(),
            iterations,
            method,
            converged: false,
        }
    }
}

/// Per-feature box `lo ≤ x ≤ hi` for the penalty methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("box bounds must be non-empty and equal length"));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
        {
            return Err(Error::config("box bounds must be finite with lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    /// Data min/max widened by `headroom` times the range on each side.
    pub fn from_dataset(dataset: &Dataset, headroom: f64) -> Result<Self> {
        let (mut lo, mut hi) = dataset.feature_bounds();
        for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
            let pad = (*h - *l).max(1e-6) * headroom;
            *l -= pad;
            *h += pad;
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Smallest enlargement that strictly contains `x`.
    pub(crate) fn covering(&self, x: &[f64]) -> Self {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for j in 0..x.len() {
            let pad = 1e-3 * (hi[j] - lo[j]);
            if x[j] <= lo[j] {
                lo[j] = x[j] - pad;
            }
            if x[j] >= hi[j] {
                hi[j] = x[j] + pad;
            }
        }
        Self { lo, hi }
    }
}

/// Settings for the gradient-based penalty baselines (LBFGS, C&W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub initial_constant: f64,
    /// Outer search steps over the penalty constant `C`.
    pub constant_steps: usize,
    /// Optimizer steps per value of `C`.
    pub inner_steps: usize,
    /// Adam step size in box-normalized (LBFGS) or tanh (C&W) coordinates.
    pub learning_rate: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            initial_constant: 1.0,
            constant_steps: 6,
            inner_steps: 150,
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// First step length `ε` of the bracketing phase.
    pub initial_step: f64,
    /// Bisection stops once the bracket is at most `ξ` wide.
    pub stop_threshold: f64,
    pub max_doublings: u32,
    /// `|g|` below this counts as on the boundary.
    pub boundary_tolerance: f64,
    pub deepfool_max_iterations: u32,
    /// C&W confidence `κ`.
    pub confidence: f64,
    pub penalty: PenaltyConfig,
    /// Box for LBFGS and the C&W change of variables.
    pub input_box: Option<InputBox>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            initial_step: 5.0,
            stop_threshold: 0.01,
            max_doublings: 40,
            boundary_tolerance: 1e-3,
            deepfool_max_iterations: 50,
            confidence: 0.0,
            penalty: PenaltyConfig::default(),
            input_box: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.initial_step) || !pos(self.stop_threshold) {
            return Err(Error::config("initial_step and stop_threshold must be positive"));
        }
        if self.stop_threshold >= self.initial_step {
            return Err(Error::config("stop_threshold must be smaller than initial_step"));
        }
        if self.max_doublings == 0 || self.deepfool_max_iterations == 0 {
            return Err(Error::config("iteration limits must be positive"));
        }
        if !pos(self.boundary_tolerance) {
            return Err(Error::config("boundary_tolerance must be positive"));
        }
        if !(self.confidence.is_finite() && self.confidence >= 0.0) {
            return Err(Error::config("confidence must be non-negative"));
        }
        let p = &self.penalty;
        if !pos(p.initial_constant) || !pos(p.learning_rate) || p.constant_steps == 0 || p.inner_steps == 0 {
            return Err(Error::config("penalty settings must be positive"));
        }
        Ok(())
    }

    pub(crate) fn require_box(&self, n: usize) -> Result<&InputBox> {
        let b = self
            .input_box
            .as_ref()
            .ok_or_else(|| Error::config("this method needs an input box"))?;
        if b.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: b.dim(),
            });
        }
        Ok(b)
    }
}

/// Normal of the likelihood-ratio hyperplane `{x : w·x + b = 0}`; points
/// with `w·x + b > 0` favour label 1 (channel available).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryDirection {
    weights: Vec<f64>,
    bias: f64,
    unit_direction: Vec<f64>,
}

impl BoundaryDirection {
    pub fn from_hyperplane(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let norm = l2(&weights);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DegenerateDirection(
                "hyperplane normal is zero or non-finite".into(),
            ));
        }
        if !bias.is_finite() {
            return Err(Error::DegenerateDirection("bias is not finite".into()));
        }
        let unit_direction = weights.iter().map(|w| -w / norm).collect();
        Ok(Self {
            weights,
            bias,
            unit_direction,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// `u = -w / ‖w‖₂`.
    pub fn unit_direction(&self) -> &[f64] {
        &self.unit_direction
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w·x + b`.
    pub fn hyperplane_value(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    /// `|w·x + b| / ‖w‖₂`.
    pub fn hyperplane_distance(&self, x: &[f64]) -> f64 {
        self.hyperplane_value(x).abs() / l2(&self.weights)
    }

    /// Unit step that carries a point currently labelled `from` toward the
    /// other class: `-u` out of label 0, `+u` out of label 1.
    pub fn search_direction(&self, from: Label) -> Vec<f64> {
        match from {
            Label::Unavailable => self.unit_direction.iter().map(|v| -v).collect(),
            Label::Available => self.unit_direction.clone(),
        }
    }
}

/// LRT hyperplane for Gamma(T, β) node powers:
/// `w_j = 1/β⁰_j - 1/β¹_j`, `b = -(ln γ - T Σ ln(β⁰_j/β¹_j))`.
pub fn lrt_direction(
    scale_h0: &[f64],
    scale_h1: &[f64],
    sample_count: u32,
    threshold: f64,
) -> Result<BoundaryDirection> {
    if scale_h0.len() != scale_h1.len() || scale_h0.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: scale_h0.len(),
            got: scale_h1.len(),
        });
    }
    if scale_h0.iter().chain(scale_h1).any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(Error::DegenerateDirection("scales must be positive".into()));
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::config("LRT threshold γ must be positive"));
    }
    let weights: Vec<f64> = scale_h0
        .iter()
        .zip(scale_h1)
        .map(|(b0, b1)| 1.0 / b0 - 1.0 / b1)
        .collect();
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::DegenerateDirection(
            "scale_h0 equals scale_h1 on every node".into(),
        ));
    }
    let log_ratio: f64 = scale_h0.iter().zip(scale_h1).map(|(b0, b1)| (b0 / b1).ln()).sum();
    let bias = -(threshold.ln() - sample_count as f64 * log_ratio);
    BoundaryDirection::from_hyperplane(weights, bias)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
