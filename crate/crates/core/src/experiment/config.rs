use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, AttackMethod, AttackMode};
use crate::classifier::TrainConfig;
use crate::ddb::{DdbMethod, SearchConfig};
use crate::error::{Error, Result};
use crate::scenario::ScenarioSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    /// Length of the attacked test stream and of the matched clean stream.
    pub test: usize,
    /// Observations the attacker uses to fit its surrogate.
    pub surrogate: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 5_000,
            test: 20_000,
            surrogate: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackerConfig {
    pub m: usize,
    /// Explicit 1-based node indices; overrides `m` (nodes `1..=m`).
    pub nodes: Option<Vec<usize>>,
    pub mode: AttackMode,
    pub method: AttackMethod,
    pub step_size: f64,
    pub pgd_steps: u32,
    pub occurrence_ratio: f64,
    pub overshoot: f64,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        let a = AttackConfig::default();
        Self {
            m: 7,
            nodes: None,
            mode: AttackMode::Surrogate,
            method: a.method,
            step_size: a.step_size,
            pgd_steps: a.pgd_steps,
            occurrence_ratio: a.occurrence_ratio,
            overshoot: a.overshoot,
        }
    }
}

impl AttackerConfig {
    /// Zero-based controlled nodes.
    pub fn controlled(&self) -> Vec<usize> {
        match &self.nodes {
            Some(ns) => ns.iter().map(|j| j.wrapping_sub(1)).collect(),
            None => (0..self.m).collect(),
        }
    }

    pub fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            method: self.method,
            step_size: self.step_size,
            pgd_steps: self.pgd_steps,
            occurrence_ratio: self.occurrence_ratio,
            overshoot: self.overshoot,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub ddb_method: DdbMethod,
    pub group_size: usize,
    pub alpha: f64,
    /// LRT threshold `γ` of the search hyperplane.
    pub lrt_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            ddb_method: DdbMethod::LrtBinarySearch,
            group_size: 25,
            alpha: 0.01,
            lrt_threshold: 1.0,
        }
    }
}

/// Grids for the named sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub group_sizes: Vec<usize>,
    pub ratios: Vec<f64>,
    pub occurrence_sizes: Vec<usize>,
    pub m_values: Vec<usize>,
    pub alphas: Vec<f64>,
    pub attack_methods: Vec<AttackMethod>,
    /// 1-based node sets; seed-chosen disjoint sets of 4 when absent.
    pub location_sets: Option<Vec<Vec<usize>>>,
    pub location_set_count: usize,
    pub location_set_size: usize,
    /// Clean test vectors per method in the method comparison.
    pub comparison_samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            group_sizes: vec![5, 10, 20, 25, 50, 80, 100, 200, 400],
            ratios: (1..=10).map(|i| i as f64 / 10.0).collect(),
            occurrence_sizes: vec![10, 25, 50, 100, 200],
            m_values: vec![3, 5, 7, 10],
            alphas: vec![0.001, 0.005, 0.01, 0.05, 0.1],
            attack_methods: AttackMethod::ALL.to_vec(),
            location_sets: None,
            location_set_count: 5,
            location_set_size: 4,
            comparison_samples: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Multiplies all data sizes.
    pub scale: f64,
    /// Paper-scale sizes: 20,000 train and 80,000 test vectors.
    pub full: bool,
    /// Independent replicate test/clean streams, pooled.
    pub trials: u32,
    pub data: DataConfig,
    pub scenario: ScenarioSpec,
    pub training: TrainConfig,
    pub search: SearchConfig,
    pub attack: AttackerConfig,
    pub detection: DetectionConfig,
    pub sweeps: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2021,
            scale: 1.0,
            full: false,
            trials: 1,
            data: DataConfig::default(),
            scenario: ScenarioSpec::default(),
            training: TrainConfig::default(),
            search: SearchConfig::default(),
            attack: AttackerConfig::default(),
            detection: DetectionConfig::default(),
            sweeps: SweepConfig::default(),
        }
    }
}

/// Sizes after `full` and `scale` are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectiveSizes {
    pub train: usize,
    pub test: usize,
    pub surrogate: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Schema {
            path: origin.to_path_buf(),
            message: e.message().to_string() + &e.span().map(|s| format!(" (at byte {})", s.start)).unwrap_or_default(),
        })?;
        cfg.validate().map_err(|e| Error::Schema {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }

    pub fn sizes(&self) -> EffectiveSizes {
        let (train, test) = if self.full {
            (20_000, 80_000)
        } else {
            (self.data.train, self.data.test)
        };
        let s = |v: usize| ((v as f64 * self.scale).round() as usize).max(1);
        EffectiveSizes {
            train: s(train),
            test: s(test),
            surrogate: s(self.data.surrogate),
        }
    }

    /// Extra slack on paper-anchored floors for down-scaled runs.
    pub fn floor_slack(&self) -> f64 {
        if self.scale < 1.0 {
            0.05
        } else {
            0.0
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::config(format!("{field}: {why}")));
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad("scale", "must be positive");
        }
        if self.trials == 0 {
            return bad("trials", "must be at least 1");
        }
        if self.data.train < 2 || self.data.test == 0 || self.data.surrogate < 2 {
            return bad("data", "train and surrogate need at least 2 vectors, test at least 1");
        }
        self.scenario
            .validate()
            .map_err(|e| Error::config(format!("scenario: {e}")))?;
        self.training
            .validate()
            .map_err(|e| Error::config(format!("training: {e}")))?;
        self.search
            .validate()
            .map_err(|e| Error::config(format!("search: {e}")))?;
        let n = self.scenario.node_count;
        let a = &self.attack;
        if let Some(nodes) = &a.nodes {
            if nodes.iter().any(|&j| j == 0 || j > n) {
                return bad("attack.nodes", &format!("indices must lie in 1..={n}"));
            }
        } else if a.m == 0 || a.m >= n {
            return bad("attack.m", &format!("must satisfy 1 <= m < {n}"));
        }
        a.attack_config(0)
            .validate()
            .map_err(|e| Error::config(format!("attack: {e}")))?;
        let d = &self.detection;
        if d.group_size == 0 {
            return bad("detection.group_size", "must be positive");
        }
        if !(0.0..=1.0).contains(&d.alpha) {
            return bad("detection.alpha", "must lie in [0, 1]");
        }
        if !(d.lrt_threshold.is_finite() && d.lrt_threshold > 0.0) {
            return bad("detection.lrt_threshold", "must be positive");
        }
        let s = &self.sweeps;
        if s.group_sizes.contains(&0) || s.occurrence_sizes.contains(&0) {
            return bad("sweeps", "group sizes must be positive");
        }
        if s.ratios.iter().chain(&s.alphas).any(|v| !(0.0..=1.0).contains(v)) {
            return bad("sweeps", "ratios and alphas must lie in [0, 1]");
        }
        if s.m_values.iter().any(|&m| m == 0 || m >= n) {
            return bad("sweeps.m_values", &format!("must satisfy 1 <= m < {n}"));
        }
        if s.comparison_samples == 0 {
            return bad("sweeps.comparison_samples", "must be positive");
        }
        Ok(())
    }
}

/// Child seed for a named stream.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn nested_sections_override_defaults() {
        let text = "seed = 5\n[attack]\nm = 3\n[detection]\ngroup_size = 50\nddb_method = \"deepfool\"\n";
        let cfg = ExperimentConfig::from_toml_str(text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.attack.m, 3);
        assert_eq!(cfg.detection.group_size, 50);
        assert_eq!(cfg.detection.ddb_method, DdbMethod::DeepFool);
        assert_eq!(cfg.detection.alpha, 0.01);
    }

    #[test]
    fn schema_errors_name_the_file_and_field() {
        let e = ExperimentConfig::from_toml_str("[attack]\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("c.toml") && msg.contains("bogus"), "{msg}");
        let e = ExperimentConfig::from_toml_str("[attack]\nm = 40\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("attack.m"), "{e}");
        let e = ExperimentConfig::from_toml_str("[detection]\nalpha = 2.0\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("detection.alpha"), "{e}");
    }

    #[test]
    fn sizes_follow_full_and_scale() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.sizes().test, 20_000);
        cfg.full = true;
        assert_eq!((cfg.sizes().train, cfg.sizes().test), (20_000, 80_000));
        cfg.full = false;
        cfg.scale = 0.25;
        assert_eq!(cfg.sizes().test, 5_000);
        assert_eq!(cfg.floor_slack(), 0.05);
    }

    #[test]
    fn seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "train"), derive_seed(1, "test"));
        assert_eq!(derive_seed(1, "train"), derive_seed(1, "train"));
    }
}
