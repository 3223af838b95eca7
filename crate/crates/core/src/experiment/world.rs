//! Shared state of one experiment: data streams, fusion model, surrogate and
//! cached DDBs of the unattacked streams.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::attack::{
    agreement, attack_one, is_attacked, observe_decisions, train_surrogate, AttackConfig, AttackMode, AttackerKnowledge,
};
use crate::classifier::{dataset_accuracy, train, FusionClassifier, TrainConfig, TrainReport};
use crate::ddb::{compute_ddb_set, lrt_direction, BoundaryDirection, DdbMethod, DdbSet, InputBox, SearchConfig};
use crate::error::{Error, Result};
use crate::ks::{flag_rate, stream_detect, DdbBaseline};
use crate::scenario::{estimate_scale_params, ChannelScenario, Dataset, SensingVector};

use super::config::{derive_seed, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Train,
    Test,
    Clean,
}

/// DDBs of one (possibly attacked) test stream.
#[derive(Debug, Clone, Serialize)]
pub struct StreamEval {
    /// Converged distances in timeslot order.
    pub distances: Vec<f64>,
    pub iterations: Vec<u32>,
    pub attacked: usize,
    pub successes: usize,
    pub nonconverged: usize,
    pub mean_perturbation: f64,
}

impl StreamEval {
    pub fn success_rate(&self) -> f64 {
        if self.attacked == 0 {
            0.0
        } else {
            self.successes as f64 / self.attacked as f64
        }
    }
}

pub struct World {
    pub config: ExperimentConfig,
    pub scenario: ChannelScenario,
    pub train: Dataset,
    pub model: FusionClassifier,
    pub train_report: TrainReport,
    pub test_accuracy: f64,
    pub direction: BoundaryDirection,
    pub search: SearchConfig,
    pub surrogate: Option<FusionClassifier>,
    pub surrogate_agreement: Option<f64>,
    pub test: Vec<SensingVector>,
    pub clean: Vec<SensingVector>,
    cache: Mutex<HashMap<(DdbMethod, Stream), Arc<DdbSet>>>,
}

fn streams(
    scenario: &ChannelScenario,
    cfg: &ExperimentConfig,
    label: &str,
    first: u64,
    len: usize,
) -> Result<Vec<SensingVector>> {
    let mut out = Vec::with_capacity(len * cfg.trials as usize);
    for t in 0..cfg.trials {
        let seed = derive_seed(cfg.seed, &format!("{label}/{t}"));
        let start = first + t as u64 * len as u64;
        out.extend(Dataset::generate_from(scenario, len, seed, start)?.into_records());
    }
    Ok(out)
}

impl World {
    /// Generate data, train the fusion model and (in surrogate mode) the
    /// attacker's model.
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let sizes = config.sizes();
        let scenario = ChannelScenario::synthetic(&config.scenario)?;

        let train_set = Dataset::generate(&scenario, sizes.train, derive_seed(config.seed, "train"))?;
        let training = TrainConfig {
            seed: derive_seed(config.seed, "fusion-init"),
            ..config.training.clone()
        };
        let (model, train_report) = train(&train_set, &training)?;

        let est = estimate_scale_params(&train_set, scenario.sample_count())?;
        let direction = lrt_direction(
            &est.scale_h0,
            &est.scale_h1,
            scenario.sample_count(),
            config.detection.lrt_threshold,
        )?;
        let mut search = config.search.clone();
        if search.input_box.is_none() {
            search.input_box = Some(InputBox::from_dataset(&train_set, 0.2)?);
        }

        // Timeslots: train from 0, then test, clean and attacker observations
        // in disjoint ranges.
        let span = (sizes.test * config.trials as usize) as u64;
        let base = sizes.train as u64;
        let test = streams(&scenario, config, "test", base, sizes.test)?;
        let clean = streams(&scenario, config, "clean", base + span, sizes.test)?;
        let held_out = Dataset::from_records(test.clone(), Some(scenario.clone()), None)?;
        let test_accuracy = dataset_accuracy(&model, &held_out)?;

        let (surrogate, surrogate_agreement) = match config.attack.mode {
            AttackMode::WhiteBox => (None, None),
            AttackMode::Surrogate => {
                let seen = Dataset::generate_from(
                    &scenario,
                    sizes.surrogate,
                    derive_seed(config.seed, "surrogate-observations"),
                    base + 2 * span,
                )?;
                let observed = observe_decisions(&model, seen.records())?;
                let pairs: Vec<(&[f64], _)> = observed.iter().map(|(x, l)| (x.as_slice(), *l)).collect();
                let s_cfg = TrainConfig {
                    seed: derive_seed(config.seed, "surrogate-init"),
                    ..config.training.clone()
                };
                let s = train_surrogate(&pairs, &s_cfg)?;
                let agree = agreement(&model, &s, test.iter().map(|r| r.values.as_slice()))?;
                (Some(s), Some(agree))
            }
        };

        Ok(Self {
            config: config.clone(),
            scenario,
            train: train_set,
            model,
            train_report,
            test_accuracy,
            direction,
            search,
            surrogate,
            surrogate_agreement,
            test,
            clean,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn records(&self, stream: Stream) -> &[SensingVector] {
        match stream {
            Stream::Train => self.train.records(),
            Stream::Test => &self.test,
            Stream::Clean => &self.clean,
        }
    }

    /// DDBs of an unattacked stream, computed once per method.
    pub fn ddbs(&self, method: DdbMethod, stream: Stream) -> Result<Arc<DdbSet>> {
        if let Some(s) = self.cache.lock().expect("cache lock").get(&(method, stream)) {
            return Ok(Arc::clone(s));
        }
        let set = Arc::new(self.ddb_set(self.records(stream), method)?);
        self.cache
            .lock()
            .expect("cache lock")
            .insert((method, stream), Arc::clone(&set));
        Ok(set)
    }

    pub fn ddb_set(&self, records: &[SensingVector], method: DdbMethod) -> Result<DdbSet> {
        compute_ddb_set(&self.model, records, method, Some(&self.direction), &self.search)
    }

    pub fn baseline(&self, method: DdbMethod) -> Result<DdbBaseline> {
        DdbBaseline::new(&self.ddbs(method, Stream::Train)?.distances())
    }

    /// Attacker with the given zero-based nodes, in the configured mode.
    pub fn knowledge(&self, controlled: &[usize]) -> Result<AttackerKnowledge> {
        AttackerKnowledge::new(
            self.scenario.node_count(),
            controlled,
            self.config.attack.mode,
            self.surrogate.clone(),
        )
    }

    /// Attack the test stream and compute DDBs. Unattacked timeslots reuse
    /// the cached clean-test DDBs.
    pub fn attacked_eval(
        &self,
        method: DdbMethod,
        knowledge: &AttackerKnowledge,
        attack: &AttackConfig,
    ) -> Result<StreamEval> {
        attack.validate()?;
        let base = self.ddbs(method, Stream::Test)?;
        let hit: Vec<usize> = (0..self.test.len())
            .filter(|&i| is_attacked(attack.seed, self.test[i].timeslot, attack.occurrence_ratio))
            .collect();
        let attack_at = |&i: &usize| attack_one(&self.model, knowledge, &self.test[i], attack, &self.search);
        #[cfg(feature = "parallel")]
        let outcomes: Vec<_> = {
            use rayon::prelude::*;
            hit.par_iter().map(attack_at).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let outcomes: Vec<_> = hit.iter().map(attack_at).collect::<Result<_>>()?;

        let perturbed: Vec<SensingVector> = outcomes.iter().map(|o| o.perturbed.clone()).collect();
        let attacked_ddbs = self.ddb_set(&perturbed, method)?;
        let mut results = base.results.clone();
        for (&i, r) in hit.iter().zip(attacked_ddbs.results) {
            results[i] = r;
        }
        let ok = |r: &&crate::ddb::DdbResult| r.converged && r.distance.is_finite();
        let successes = outcomes.iter().filter(|o| o.success).count();
        let mean_perturbation = if outcomes.is_empty() {
            0.0
        } else {
            outcomes.iter().map(|o| o.perturbation_norm).sum::<f64>() / outcomes.len() as f64
        };
        Ok(StreamEval {
            distances: results.iter().filter(ok).map(|r| r.distance).collect(),
            iterations: results.iter().map(|r| r.iterations).collect(),
            attacked: hit.len(),
            successes,
            nonconverged: results.iter().filter(|r| !ok(r)).count(),
            mean_perturbation,
        })
    }

    /// Flag rate over non-overlapping groups of `distances`.
    pub fn flag_rate(
        &self,
        baseline: &DdbBaseline,
        distances: &[f64],
        group_size: usize,
        alpha: f64,
    ) -> Result<(f64, usize)> {
        let d = stream_detect(baseline, distances, group_size, alpha)?;
        if d.is_empty() {
            return Err(Error::KsTest(format!(
                "stream of {} distances yields no group of size {group_size}",
                distances.len()
            )));
        }
        Ok((flag_rate(&d), d.len()))
    }
}
