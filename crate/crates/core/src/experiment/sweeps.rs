use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{AttackConfig, AttackMethod};
use crate::classifier::CountingModel;
use crate::ddb::{compute_ddb_set, DdbMethod};
use crate::error::{Error, Result};
use crate::ks::DdbBaseline;

use super::config::{derive_seed, ExperimentConfig};
use super::report::{ExperimentReport, PointParams, ReportMetadata, ReportRow, Timing};
use super::stats::{iteration_metrics, spearman};
use super::world::{Stream, StreamEval, World};

/// Names accepted by [`run_sweep`].
pub const SWEEPS: [&str; 8] = [
    "pipeline",
    "group_size",
    "occurrence",
    "malicious_count",
    "method_comparison",
    "attack_method",
    "location",
    "alpha",
];

/// Build the world for `config` and run the named sweep.
pub fn run_named(config: &ExperimentConfig, name: &str) -> Result<ExperimentReport> {
    if !SWEEPS.contains(&name) {
        return Err(Error::config(format!(
            "unknown sweep {name:?}; expected one of {}",
            SWEEPS.join(", ")
        )));
    }
    let world = World::build(config)?;
    run_sweep(&world, name)
}

pub fn run_sweep(world: &World, name: &str) -> Result<ExperimentReport> {
    let s = &world.config.sweeps;
    match name {
        "pipeline" => pipeline(world),
        "group_size" => run_group_size_sweep(world, &s.group_sizes),
        "occurrence" => run_occurrence_sweep(world, &s.ratios, &s.occurrence_sizes),
        "malicious_count" => run_malicious_count_sweep(world, &s.m_values),
        "method_comparison" => run_method_comparison(world),
        "attack_method" => run_attack_method_sweep(world, &s.attack_methods),
        "location" => {
            let sets = location_sets(world)?;
            run_location_sweep(world, &sets)
        }
        "alpha" => run_alpha_sweep(world, &s.alphas),
        other => Err(Error::config(format!("unknown sweep {other:?}"))),
    }
}

/// Default point: train, baseline, attack, DDB, detect, metrics.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<ExperimentReport> {
    pipeline(&World::build(config)?)
}

fn pipeline(world: &World) -> Result<ExperimentReport> {
    let d = &world.config.detection;
    let mut ctx = Ctx::new(world, "pipeline")?;
    let nodes = world.config.attack.controlled();
    let attack = ctx.attack(
        world.config.attack.method,
        nodes.len(),
        world.config.attack.occurrence_ratio,
    );
    let eval = ctx.eval(&nodes, &attack)?;
    ctx.detection_row(&nodes, &attack, &eval, d.group_size, d.alpha)?;
    Ok(ctx.finish())
}

pub fn run_group_size_sweep(world: &World, sizes: &[usize]) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "group_size")?;
    let nodes = world.config.attack.controlled();
    let attack = ctx.attack(
        world.config.attack.method,
        nodes.len(),
        world.config.attack.occurrence_ratio,
    );
    let eval = ctx.eval(&nodes, &attack)?;
    for &size in sizes {
        ctx.detection_row(&nodes, &attack, &eval, size, world.config.detection.alpha)?;
    }
    Ok(ctx.finish())
}

pub fn run_occurrence_sweep(world: &World, ratios: &[f64], sizes: &[usize]) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "occurrence")?;
    let nodes = world.config.attack.controlled();
    for &ratio in ratios {
        let attack = ctx.attack(world.config.attack.method, nodes.len(), ratio);
        let eval = ctx.eval(&nodes, &attack)?;
        for &size in sizes {
            ctx.detection_row(&nodes, &attack, &eval, size, world.config.detection.alpha)?;
        }
    }
    Ok(ctx.finish())
}

/// Nodes `1..=m` for each `m`.
pub fn run_malicious_count_sweep(world: &World, m_values: &[usize]) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "malicious_count")?;
    let d = &world.config.detection;
    for &m in m_values {
        let nodes: Vec<usize> = (0..m).collect();
        let attack = ctx.attack(world.config.attack.method, m, world.config.attack.occurrence_ratio);
        let eval = ctx.eval(&nodes, &attack)?;
        ctx.detection_row(&nodes, &attack, &eval, d.group_size, d.alpha)?;
    }
    Ok(ctx.finish())
}

pub fn run_attack_method_sweep(world: &World, methods: &[AttackMethod]) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "attack_method")?;
    let d = &world.config.detection;
    let nodes = world.config.attack.controlled();
    for &method in methods {
        let attack = ctx.attack(method, nodes.len(), world.config.attack.occurrence_ratio);
        let eval = ctx.eval(&nodes, &attack)?;
        ctx.detection_row(&nodes, &attack, &eval, d.group_size, d.alpha)?;
    }
    Ok(ctx.finish())
}

/// Seed-chosen disjoint node sets, or the configured ones (zero-based).
pub fn location_sets(world: &World) -> Result<Vec<Vec<usize>>> {
    let s = &world.config.sweeps;
    let n = world.scenario.node_count();
    if let Some(sets) = &s.location_sets {
        if sets.iter().flatten().any(|&j| j == 0 || j > n) {
            return Err(Error::config(format!(
                "sweeps.location_sets: indices must lie in 1..={n}"
            )));
        }
        return Ok(sets.iter().map(|set| set.iter().map(|j| j - 1).collect()).collect());
    }
    if s.location_set_count * s.location_set_size > n || s.location_set_size == 0 {
        return Err(Error::config(format!(
            "sweeps: {} disjoint sets of {} do not fit in {n} nodes",
            s.location_set_count, s.location_set_size
        )));
    }
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        world.config.seed,
        "location",
    )));
    Ok(nodes
        .chunks_exact(s.location_set_size)
        .take(s.location_set_count)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect())
}

/// One row per zero-based node set. The sets must be pairwise disjoint.
pub fn run_location_sweep(world: &World, sets: &[Vec<usize>]) -> Result<ExperimentReport> {
    let mut seen = BTreeSet::new();
    for set in sets {
        for &j in set {
            if !seen.insert(j) {
                return Err(Error::config(format!("location sets overlap at node {}", j + 1)));
            }
        }
    }
    let mut ctx = Ctx::new(world, "location")?;
    let d = &world.config.detection;
    let (mut success, mut detection) = (Vec::new(), Vec::new());
    for nodes in sets {
        let attack = ctx.attack(
            world.config.attack.method,
            nodes.len(),
            world.config.attack.occurrence_ratio,
        );
        let eval = ctx.eval(nodes, &attack)?;
        let row = ctx.detection_row(nodes, &attack, &eval, d.group_size, d.alpha)?;
        success.push(row.metrics["attack_success_rate"]);
        detection.push(row.metrics["detection_rate"]);
    }
    if let Some(rho) = spearman(&success, &detection) {
        ctx.summary.insert("spearman_success_detection".into(), rho);
    }
    Ok(ctx.finish())
}

pub fn run_alpha_sweep(world: &World, alphas: &[f64]) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "alpha")?;
    let nodes = world.config.attack.controlled();
    let attack = ctx.attack(
        world.config.attack.method,
        nodes.len(),
        world.config.attack.occurrence_ratio,
    );
    let eval = ctx.eval(&nodes, &attack)?;
    for &alpha in alphas {
        ctx.detection_row(&nodes, &attack, &eval, world.config.detection.group_size, alpha)?;
    }
    Ok(ctx.finish())
}

/// Iteration distributions and call counts of every DDB method on the first
/// `comparison_samples` clean test vectors.
pub fn run_method_comparison(world: &World) -> Result<ExperimentReport> {
    let mut ctx = Ctx::new(world, "method_comparison")?;
    let count = world.config.sweeps.comparison_samples.min(world.test.len());
    let records = &world.test[..count];
    let nodes = world.config.attack.controlled();
    let attack = ctx.attack(world.config.attack.method, nodes.len(), 0.0);
    for method in DdbMethod::ALL {
        let counted = CountingModel::new(&world.model);
        let start = Instant::now();
        let set = compute_ddb_set(&counted, records, method, Some(&world.direction), &world.search)?;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let iterations: Vec<u32> = set.results.iter().map(|r| r.iterations).collect();
        let total_iter: u64 = iterations.iter().map(|&i| i as u64).sum();
        let per_iter = |calls: u64| {
            if total_iter == 0 {
                0.0
            } else {
                calls as f64 / total_iter as f64
            }
        };
        let mut metrics = BTreeMap::new();
        iteration_metrics(&iterations, "", &mut metrics);
        let distances = set.distances();
        metrics.insert("samples".into(), count as f64);
        metrics.insert("nonconverged".into(), set.excluded as f64);
        metrics.insert("forward_calls_per_iteration".into(), per_iter(counted.forward_calls()));
        metrics.insert(
            "gradient_calls_per_iteration".into(),
            per_iter(counted.gradient_calls()),
        );
        metrics.insert(
            "mean_distance".into(),
            if distances.is_empty() {
                0.0
            } else {
                distances.iter().sum::<f64>() / distances.len() as f64
            },
        );
        ctx.timings.push(Timing {
            label: method.to_string(),
            ms_per_iteration: if total_iter == 0 {
                0.0
            } else {
                elapsed / total_iter as f64
            },
            total_ms: elapsed,
        });
        let mut params = ctx.params(
            &nodes,
            &attack,
            world.config.detection.group_size,
            world.config.detection.alpha,
        );
        params.ddb_method = method;
        ctx.push(params, metrics);
    }
    Ok(ctx.finish())
}

struct Ctx<'w> {
    world: &'w World,
    sweep: &'static str,
    baseline: DdbBaseline,
    clean: Vec<f64>,
    clean_nonconverged: usize,
    schedule_seed: u64,
    rows: Vec<ReportRow>,
    summary: BTreeMap<String, f64>,
    timings: Vec<Timing>,
}

impl<'w> Ctx<'w> {
    fn new(world: &'w World, sweep: &'static str) -> Result<Self> {
        let method = world.config.detection.ddb_method;
        let (baseline, clean, clean_nonconverged) = if sweep == "method_comparison" {
            (DdbBaseline::new(&[0.0, 0.0])?, Vec::new(), 0)
        } else {
            let clean = world.ddbs(method, Stream::Clean)?;
            (world.baseline(method)?, clean.distances(), clean.excluded)
        };
        let mut summary = BTreeMap::new();
        summary.insert("fusion_train_accuracy".into(), world.train_report.train_accuracy);
        summary.insert("fusion_test_accuracy".into(), world.test_accuracy);
        if let Some(a) = world.surrogate_agreement {
            summary.insert("surrogate_agreement".into(), a);
        }
        if sweep != "method_comparison" {
            summary.insert("baseline_size".into(), baseline.len() as f64);
        }
        Ok(Self {
            world,
            sweep,
            baseline,
            clean,
            clean_nonconverged,
            // one schedule for every point: attacked sets are nested in the ratio
            schedule_seed: derive_seed(world.config.seed, "schedule"),
            rows: Vec::new(),
            summary,
            timings: Vec::new(),
        })
    }

    /// PGD spreads the FGSM ℓ2 budget `step·√m` over its steps.
    fn attack(&self, method: AttackMethod, m: usize, ratio: f64) -> AttackConfig {
        let a = &self.world.config.attack;
        let mut cfg = a.attack_config(self.schedule_seed);
        cfg.method = method;
        cfg.occurrence_ratio = ratio;
        if method == AttackMethod::Pgd {
            cfg.step_size = a.step_size * (m as f64).sqrt() / a.pgd_steps as f64;
        }
        cfg
    }

    fn eval(&self, nodes: &[usize], attack: &AttackConfig) -> Result<StreamEval> {
        let knowledge = self.world.knowledge(nodes)?;
        self.world
            .attacked_eval(self.world.config.detection.ddb_method, &knowledge, attack)
    }

    fn params(&self, nodes: &[usize], attack: &AttackConfig, group_size: usize, alpha: f64) -> PointParams {
        PointParams {
            ddb_method: self.world.config.detection.ddb_method,
            attack_method: attack.method,
            mode: self.world.config.attack.mode,
            m: nodes.len(),
            nodes: nodes.iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(";"),
            occurrence_ratio: attack.occurrence_ratio,
            group_size,
            alpha,
            step_size: attack.step_size,
            pgd_steps: attack.pgd_steps,
        }
    }

    fn push(&mut self, params: PointParams, metrics: BTreeMap<String, f64>) -> &ReportRow {
        let point = self.rows.len();
        self.rows.push(ReportRow { point, params, metrics });
        self.rows.last().expect("just pushed")
    }

    fn detection_row(
        &mut self,
        nodes: &[usize],
        attack: &AttackConfig,
        eval: &StreamEval,
        group_size: usize,
        alpha: f64,
    ) -> Result<&ReportRow> {
        let (false_alarm, clean_groups) = self.world.flag_rate(&self.baseline, &self.clean, group_size, alpha)?;
        // without attacks the monitored stream is the clean stream
        let (detection, groups) = if attack.occurrence_ratio == 0.0 {
            (false_alarm, clean_groups)
        } else {
            self.world
                .flag_rate(&self.baseline, &eval.distances, group_size, alpha)?
        };
        let mut m = BTreeMap::new();
        m.insert("detection_rate".into(), detection);
        m.insert("false_alarm_rate".into(), false_alarm);
        m.insert("attack_success_rate".into(), eval.success_rate());
        m.insert("attacked".into(), eval.attacked as f64);
        m.insert("successes".into(), eval.successes as f64);
        m.insert("groups".into(), groups as f64);
        m.insert("clean_groups".into(), clean_groups as f64);
        m.insert("nonconverged".into(), eval.nonconverged as f64);
        m.insert("clean_nonconverged".into(), self.clean_nonconverged as f64);
        m.insert("mean_perturbation".into(), eval.mean_perturbation);
        iteration_metrics(&eval.iterations, "", &mut m);
        let params = self.params(nodes, attack, group_size, alpha);
        Ok(self.push(params, m))
    }

    fn finish(self) -> ExperimentReport {
        let cfg = &self.world.config;
        let sizes = cfg.sizes();
        ExperimentReport {
            metadata: ReportMetadata {
                sweep: self.sweep.to_string(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                scale: cfg.scale,
                full: cfg.full,
                train_size: sizes.train,
                test_size: sizes.test * cfg.trials as usize,
                floor_slack: cfg.floor_slack(),
                summary: self.summary,
            },
            rows: self.rows,
            timings: self.timings,
        }
    }
}
