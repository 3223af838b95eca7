//! Synthetic sensing data under the Gamma energy-detector model, CSV ingestion,
//! and moment estimation of the per-node scale parameters.
//!
//! Each node reports the average of `T` squared samples, so its power follows
//! `Gamma(shape = T, scale = β)` where `β` depends on whether a primary user
//! occupies the channel (label 0) or only noise is present (label 1).

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fusion decision / ground truth for one timeslot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    /// Primary user present; the channel must not be used.
    Unavailable = 0,
    /// Noise only; the channel is free.
    Available = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Unavailable),
            1 => Some(Label::Available),
            _ => None,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Unavailable => Label::Available,
            Label::Available => Label::Unavailable,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| format!("label must be 0 or 1, got {v}"))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Radio environment: per-node Gamma scales under both hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    sample_count: u32,
    scale_h0: Vec<f64>,
    scale_h1: Vec<f64>,
    occupancy_prior: f64,
}

impl ChannelScenario {
    pub fn new(sample_count: u32, scale_h0: Vec<f64>, scale_h1: Vec<f64>, occupancy_prior: f64) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InvalidScenario("sample count T must be positive".into()));
        }
        if scale_h0.is_empty() {
            return Err(Error::InvalidScenario("at least one node is required".into()));
        }
        if scale_h0.len() != scale_h1.len() {
            return Err(Error::InvalidScenario(format!(
                "scale vectors differ in length ({} vs {})",
                scale_h0.len(),
                scale_h1.len()
            )));
        }
        if let Some(j) = scale_h0
            .iter()
            .chain(&scale_h1)
            .position(|b| !(b.is_finite() && *b > 0.0))
        {
            return Err(Error::InvalidScenario(format!(
                "scale entry {j} is not a positive finite number"
            )));
        }
        if scale_h0.iter().zip(&scale_h1).all(|(a, b)| a == b) {
            return Err(Error::InvalidScenario(
                "scale_h0 equals scale_h1 on every node; hypotheses are indistinguishable".into(),
            ));
        }
        if !(0.0..=1.0).contains(&occupancy_prior) {
            return Err(Error::InvalidScenario(format!(
                "occupancy prior {occupancy_prior} outside [0, 1]"
            )));
        }
        Ok(Self {
            sample_count,
            scale_h0,
            scale_h1,
            occupancy_prior,
        })
    }

    /// Heterogeneous scenario: noise scale `β¹_j ~ U(noise_scale)`,
    /// `β⁰_j = β¹_j (1 + SNR_j)` with `SNR_j ~ U(snr)`, fixed by `spec.seed`.
    pub fn synthetic(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (nlo, nhi) = spec.noise_scale;
        let (slo, shi) = spec.snr;
        let mut h0 = Vec::with_capacity(spec.node_count);
        let mut h1 = Vec::with_capacity(spec.node_count);
        for _ in 0..spec.node_count {
            let noise = nlo + (nhi - nlo) * rng.random::<f64>();
            let snr = slo + (shi - slo) * rng.random::<f64>();
            h1.push(noise);
            h0.push(noise * (1.0 + snr));
        }
        Self::new(spec.sample_count, h0, h1, spec.occupancy_prior)
    }

    pub fn node_count(&self) -> usize {
        self.scale_h0.len()
    }

    pub fn sample_count(&self) -> u32 {
        self.sample_count
    }

    pub fn scale_h0(&self) -> &[f64] {
        &self.scale_h0
    }

    pub fn scale_h1(&self) -> &[f64] {
        &self.scale_h1
    }

    pub fn occupancy_prior(&self) -> f64 {
        self.occupancy_prior
    }

    pub fn scales(&self, label: Label) -> &[f64] {
        match label {
            Label::Unavailable => &self.scale_h0,
            Label::Available => &self.scale_h1,
        }
    }

    fn samplers(&self, label: Label) -> Vec<Gamma<f64>> {
        self.scales(label)
            .iter()
            .map(|&b| Gamma::new(self.sample_count as f64, b).expect("validated scale"))
            .collect()
    }

    /// One timeslot drawn under `label`.
    pub fn sample_timeslot<R: Rng + ?Sized>(&self, label: Label, timeslot: u64, rng: &mut R) -> SensingVector {
        let values = self.samplers(label).iter().map(|g| g.sample(rng)).collect();
        SensingVector {
            timeslot,
            values,
            label,
        }
    }
}

/// Parameters for [`ChannelScenario::synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub node_count: usize,
    pub sample_count: u32,
    pub noise_scale: (f64, f64),
    pub snr: (f64, f64),
    pub occupancy_prior: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            node_count: 20,
            sample_count: 8,
            noise_scale: (0.3, 0.7),
            snr: (0.2, 1.0),
            occupancy_prior: 0.5,
            seed: 2021,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.node_count == 0 {
            return bad("node_count must be positive".into());
        }
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        let (nlo, nhi) = self.noise_scale;
        if !(nlo > 0.0 && nhi >= nlo && nhi.is_finite()) {
            return bad(format!("noise_scale range ({nlo}, {nhi}) is invalid"));
        }
        let (slo, shi) = self.snr;
        if !(slo > 0.0 && shi >= slo && shi.is_finite()) {
            return bad(format!("snr range ({slo}, {shi}) must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&self.occupancy_prior) {
            return bad(format!("occupancy_prior {} outside [0, 1]", self.occupancy_prior));
        }
        Ok(())
    }
}

/// One timeslot's per-node average power report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingVector {
    pub timeslot: u64,
    pub values: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    scenario: Option<ChannelScenario>,
    records: Vec<SensingVector>,
    seed: Option<u64>,
}

impl Dataset {
    /// `count` timeslots with labels drawn `Bernoulli(occupancy_prior)` for
    /// label 0. Pure in `(scenario, count, seed)`.
    pub fn generate(scenario: &ChannelScenario, count: usize, seed: u64) -> Result<Self> {
        Self::generate_from(scenario, count, seed, 0)
    }

    /// As [`Dataset::generate`], numbering timeslots from `first_timeslot`.
    pub fn generate_from(scenario: &ChannelScenario, count: usize, seed: u64, first_timeslot: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidDataset("record count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = scenario.samplers(Label::Unavailable);
        let h1 = scenario.samplers(Label::Available);
        let records = (0..count as u64)
            .map(|i| {
                let label = if rng.random::<f64>() < scenario.occupancy_prior {
                    Label::Unavailable
                } else {
                    Label::Available
                };
                let samplers = match label {
                    Label::Unavailable => &h0,
                    Label::Available => &h1,
                };
                SensingVector {
                    timeslot: first_timeslot + i,
                    values: samplers.iter().map(|g| g.sample(&mut rng)).collect(),
                    label,
                }
            })
            .collect();
        Ok(Self {
            scenario: Some(scenario.clone()),
            records,
            seed: Some(seed),
        })
    }

    /// Validates timeslot ordering, dimension, and non-negativity.
    pub fn from_records(
        records: Vec<SensingVector>,
        scenario: Option<ChannelScenario>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::InvalidDataset("dataset has no records".into()));
        };
        let n = scenario
            .as_ref()
            .map_or(first.values.len(), ChannelScenario::node_count);
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "record {i} has {} values, expected {n}",
                    r.values.len()
                )));
            }
            if let Some(v) = r.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidDataset(format!("record {i} has invalid power value {v}")));
            }
            if i > 0 && r.timeslot <= records[i - 1].timeslot {
                return Err(Error::InvalidDataset(format!(
                    "timeslots not strictly increasing at record {i}"
                )));
            }
        }
        Ok(Self {
            scenario,
            records,
            seed,
        })
    }

    pub fn scenario(&self) -> Option<&ChannelScenario> {
        self.scenario.as_ref()
    }

    pub fn records(&self) -> &[SensingVector] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SensingVector> {
        self.records
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.records[0].values.len()
    }

    pub fn label_count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Per-feature `(min, max)` over all records.
    pub fn feature_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.node_count();
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for r in &self.records {
            for (j, &v) in r.values.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        (lo, hi)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_csv(File::open(path)?, path)
    }

    /// Parses `node_1,...,node_n,label`. `origin` only labels errors.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let schema = |message: String| Error::Schema {
            path: origin.to_path_buf(),
            message,
        };
        let headers = rdr.headers()?.clone();
        let ncols = headers.len();
        if ncols < 2 {
            return Err(schema("need at least one node column and a label column".into()));
        }
        for (k, h) in headers.iter().take(ncols - 1).enumerate() {
            if h != format!("node_{}", k + 1) {
                return Err(schema(format!("column {} must be node_{}, found {h:?}", k + 1, k + 1)));
            }
        }
        if &headers[ncols - 1] != "label" {
            return Err(schema(format!(
                "last column must be label, found {:?}",
                &headers[ncols - 1]
            )));
        }

        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = row.position().map_or(i as u64 + 2, |p| p.line());
            let parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line,
                message,
            };
            if row.len() != ncols {
                return Err(schema(format!(
                    "line {line}: expected {ncols} columns, found {}",
                    row.len()
                )));
            }
            let mut values = Vec::with_capacity(ncols - 1);
            for (k, field) in row.iter().take(ncols - 1).enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("node_{}: cannot parse {field:?}", k + 1)))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(parse_err(format!(
                        "node_{}: power must be finite and non-negative, got {v}",
                        k + 1
                    )));
                }
                values.push(v);
            }
            let label = match &row[ncols - 1] {
                "0" => Label::Unavailable,
                "1" => Label::Available,
                other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
            };
            records.push(SensingVector {
                timeslot: i as u64,
                values,
                label,
            });
        }
        if records.is_empty() {
            return Err(schema("file contains no data rows".into()));
        }
        Ok(Self {
            scenario: None,
            records,
            seed: None,
        })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        self.write_csv_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let n = self.node_count();
        let mut header: Vec<String> = (1..=n).map(|j| format!("node_{j}")).collect();
        header.push("label".into());
        wtr.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            row.push(r.label.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Moment estimates of the per-node scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimates {
    pub scale_h0: Vec<f64>,
    pub scale_h1: Vec<f64>,
}

/// `β̂_j^c = mean_{label = c}(x_j) / T`.
pub fn estimate_scale_params(dataset: &Dataset, sample_count: u32) -> Result<ScaleEstimates> {
    if sample_count == 0 {
        return Err(Error::Estimation("sample count T must be positive".into()));
    }
    let n = dataset.node_count();
    let t = sample_count as f64;
    let estimate = |label: Label| -> Result<Vec<f64>> {
        let mut sum = vec![0.0; n];
        let mut count = 0usize;
        for r in dataset.records().iter().filter(|r| r.label == label) {
            for (s, v) in sum.iter_mut().zip(&r.values) {
                *s += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Estimation(format!("no records with label {label}")));
        }
        sum.iter()
            .enumerate()
            .map(|(j, s)| {
                let mean = s / count as f64;
                if mean > 0.0 {
                    Ok(mean / t)
                } else {
                    Err(Error::Estimation(format!(
                        "node {} has zero mean power under label {label}",
                        j + 1
                    )))
                }
            })
            .collect()
    };
    Ok(ScaleEstimates {
        scale_h0: estimate(Label::Unavailable)?,
        scale_h1: estimate(Label::Available)?,
    })
}
