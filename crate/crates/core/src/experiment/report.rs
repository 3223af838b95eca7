use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackMethod, AttackMode};
use crate::ddb::DdbMethod;
use crate::error::{Error, Result};

/// The sub-configuration that produced one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub ddb_method: DdbMethod,
    pub attack_method: AttackMethod,
    pub mode: AttackMode,
    pub m: usize,
    /// 1-based, `;`-separated.
    pub nodes: String,
    pub occurrence_ratio: f64,
    pub group_size: usize,
    pub alpha: f64,
    pub step_size: f64,
    pub pgd_steps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub point: usize,
    pub params: PointParams,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub sweep: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub scale: f64,
    pub full: bool,
    pub train_size: usize,
    pub test_size: usize,
    /// Subtracted from paper-anchored floors when the run is down-scaled.
    pub floor_slack: f64,
    /// Sweep-level statistics, e.g. rank correlations and model accuracies.
    pub summary: BTreeMap<String, f64>,
}

/// Wall-clock measurements; never part of the emitted report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub label: String,
    pub ms_per_iteration: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::config(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

const PARAM_COLUMNS: [&str; 12] = [
    "sweep",
    "point",
    "ddb_method",
    "attack_method",
    "mode",
    "m",
    "nodes",
    "occurrence_ratio",
    "group_size",
    "alpha",
    "step_size",
    "pgd_steps",
];

impl ExperimentReport {
    pub fn row(&self, point: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.point == point)
    }

    pub fn metric(&self, point: usize, name: &str) -> Option<f64> {
        self.row(point)?.metrics.get(name).copied()
    }

    /// Long format: one line per (point, metric), metadata in `#` lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let meta = &self.metadata;
        writeln!(w, "# sweep={}", meta.sweep)?;
        writeln!(w, "# config_hash={}", meta.config_hash)?;
        writeln!(w, "# seed={}", meta.seed)?;
        writeln!(w, "# version={}", meta.version)?;
        writeln!(
            w,
            "# scale={} full={} floor_slack={}",
            meta.scale, meta.full, meta.floor_slack
        )?;
        writeln!(w, "# train_size={} test_size={}", meta.train_size, meta.test_size)?;
        for (k, v) in &meta.summary {
            writeln!(w, "# summary {k}={v}")?;
        }
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = PARAM_COLUMNS.to_vec();
        header.extend(["metric", "value"]);
        wtr.write_record(&header)?;
        for row in &self.rows {
            let p = &row.params;
            for (name, value) in &row.metrics {
                wtr.write_record([
                    meta.sweep.clone(),
                    row.point.to_string(),
                    p.ddb_method.to_string(),
                    p.attack_method.to_string(),
                    mode_str(p.mode).to_string(),
                    p.m.to_string(),
                    p.nodes.clone(),
                    p.occurrence_ratio.to_string(),
                    p.group_size.to_string(),
                    p.alpha.to_string(),
                    p.step_size.to_string(),
                    p.pgd_steps.to_string(),
                    name.clone(),
                    value.to_string(),
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn to_bytes(&self, format: ReportFormat) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        match format {
            ReportFormat::Csv => self.write_csv(&mut buf)?,
            ReportFormat::Json => self.write_json(&mut buf)?,
        }
        Ok(buf)
    }
}

fn mode_str(m: AttackMode) -> &'static str {
    match m {
        AttackMode::WhiteBox => "white_box",
        AttackMode::Surrogate => "surrogate",
    }
}

/// Write `report` to `path`.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report.to_bytes(format)?)?;
    Ok(())
}

pub fn read_report_json<R: Read>(r: R) -> Result<ExperimentReport> {
    Ok(serde_json::from_reader(r)?)
}

/// Rows of a long-format CSV report, metadata lines skipped.
pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> = PARAM_COLUMNS.iter().copied().chain(["metric", "value"]).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::config("report CSV header does not match the schema"));
    }
    let bad = |what: &str| Error::config(format!("report CSV: bad {what}"));
    let mut rows: Vec<ReportRow> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or_default();
        let point: usize = f(1).parse().map_err(|_| bad("point"))?;
        let params = PointParams {
            ddb_method: f(2).parse()?,
            attack_method: f(3).parse()?,
            mode: match f(4) {
                "white_box" => AttackMode::WhiteBox,
                "surrogate" => AttackMode::Surrogate,
                _ => return Err(bad("mode")),
            },
            m: f(5).parse().map_err(|_| bad("m"))?,
            nodes: f(6).to_string(),
            occurrence_ratio: f(7).parse().map_err(|_| bad("occurrence_ratio"))?,
            group_size: f(8).parse().map_err(|_| bad("group_size"))?,
            alpha: f(9).parse().map_err(|_| bad("alpha"))?,
            step_size: f(10).parse().map_err(|_| bad("step_size"))?,
            pgd_steps: f(11).parse().map_err(|_| bad("pgd_steps"))?,
        };
        let value: f64 = f(13).parse().map_err(|_| bad("value"))?;
        match rows.last_mut() {
            Some(last) if last.point == point => {
                last.metrics.insert(f(12).to_string(), value);
            }
            _ => rows.push(ReportRow {
                point,
                params,
                metrics: BTreeMap::from([(f(12).to_string(), value)]),
            }),
        }
    }
    Ok(rows)
}
