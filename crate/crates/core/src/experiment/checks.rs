//! Trend and floor assertions on sweep reports, used by `--assert`.

use serde::Serialize;

use crate::ddb::DdbMethod;

use super::report::{ExperimentReport, ReportRow};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// True if `xs` is non-decreasing except for at most one drop of at most
/// `tol`.
pub fn monotone_with_one_inversion(xs: &[f64], tol: f64) -> bool {
    let drops: Vec<f64> = xs.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    drops.is_empty() || (drops.len() == 1 && drops[0] <= tol)
}

fn rate(r: &ReportRow, name: &str) -> f64 {
    r.metrics.get(name).copied().unwrap_or(f64::NAN)
}

fn find(rep: &ExperimentReport, f: impl Fn(&ReportRow) -> bool) -> Option<&ReportRow> {
    rep.rows.iter().find(|r| f(r))
}

fn floor(rep: &ExperimentReport, name: &str, row: Option<&ReportRow>, metric: &str, min: f64) -> Option<Check> {
    let r = row?;
    let v = rate(r, metric);
    let min = min - rep.metadata.floor_slack;
    Some(check(name, v >= min, format!("{metric} = {v:.4}, floor {min:.4}")))
}

fn ceiling(name: &str, row: Option<&ReportRow>, metric: &str, max: f64) -> Option<Check> {
    let r = row?;
    let v = rate(r, metric);
    Some(check(name, v <= max, format!("{metric} = {v:.4}, ceiling {max:.4}")))
}

/// Assertions for the sweep named in the report's metadata.
pub fn check_report(rep: &ExperimentReport) -> Vec<Check> {
    let mut out: Vec<Option<Check>> = Vec::new();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    match rep.metadata.sweep.as_str() {
        "pipeline" => {
            let r = rep.rows.first();
            out.push(floor(rep, "detection floor", r, "detection_rate", 0.90));
            out.push(ceiling("false alarm ceiling", r, "false_alarm_rate", 0.02));
        }
        "group_size" => {
            for r in &rep.rows {
                out.push(ceiling(
                    &format!("false alarm, size {}", r.params.group_size),
                    Some(r),
                    "false_alarm_rate",
                    0.02,
                ));
            }
            let at = |s: usize| find(rep, |r| r.params.group_size == s);
            if let (Some(a), Some(b)) = (at(10), at(400)) {
                let (x, y) = (rate(a, "detection_rate"), rate(b, "detection_rate"));
                out.push(Some(check(
                    "power grows with group size",
                    y >= x - 0.02,
                    format!("{y:.4} vs {x:.4}"),
                )));
            }
            if at(50).is_some_and(|r| close(r.params.occurrence_ratio, 1.0)) {
                out.push(floor(rep, "size 50 detection", at(50), "detection_rate", 0.95));
            }
        }
        "occurrence" => {
            let mut sizes: Vec<usize> = rep.rows.iter().map(|r| r.params.group_size).collect();
            sizes.sort_unstable();
            sizes.dedup();
            for s in &sizes {
                let series: Vec<f64> = rep
                    .rows
                    .iter()
                    .filter(|r| r.params.group_size == *s)
                    .map(|r| rate(r, "detection_rate"))
                    .collect();
                out.push(Some(check(
                    &format!("monotone in ratio, size {s}"),
                    monotone_with_one_inversion(&series, 0.02),
                    format!("{series:.3?}"),
                )));
            }
            let cell =
                |s: usize, q: f64| find(rep, |r| r.params.group_size == s && close(r.params.occurrence_ratio, q));
            out.push(floor(rep, "size 200, ratio 0.4", cell(200, 0.4), "detection_rate", 0.9));
            out.push(floor(rep, "size 200, ratio 0.3", cell(200, 0.3), "detection_rate", 0.8));
            out.push(ceiling("size 10, ratio 0.1", cell(10, 0.1), "detection_rate", 0.1));
            out.push(ceiling("size 200, ratio 0.1", cell(200, 0.1), "detection_rate", 0.15));
        }
        "malicious_count" => {
            let series: Vec<f64> = rep.rows.iter().map(|r| rate(r, "detection_rate")).collect();
            let ok = series.windows(2).all(|w| w[1] >= w[0] - 0.03);
            out.push(Some(check("non-decreasing in m", ok, format!("{series:.3?}"))));
            out.push(floor(
                rep,
                "m = 3",
                find(rep, |r| r.params.m == 3),
                "detection_rate",
                0.6,
            ));
            out.push(floor(
                rep,
                "m = 10",
                find(rep, |r| r.params.m == 10),
                "detection_rate",
                0.9,
            ));
        }
        "method_comparison" => {
            let by = |m: DdbMethod| find(rep, |r| r.params.ddb_method == m);
            if let Some(lrt) = by(DdbMethod::LrtBinarySearch) {
                let c = rate(lrt, "iter_cdf15");
                out.push(Some(check("LRT within 15 iterations", c >= 0.99, format!("{c:.4}"))));
                let g = rate(lrt, "gradient_calls_per_iteration");
                out.push(Some(check("LRT uses no gradients", g == 0.0, format!("{g}"))));
                if let Some(df) = by(DdbMethod::DeepFool) {
                    let (a, b) = (rate(lrt, "iter_var"), rate(df, "iter_var"));
                    out.push(Some(check(
                        "LRT variance below DeepFool",
                        a < b,
                        format!("{a:.4} vs {b:.4}"),
                    )));
                }
            }
            for m in [DdbMethod::DeepFool, DdbMethod::Cw, DdbMethod::Lbfgs] {
                if let Some(r) = by(m) {
                    let g = rate(r, "gradient_calls_per_iteration");
                    out.push(Some(check(&format!("{m} uses gradients"), g >= 1.0, format!("{g:.3}"))));
                }
            }
        }
        "attack_method" => {
            for r in &rep.rows {
                let min = if r.params.attack_method == crate::attack::AttackMethod::Fgsm {
                    0.9
                } else {
                    0.7
                };
                out.push(floor(
                    rep,
                    &format!("{} detection", r.params.attack_method),
                    Some(r),
                    "detection_rate",
                    min,
                ));
            }
        }
        "location" => {
            let rho = rep.metadata.summary.get("spearman_success_detection").copied();
            out.push(Some(check(
                "success and detection rank-correlated",
                rho.is_some_and(|v| v > 0.0),
                format!("{rho:?}"),
            )));
        }
        "alpha" => {
            let fa: Vec<f64> = rep.rows.iter().map(|r| rate(r, "false_alarm_rate")).collect();
            let det: Vec<f64> = rep.rows.iter().map(|r| rate(r, "detection_rate")).collect();
            out.push(Some(check(
                "false alarm non-decreasing in alpha",
                fa.windows(2).all(|w| w[1] >= w[0]),
                format!("{fa:.4?}"),
            )));
            out.push(Some(check(
                "detection non-decreasing in alpha",
                det.windows(2).all(|w| w[1] >= w[0]),
                format!("{det:.4?}"),
            )));
            let at = |a: f64| find(rep, |r| close(r.params.alpha, a));
            out.push(floor(rep, "alpha 0.01 detection", at(0.01), "detection_rate", 0.9));
            out.push(ceiling("alpha 0.01 false alarm", at(0.01), "false_alarm_rate", 0.02));
            out.push(ceiling("alpha 0.001 false alarm", at(0.001), "false_alarm_rate", 0.005));
        }
        _ => {}
    }
    out.into_iter().flatten().collect()
}
