//! Two-sample Kolmogorov-Smirnov test of test-time DDBs against the
//! training DDB distribution.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted training DDBs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdbBaseline {
    distances: Vec<f64>,
}

impl DdbBaseline {
    pub fn new(distances: &[f64]) -> Result<Self> {
        if distances.len() < 2 {
            return Err(Error::KsTest(format!(
                "baseline needs at least 2 distances, got {}",
                distances.len()
            )));
        }
        if distances.iter().any(|d| !d.is_finite()) {
            return Err(Error::KsTest("baseline distances must be finite".into()));
        }
        let mut distances = distances.to_vec();
        distances.sort_by(f64::total_cmp);
        Ok(Self { distances })
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// `a_1`.
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsDecision {
    pub d_ks: f64,
    pub p_value: f64,
    pub flagged: bool,
    pub group_size: usize,
    pub alpha: f64,
}

/// Exact `sup |F_1 - F_2|` over the pooled sample, both empirical CDFs
/// right-continuous. Evaluating after each distinct pooled value also
/// covers the left limits, since both CDFs are constant in between.
pub fn ks_statistic(baseline: &DdbBaseline, group: &[f64]) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::KsTest("empty test group".into()));
    }
    if group.iter().any(|d| d.is_nan()) {
        return Err(Error::KsTest("test group contains NaN".into()));
    }
    let a = baseline.distances();
    let mut b = group.to_vec();
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    Ok(d.clamp(0.0, 1.0))
}

/// `2 exp(-2 d² a₁a₂/(a₁+a₂))`, clamped to `[0, 1]`.
pub fn p_value(d_ks: f64, a1: usize, a2: usize) -> Result<f64> {
    if a1 == 0 || a2 == 0 {
        return Err(Error::KsTest("sample sizes must be positive".into()));
    }
    let (a1, a2) = (a1 as f64, a2 as f64);
    let raw = 2.0 * (-2.0 * d_ks * d_ks * a1 * a2 / (a1 + a2)).exp();
    Ok(raw.clamp(0.0, 1.0))
}

/// Flag iff `p < alpha`.
pub fn detect(baseline: &DdbBaseline, group: &[f64], alpha: f64) -> Result<KsDecision> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::KsTest(format!("alpha {alpha} outside [0, 1]")));
    }
    let d_ks = ks_statistic(baseline, group)?;
    let p = p_value(d_ks, baseline.len(), group.len())?;
    Ok(KsDecision {
        d_ks,
        p_value: p,
        flagged: p < alpha,
        group_size: group.len(),
        alpha,
    })
}

/// One decision per consecutive, non-overlapping group of `group_size`
/// samples. A trailing partial group is dropped.
pub fn stream_detect(baseline: &DdbBaseline, stream: &[f64], group_size: usize, alpha: f64) -> Result<Vec<KsDecision>> {
    if group_size == 0 {
        return Err(Error::KsTest("group size must be positive".into()));
    }
    stream
        .chunks_exact(group_size)
        .map(|g| detect(baseline, g, alpha))
        .collect()
}

/// Fraction of decisions flagged; 0 for no decisions.
pub fn flag_rate(decisions: &[KsDecision]) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    decisions.iter().filter(|d| d.flagged).count() as f64 / decisions.len() as f64
}

/// `group_index,d_ks,p_value,flagged`.
pub fn write_decision_csv<W: Write>(decisions: &[KsDecision], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["group_index", "d_ks", "p_value", "flagged"])?;
    for (i, d) in decisions.iter().enumerate() {
        wtr.write_record([
            i.to_string(),
            d.d_ks.to_string(),
            d.p_value.to_string(),
            d.flagged.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_sorts_and_keeps_duplicates() {
        let b = DdbBaseline::new(&[3.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(b.distances(), &[1.0, 1.0, 2.0, 3.0]);
        assert!(DdbBaseline::new(&[1.0]).is_err());
        assert!(DdbBaseline::new(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn hand_worked_statistic() {
        let b = DdbBaseline::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ks_statistic(&b, &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(ks_statistic(&b, &[4.0, 3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&b, &[10.0, 11.0]).unwrap(), 1.0);
        assert!(ks_statistic(&b, &[]).is_err());
    }

    #[test]
    fn p_value_examples() {
        assert_eq!(p_value(0.0, 10, 10).unwrap(), 1.0);
        assert!((p_value(0.5, 25, 25).unwrap() - 2.0 * (-6.25f64).exp()).abs() < 1e-15);
        assert!((p_value(0.5, 25, 25).unwrap() - 0.0038614).abs() < 1e-6);
        let tiny = p_value(1.0, 20_000, 25).unwrap();
        let expect = 2.0 * (-2.0 * 20_000.0 * 25.0 / 20_025.0f64).exp();
        assert!((tiny - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn zero_alpha_never_flags() {
        let base: Vec<f64> = (0..20).map(f64::from).collect();
        let b = DdbBaseline::new(&base).unwrap();
        assert!(!detect(&b, &[100.0; 30], 0.0).unwrap().flagged);
        assert!(detect(&b, &[100.0; 30], 0.01).unwrap().flagged);
    }

    #[test]
    fn stream_groups() {
        let b = DdbBaseline::new(&[1.0, 2.0, 3.0]).unwrap();
        let s: Vec<f64> = (0..99).map(|i| i as f64 / 30.0).collect();
        assert_eq!(stream_detect(&b, &s, 25, 0.01).unwrap().len(), 3);
        assert_eq!(stream_detect(&b, &s[..75], 25, 0.01).unwrap().len(), 3);
        assert_eq!(stream_detect(&b, &[1.0; 100], 25, 0.01).unwrap().len(), 4);
        assert!(stream_detect(&b, &s, 0, 0.01).is_err());
    }

    #[test]
    fn decision_csv() {
        let b = DdbBaseline::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = detect(&b, &[1.0, 2.0, 3.0, 4.0], 0.01).unwrap();
        let mut buf = Vec::new();
        write_decision_csv(&[d], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "group_index,d_ks,p_value,flagged\n0,0,1,false\n"
        );
    }
}
