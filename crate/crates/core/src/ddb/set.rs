use std::io::Write;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ScoreModel;
use crate::error::{Error, Result};
use crate::scenario::SensingVector;

use super::{
    binary_search_ddb, cw_ddb, deepfool_ddb, lbfgs_ddb, BoundaryDirection, DdbMethod, DdbResult, SearchConfig,
};

/// DDBs for a batch of records, in record order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdbSet {
    pub method: DdbMethod,
    pub timeslots: Vec<u64>,
    pub results: Vec<DdbResult>,
    /// Results that did not converge or are non-finite.
    pub excluded: usize,
    /// Set when more than 10% of the batch was excluded.
    pub warning: Option<String>,
}

impl DdbSet {
    /// Finite distances of converged results, in record order.
    pub fn distances(&self) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.converged && r.distance.is_finite())
            .map(|r| r.distance)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// One distance by the chosen method. LBFGS targets the opposite label.
pub fn compute_ddb(
    model: &impl ScoreModel,
    x: &[f64],
    method: DdbMethod,
    direction: Option<&BoundaryDirection>,
    config: &SearchConfig,
) -> Result<DdbResult> {
    match method {
        DdbMethod::LrtBinarySearch => {
            let dir = direction.ok_or_else(|| Error::config("LRT binary search needs a boundary direction"))?;
            binary_search_ddb(model, x, dir, config)
        }
        DdbMethod::DeepFool => deepfool_ddb(model, x, config),
        DdbMethod::Lbfgs => {
            let target = model.classify(x)?.opposite();
            lbfgs_ddb(model, x, target, config)
        }
        DdbMethod::Cw => cw_ddb(model, x, config),
    }
}

pub fn compute_ddb_set(
    model: &impl ScoreModel,
    records: &[SensingVector],
    method: DdbMethod,
    direction: Option<&BoundaryDirection>,
    config: &SearchConfig,
) -> Result<DdbSet> {
    config.validate()?;
    if method == DdbMethod::LrtBinarySearch && direction.is_none() {
        return Err(Error::config("LRT binary search needs a boundary direction"));
    }
    let one = |r: &SensingVector| compute_ddb(model, &r.values, method, direction, config);
    #[cfg(feature = "parallel")]
    let results: Vec<DdbResult> = records.par_iter().map(one).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let results: Vec<DdbResult> = records.iter().map(one).collect::<Result<_>>()?;

    let excluded = results
        .iter()
        .filter(|r| !(r.converged && r.distance.is_finite()))
        .count();
    let warning = (excluded * 10 > results.len()).then(|| {
        format!(
            "{excluded} of {} {method} distance computations did not converge",
            results.len()
        )
    });
    Ok(DdbSet {
        method,
        timeslots: records.iter().map(|r| r.timeslot).collect(),
        results,
        excluded,
        warning,
    })
}

/// `timeslot,method,distance,iterations,converged`.
pub fn write_ddb_csv<W: Write>(set: &DdbSet, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timeslot", "method", "distance", "iterations", "converged"])?;
    for (t, r) in set.timeslots.iter().zip(&set.results) {
        wtr.write_record([
            t.to_string(),
            r.method.to_string(),
            r.distance.to_string(),
            r.iterations.to_string(),
            r.converged.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FusionClassifier;
    use crate::ddb::InputBox;
    use crate::scenario::Label;

    fn records() -> Vec<SensingVector> {
        (0..20)
            .map(|i| SensingVector {
                timeslot: i,
                values: vec![i as f64 * 0.5, 1.0],
                label: Label::Available,
            })
            .collect()
    }

    #[test]
    fn linear_toy_has_no_exclusions_and_full_length() {
        let w = vec![1.0, 0.5];
        let model = FusionClassifier::affine(&w, -4.0).unwrap();
        let dir = BoundaryDirection::from_hyperplane(w, -4.0).unwrap();
        let cfg = SearchConfig {
            input_box: Some(InputBox::new(vec![-5.0, -5.0], vec![20.0, 20.0]).unwrap()),
            ..SearchConfig::default()
        };
        for m in DdbMethod::ALL {
            let set = compute_ddb_set(&model, &records(), m, Some(&dir), &cfg).unwrap();
            assert_eq!(set.len(), 20);
            assert_eq!(set.excluded, 0, "{m}");
            assert!(set.warning.is_none());
            assert_eq!(set.distances().len(), 20);
        }
    }

    #[test]
    fn lrt_requires_direction() {
        let model = FusionClassifier::affine(&[1.0, 0.5], -4.0).unwrap();
        assert!(compute_ddb_set(
            &model,
            &records(),
            DdbMethod::LrtBinarySearch,
            None,
            &SearchConfig::default()
        )
        .is_err());
    }

    #[test]
    fn non_convergence_is_counted_and_warned() {
        let model = FusionClassifier::affine(&[0.0, 1.0], -1e9).unwrap();
        let dir = BoundaryDirection::from_hyperplane(vec![1.0, 0.0], 0.0).unwrap();
        let cfg = SearchConfig {
            max_doublings: 3,
            ..SearchConfig::default()
        };
        let set = compute_ddb_set(&model, &records(), DdbMethod::LrtBinarySearch, Some(&dir), &cfg).unwrap();
        assert_eq!(set.excluded, 20);
        assert!(set.warning.is_some());
        assert!(set.distances().is_empty());
    }

    #[test]
    fn csv_has_expected_header() {
        let w = vec![1.0, 0.5];
        let model = FusionClassifier::affine(&w, -4.0).unwrap();
        let dir = BoundaryDirection::from_hyperplane(w, -4.0).unwrap();
        let set = compute_ddb_set(
            &model,
            &records()[..2],
            DdbMethod::LrtBinarySearch,
            Some(&dir),
            &SearchConfig::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ddb_csv(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timeslot,method,distance,iterations,converged\n0,lrt,"));
        assert_eq!(text.lines().count(), 3);
    }
}
