//! Scored samples, CSV storage, pair construction, group holdout splits and
//! a synthetic generator.

mod csv_io;
mod pairs;
mod split;
mod synthetic;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv};
pub use pairs::{make_pairs, PairSample};
pub use split::{group_holdout_split, Partition, SplitOutcome, SplitPlan, DEFAULT_VALIDATION_FRACTION};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec, UtilityModel};

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// One data point: features seen at test time plus the privileged score
/// that is only available while training.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub id: u64,
    pub group: String,
    pub score: f64,
    pub features: Vec<f64>,
}

/// Immutable collection of samples with a uniform feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<ScoredSample>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<ScoredSample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Input("dataset has no samples".into()));
        };
        let feature_dim = first.features.len();
        if feature_dim == 0 {
            return Err(Error::Input("samples need at least one feature".into()));
        }
        let mut seen = HashMap::with_capacity(samples.len());
        for (pos, s) in samples.iter().enumerate() {
            if s.features.len() != feature_dim {
                return Err(Error::Input(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.group.is_empty() {
                return Err(Error::Input(format!("sample {} has an empty group", s.id)));
            }
            if !s.score.is_finite() || !s.features.iter().all(|v| v.is_finite()) {
                return Err(Error::Input(format!("sample {} has non-finite values", s.id)));
            }
            if let Some(prev) = seen.insert(s.id, pos) {
                return Err(Error::Input(format!(
                    "duplicate sample id {} at positions {prev} and {pos}",
                    s.id
                )));
            }
        }
        Ok(Dataset { samples, feature_dim })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn samples(&self) -> &[ScoredSample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &ScoredSample {
        &self.samples[index]
    }

    pub fn features(&self, index: usize) -> &[f64] {
        &self.samples[index].features
    }

    pub fn score(&self, index: usize) -> f64 {
        self.samples[index].score
    }

    /// Sample positions per group, groups in sorted order.
    pub fn groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.group.as_str()).or_default().push(i);
        }
        map
    }

    /// Positions of all samples whose group is in `groups`, in dataset order.
    pub fn indices_in_groups<S: AsRef<str>>(&self, groups: &[S]) -> Vec<usize> {
        let wanted: std::collections::HashSet<&str> = groups.iter().map(|g| g.as_ref()).collect();
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| wanted.contains(s.group.as_str()))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: u64, group: &str, score: f64, features: Vec<f64>) -> ScoredSample {
        ScoredSample {
            id,
            group: group.into(),
            score,
            features,
        }
    }

    #[test]
    fn validates_samples() {
        assert!(Dataset::new(vec![]).is_err());
        assert!(Dataset::new(vec![s(0, "a", 1.0, vec![1.0]), s(1, "a", 1.0, vec![1.0, 2.0])]).is_err());
        assert!(Dataset::new(vec![s(0, "a", 1.0, vec![1.0]), s(0, "b", 1.0, vec![1.0])]).is_err());
        assert!(Dataset::new(vec![s(0, "", 1.0, vec![1.0])]).is_err());
        assert!(Dataset::new(vec![s(0, "a", f64::NAN, vec![1.0])]).is_err());
        let d = Dataset::new(vec![
            s(3, "b", 1.0, vec![1.0]),
            s(4, "a", 2.0, vec![0.0]),
            s(5, "b", 0.0, vec![2.0]),
        ])
        .unwrap();
        let g = d.groups();
        assert_eq!(g["a"], vec![1]);
        assert_eq!(g["b"], vec![0, 2]);
        assert_eq!(d.indices_in_groups(&["b"]), vec![0, 2]);
    }
}
