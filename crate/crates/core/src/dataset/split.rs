//! Group holdout: whole groups go to either the training or the test
//! partition. A group-level validation subset is carved out of training.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// Training groups minus the validation groups.
    Fit,
    Validation,
    Test,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fit" | "train" => Ok(Partition::Fit),
            "validation" | "val" => Ok(Partition::Validation),
            "test" => Ok(Partition::Test),
            other => Err(Error::Config(format!(
                "unknown partition '{other}' (expected train|validation|test)"
            ))),
        }
    }
}

/// One fold of a group holdout.
///
/// `train_groups` is the whole training partition; `validation_groups` is a
/// subset of it reserved for early stopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold: usize,
    pub seed: u64,
    pub train_fraction: f64,
    pub train_groups: Vec<String>,
    pub validation_groups: Vec<String>,
    pub test_groups: Vec<String>,
}

impl SplitPlan {
    pub fn partition_of(&self, group: &str) -> Option<Partition> {
        let has = |v: &[String]| v.binary_search_by(|g| g.as_str().cmp(group)).is_ok();
        if has(&self.validation_groups) {
            Some(Partition::Validation)
        } else if has(&self.train_groups) {
            Some(Partition::Fit)
        } else if has(&self.test_groups) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn indices(&self, dataset: &Dataset, partition: Partition) -> Vec<usize> {
        (0..dataset.len())
            .filter(|&i| self.partition_of(&dataset.sample(i).group) == Some(partition))
            .collect()
    }

    /// All training-partition samples, validation included.
    pub fn train_indices(&self, dataset: &Dataset) -> Vec<usize> {
        (0..dataset.len())
            .filter(|&i| {
                matches!(
                    self.partition_of(&dataset.sample(i).group),
                    Some(Partition::Fit | Partition::Validation)
                )
            })
            .collect()
    }

    /// Check the plan against a dataset: disjoint partitions that cover
    /// every group exactly once.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let train: BTreeSet<&str> = self.train_groups.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.test_groups.iter().map(String::as_str).collect();
        let val: BTreeSet<&str> = self.validation_groups.iter().map(String::as_str).collect();
        if let Some(g) = train.intersection(&test).next() {
            return Err(Error::Input(format!("group '{g}' is in both train and test")));
        }
        if let Some(g) = val.difference(&train).next() {
            return Err(Error::Input(format!("validation group '{g}' is not a training group")));
        }
        for w in [&self.train_groups, &self.test_groups, &self.validation_groups] {
            if !w.windows(2).all(|p| p[0] < p[1]) {
                return Err(Error::Input("group lists must be sorted and unique".into()));
            }
        }
        for g in dataset.groups().keys() {
            if !train.contains(g) && !test.contains(g) {
                return Err(Error::Input(format!("group '{g}' is not assigned to any partition")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SplitPlan> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Debug)]
pub struct SplitOutcome {
    pub plans: Vec<SplitPlan>,
    /// Non-fatal problems, e.g. a target fraction no group combination reaches.
    pub warnings: Vec<String>,
}

/// Greedy packing: walk groups in the given order and take each one whose
/// inclusion moves the running total closer to `target`.
fn greedy_pack(sizes: &[usize], target: f64) -> Vec<bool> {
    let mut taken = vec![false; sizes.len()];
    let mut total = 0usize;
    for (k, &s) in sizes.iter().enumerate() {
        let now = (total as f64 - target).abs();
        let with = ((total + s) as f64 - target).abs();
        if with < now {
            taken[k] = true;
            total += s;
        }
    }
    taken
}

/// Pack groups toward `fraction` of `total`, keeping at least one group on
/// each side. Returns the chosen flags.
fn pack_with_bounds(sizes: &[usize], fraction: f64, what: &str, warnings: &mut Vec<String>) -> Vec<bool> {
    let total: usize = sizes.iter().sum();
    let target = fraction * total as f64;
    let mut taken = greedy_pack(sizes, target);
    if !taken.iter().any(|&t| t) {
        let best = (0..sizes.len())
            .min_by(|&a, &b| {
                let da = (sizes[a] as f64 - target).abs();
                let db = (sizes[b] as f64 - target).abs();
                da.total_cmp(&db)
            })
            .expect("at least one group");
        taken[best] = true;
        warnings.push(format!(
            "{what}: target of {target:.1} samples is below half of every group size; using one group of {}",
            sizes[best]
        ));
    } else if taken.iter().all(|&t| t) {
        let last = taken.len() - 1;
        taken[last] = false;
        warnings.push(format!(
            "{what}: target of {target:.1} samples would consume every group; leaving one group out"
        ));
    }
    taken
}

/// Build `n_folds` independent group holdout plans.
pub fn group_holdout_split(
    dataset: &Dataset,
    train_fraction: f64,
    validation_fraction: f64,
    n_folds: usize,
    seed: u64,
) -> Result<SplitOutcome> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0,1), got {validation_fraction}"
        )));
    }
    if n_folds == 0 {
        return Err(Error::Config("n_folds must be at least 1".into()));
    }
    let groups = dataset.groups();
    if groups.len() < 3 {
        return Err(Error::Input(format!(
            "group holdout needs at least 3 groups (train, validation, test), found {}",
            groups.len()
        )));
    }
    let names: Vec<&str> = groups.keys().copied().collect();
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();

    let mut plans = Vec::with_capacity(n_folds);
    let mut warnings = Vec::new();
    for fold in 0..n_folds {
        let fold_seed = crate::seed::derive(seed, "group-holdout", fold as u64);
        let mut rng = crate::seed::rng(fold_seed);
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.shuffle(&mut rng);

        let ordered_sizes: Vec<usize> = order.iter().map(|&g| sizes[g]).collect();
        let label = format!("fold {fold} training partition");
        let in_train = pack_with_bounds(&ordered_sizes, train_fraction, &label, &mut warnings);
        let train: Vec<usize> = order
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t)
            .map(|(&g, _)| g)
            .collect();
        let test: Vec<usize> = order
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| !t)
            .map(|(&g, _)| g)
            .collect();

        if train.len() < 2 {
            return Err(Error::Input(format!(
                "fold {fold}: training partition holds a single group, so no validation group can be reserved; \
                 increase the train fraction or use smaller groups"
            )));
        }
        let train_sizes: Vec<usize> = train.iter().map(|&g| sizes[g]).collect();
        let label = format!("fold {fold} validation subset");
        let in_val = pack_with_bounds(&train_sizes, validation_fraction, &label, &mut warnings);
        let validation: Vec<usize> = train.iter().zip(&in_val).filter(|(_, &v)| v).map(|(&g, _)| g).collect();

        let sorted_names = |ix: &[usize]| -> Vec<String> {
            let mut v: Vec<String> = ix.iter().map(|&g| names[g].to_string()).collect();
            v.sort();
            v
        };
        plans.push(SplitPlan {
            fold,
            seed: fold_seed,
            train_fraction,
            train_groups: sorted_names(&train),
            validation_groups: sorted_names(&validation),
            test_groups: sorted_names(&test),
        });
    }
    Ok(SplitOutcome { plans, warnings })
}
