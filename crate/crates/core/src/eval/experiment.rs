//! Fraction × fold × method grids: split, pair, train, evaluate, compare.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{kendall_tau, pearson};
use super::report::ExperimentReport;
use super::ttest::{paired_ttest, TTestResult};
use crate::dataset::{
    group_holdout_split, make_pairs, Dataset, PairSample, Partition, SplitPlan, DEFAULT_VALIDATION_FRACTION,
};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::seed::derive;
use crate::trainer::{pairwise_accuracy, train, Scorer, TrainConfig};

/// Pearson and Kendall correlation between predicted and annotated scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub pearson_r: f64,
    pub kendall_tau: f64,
    pub n: usize,
    pub pearson_degenerate: bool,
    pub kendall_degenerate: bool,
}

/// Correlate the model's scores with the annotated scores of the samples at
/// `indices`.
pub fn evaluate_indices<S: Scorer + ?Sized>(model: &S, dataset: &Dataset, indices: &[usize]) -> Result<MetricPair> {
    if model.input_dim() != dataset.feature_dim() {
        return Err(Error::Input(format!(
            "model expects {} features but the dataset has {}",
            model.input_dim(),
            dataset.feature_dim()
        )));
    }
    if indices.len() < 2 {
        return Err(Error::Input(format!(
            "evaluation needs at least 2 samples, got {}",
            indices.len()
        )));
    }
    let mut predicted = Vec::with_capacity(indices.len());
    let mut truth = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::Input(format!(
                "sample index {i} out of range ({} samples)",
                dataset.len()
            )));
        }
        predicted.push(model.score(dataset.features(i))?);
        truth.push(dataset.score(i));
    }
    let r = pearson(&predicted, &truth)?;
    let tau = kendall_tau(&predicted, &truth)?;
    Ok(MetricPair {
        pearson_r: r.value,
        kendall_tau: tau.value,
        n: indices.len(),
        pearson_degenerate: r.degenerate,
        kendall_degenerate: tau.degenerate,
    })
}

/// [`evaluate_indices`] addressed by sample id.
pub fn evaluate_model<S: Scorer + ?Sized>(model: &S, dataset: &Dataset, ids: &[u64]) -> Result<MetricPair> {
    let position: HashMap<u64, usize> = dataset.samples().iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let indices = ids
        .iter()
        .map(|id| {
            position
                .get(id)
                .copied()
                .ok_or_else(|| Error::Input(format!("unknown sample id {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_indices(model, dataset, &indices)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Method {
    Plain,
    Lupi { lambda: f64 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Plain => "RankNet".to_string(),
            Method::Lupi { lambda } => format!("AffRankNet+ lambda={lambda}"),
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Method::Plain => None,
            Method::Lupi { lambda } => Some(*lambda),
        }
    }

    pub fn loss(&self, tau: f64) -> Result<LossConfig> {
        match self {
            Method::Plain => Ok(LossConfig::plain()),
            Method::Lupi { lambda } => LossConfig::lupi(*lambda, tau),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Share of all samples assigned (by whole groups) to training.
    pub fractions: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub n_folds: usize,
    /// Pairs need a score gap strictly above this.
    pub threshold: f64,
    /// Share of the training partition held back for early stopping.
    pub validation_fraction: f64,
    pub max_pairs: Option<usize>,
    pub tau: f64,
    /// Base settings; `loss` and `seed` are replaced per cell.
    pub train: TrainConfig,
    pub seed: u64,
    /// Worker threads for grid cells; 0 uses every core.
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fractions: vec![0.05, 0.10, 0.20],
            lambdas: vec![0.3, 0.5, 0.8],
            n_folds: 10,
            threshold: 4.0,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            max_pairs: None,
            tau: 1.0,
            train: TrainConfig::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("at least one train fraction is required".into()));
        }
        for (k, f) in self.fractions.iter().enumerate() {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::Config(format!("train fraction must lie in (0,1), got {f}")));
            }
            if self.fractions[..k].contains(f) {
                return Err(Error::Config(format!("train fraction {f} listed twice")));
            }
        }
        for (k, l) in self.lambdas.iter().enumerate() {
            LossConfig::lupi(*l, self.tau)?;
            if self.lambdas[..k].contains(l) {
                return Err(Error::Config(format!("lambda {l} listed twice")));
            }
        }
        if self.n_folds == 0 {
            return Err(Error::Config("n_folds must be at least 1".into()));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::Config(format!(
                "pair threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        let mut base = self.train.clone();
        base.loss = LossConfig::plain();
        base.validate()
    }

    /// Plain RankNet first, then one LUPI method per lambda.
    pub fn methods(&self) -> Vec<Method> {
        std::iter::once(Method::Plain)
            .chain(self.lambdas.iter().map(|&lambda| Method::Lupi { lambda }))
            .collect()
    }
}

/// Outcome of training and evaluating one method on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub fraction: f64,
    pub fold: usize,
    pub method: Method,
    pub split_seed: u64,
    pub train_seed: u64,
    pub n_fit_pairs: usize,
    pub n_validation_pairs: usize,
    pub n_test_pairs: usize,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub validation: MetricPair,
    pub test: MetricPair,
    pub test_pair_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub label: String,
    pub n_folds: usize,
    pub pearson_mean: f64,
    pub pearson_sd: f64,
    pub kendall_mean: f64,
    pub kendall_sd: f64,
    pub validation_kendall_mean: f64,
}

/// Per-fraction aggregates plus RankNet vs best-lambda AffRankNet+ tests.
/// The tests compare `AffRankNet+ - RankNet` per fold and are absent when
/// there are no lambdas or fewer than two folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub fraction: f64,
    pub methods: Vec<MethodSummary>,
    /// Chosen by mean validation Kendall tau.
    pub best_lambda: Option<f64>,
    pub kendall_ttest: Option<TTestResult>,
    pub pearson_ttest: Option<TTestResult>,
}

impl FractionSummary {
    pub fn method(&self, method: &Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| &m.method == method)
    }
}

/// Reported after each finished cell; `done` counts finished cells.
#[derive(Clone, Debug)]
pub struct CellProgress {
    pub fraction: f64,
    pub fold: usize,
    pub method: Method,
    pub done: usize,
    pub total: usize,
}

struct FoldData {
    fraction_index: usize,
    plan: SplitPlan,
    fit_pairs: Vec<PairSample>,
    validation_pairs: Vec<PairSample>,
    test_pairs: Vec<PairSample>,
    validation: Vec<usize>,
    test: Vec<usize>,
}

fn cell_error(fraction: f64, fold: usize, method: &str, source: Error) -> Error {
    Error::Cell {
        fraction,
        fold,
        method: method.to_string(),
        source: Box::new(source),
    }
}

fn prepare_folds(dataset: &Dataset, cfg: &ExperimentConfig, warnings: &mut Vec<String>) -> Result<Vec<FoldData>> {
    let mut folds = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        let outcome = group_holdout_split(
            dataset,
            fraction,
            cfg.validation_fraction,
            cfg.n_folds,
            derive(cfg.seed, "split", fi as u64),
        )
        .map_err(|e| cell_error(fraction, 0, "split", e))?;
        warnings.extend(
            outcome
                .warnings
                .into_iter()
                .map(|w| format!("fraction {fraction}: {w}")),
        );
        for plan in outcome.plans {
            let fold = plan.fold;
            let wrap = |e| cell_error(fraction, fold, "pairs", e);
            let fit = plan.indices(dataset, Partition::Fit);
            let validation = plan.indices(dataset, Partition::Validation);
            let test = plan.indices(dataset, Partition::Test);
            let pairs = |members: &[usize], tag: &str| {
                make_pairs(
                    dataset,
                    members,
                    cfg.threshold,
                    cfg.max_pairs,
                    derive(plan.seed, tag, 0),
                )
            };
            let fit_pairs = pairs(&fit, "pairs-fit").map_err(wrap)?;
            let validation_pairs = pairs(&validation, "pairs-validation").map_err(wrap)?;
            let test_pairs = pairs(&test, "pairs-test").map_err(wrap)?;
            folds.push(FoldData {
                fraction_index: fi,
                plan,
                fit_pairs,
                validation_pairs,
                test_pairs,
                validation,
                test,
            });
        }
    }
    Ok(folds)
}

fn run_cell(dataset: &Dataset, cfg: &ExperimentConfig, data: &FoldData, method: Method) -> Result<CellResult> {
    let fraction = cfg.fractions[data.fraction_index];
    let fold = data.plan.fold;
    let train_seed = derive(
        derive(cfg.seed, "train", data.fraction_index as u64),
        "fold",
        fold as u64,
    );
    let mut train_cfg = cfg.train.clone();
    train_cfg.loss = method.loss(cfg.tau)?;
    train_cfg.seed = train_seed;
    let model = train(dataset, &data.fit_pairs, &data.validation_pairs, &train_cfg)?;
    let test_pair_accuracy = if data.test_pairs.is_empty() {
        None
    } else {
        Some(pairwise_accuracy(&model, dataset, &data.test_pairs)?)
    };
    Ok(CellResult {
        fraction,
        fold,
        method,
        split_seed: data.plan.seed,
        train_seed,
        n_fit_pairs: data.fit_pairs.len(),
        n_validation_pairs: data.validation_pairs.len(),
        n_test_pairs: data.test_pairs.len(),
        stopped_epoch: model.stopped_epoch,
        best_epoch: model.best_epoch,
        best_validation_loss: model.best_validation_loss,
        validation: evaluate_indices(&model, dataset, &data.validation)?,
        test: evaluate_indices(&model, dataset, &data.test)?,
        test_pair_accuracy,
    })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn summarize(cfg: &ExperimentConfig, fraction: f64, cells: &[&CellResult]) -> Result<FractionSummary> {
    let methods = cfg.methods();
    let per_method: Vec<Vec<&CellResult>> = methods
        .iter()
        .map(|m| cells.iter().copied().filter(|c| &c.method == m).collect())
        .collect();
    let summaries: Vec<MethodSummary> = methods
        .iter()
        .zip(&per_method)
        .map(|(m, cs)| {
            let pick = |f: fn(&CellResult) -> f64| cs.iter().map(|c| f(c)).collect::<Vec<_>>();
            let (pearson_mean, pearson_sd) = mean_sd(&pick(|c| c.test.pearson_r));
            let (kendall_mean, kendall_sd) = mean_sd(&pick(|c| c.test.kendall_tau));
            let (validation_kendall_mean, _) = mean_sd(&pick(|c| c.validation.kendall_tau));
            MethodSummary {
                method: *m,
                label: m.label(),
                n_folds: cs.len(),
                pearson_mean,
                pearson_sd,
                kendall_mean,
                kendall_sd,
                validation_kendall_mean,
            }
        })
        .collect();

    // First lambda wins ties.
    let best = (1..summaries.len()).fold(None::<usize>, |best, k| match best {
        Some(b) if summaries[b].validation_kendall_mean >= summaries[k].validation_kendall_mean => Some(b),
        _ => Some(k),
    });
    let (mut kendall_ttest, mut pearson_ttest) = (None, None);
    if let Some(b) = best {
        if cfg.n_folds >= 2 {
            let plain = &per_method[0];
            let lupi = &per_method[b];
            let metric =
                |cs: &[&CellResult], f: fn(&MetricPair) -> f64| cs.iter().map(|c| f(&c.test)).collect::<Vec<_>>();
            kendall_ttest = Some(paired_ttest(
                &metric(lupi, |m| m.kendall_tau),
                &metric(plain, |m| m.kendall_tau),
            )?);
            pearson_ttest = Some(paired_ttest(
                &metric(lupi, |m| m.pearson_r),
                &metric(plain, |m| m.pearson_r),
            )?);
        }
    }
    Ok(FractionSummary {
        fraction,
        best_lambda: best.and_then(|b| methods[b].lambda()),
        methods: summaries,
        kendall_ttest,
        pearson_ttest,
    })
}

/// Run every (fraction, fold, method) cell and aggregate.
///
/// Within a fold all methods share the split, the pairs and the training
/// seed, so they differ only in the loss. Cells run on `cfg.jobs` threads;
/// results are merged in grid order, so the report does not depend on the
/// thread count. The first failing cell (in grid order) aborts the run.
pub fn run_experiment(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    progress: Option<&(dyn Fn(&CellProgress) + Sync)>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let folds = prepare_folds(dataset, cfg, &mut warnings)?;
    let methods = cfg.methods();
    let jobs: Vec<(&FoldData, Method)> = folds
        .iter()
        .flat_map(|f| methods.iter().map(move |m| (f, *m)))
        .collect();

    let total = jobs.len();
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<CellResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|(data, method)| {
                let fraction = cfg.fractions[data.fraction_index];
                let out = run_cell(dataset, cfg, data, *method)
                    .map_err(|e| cell_error(fraction, data.plan.fold, &method.label(), e));
                if let Some(cb) = progress {
                    cb(&CellProgress {
                        fraction,
                        fold: data.plan.fold,
                        method: *method,
                        done: done.fetch_add(1, Ordering::SeqCst) + 1,
                        total,
                    });
                }
                out
            })
            .collect()
    });
    let cells = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let summaries = cfg
        .fractions
        .iter()
        .map(|&f| {
            let in_fraction: Vec<&CellResult> = cells.iter().filter(|c| c.fraction == f).collect();
            summarize(cfg, f, &in_fraction)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentReport::new(dataset, cfg.clone(), cells, summaries, warnings))
}
