//! Experiment report and its file exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{CellResult, ExperimentConfig, FractionSummary};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Files written by [`write_report`], in order.
pub const REPORT_FILES: [&str; 6] = [
    "table_pearson.csv",
    "table_kendall.csv",
    "summary.csv",
    "significance.csv",
    "folds.csv",
    "report.json",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub n_groups: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub summaries: Vec<FractionSummary>,
    /// Grid order: fraction, then fold, then method.
    pub cells: Vec<CellResult>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub(crate) fn new(
        dataset: &Dataset,
        config: ExperimentConfig,
        cells: Vec<CellResult>,
        summaries: Vec<FractionSummary>,
        warnings: Vec<String>,
    ) -> Self {
        ExperimentReport {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            dataset: DatasetSummary {
                n_samples: dataset.len(),
                n_groups: dataset.groups().len(),
                feature_dim: dataset.feature_dim(),
            },
            summaries,
            cells,
            warnings,
        }
    }

    pub fn summary(&self, fraction: f64) -> Option<&FractionSummary> {
        self.summaries.iter().find(|s| s.fraction == fraction)
    }

    /// Rows = methods, columns = train fractions, cells = mean test metric.
    pub fn table_csv(&self, kendall: bool) -> String {
        let mut out = String::from("method,lambda");
        for s in &self.summaries {
            write!(out, ",{}", s.fraction).unwrap();
        }
        out.push('\n');
        for method in self.config.methods() {
            write!(out, "{},{}", method.label(), opt(method.lambda())).unwrap();
            for s in &self.summaries {
                let m = s.method(&method).expect("summary covers every method");
                write!(out, ",{:.6}", if kendall { m.kendall_mean } else { m.pearson_mean }).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "fraction,method,lambda,n_folds,pearson_mean,pearson_sd,kendall_mean,kendall_sd,validation_kendall_mean,selected\n",
        );
        for s in &self.summaries {
            for m in &s.methods {
                let selected = m.method.lambda().is_some() && m.method.lambda() == s.best_lambda;
                writeln!(
                    out,
                    "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                    s.fraction,
                    m.label,
                    opt(m.method.lambda()),
                    m.n_folds,
                    m.pearson_mean,
                    m.pearson_sd,
                    m.kendall_mean,
                    m.kendall_sd,
                    m.validation_kendall_mean,
                    selected
                )
                .unwrap();
            }
        }
        out
    }

    pub fn significance_csv(&self) -> String {
        let mut out = String::from(
            "fraction,metric,best_lambda,mean_difference,t_statistic,degrees_of_freedom,p_value,significant_at_005,degenerate\n",
        );
        for s in &self.summaries {
            for (name, test) in [("kendall_tau", &s.kendall_ttest), ("pearson_r", &s.pearson_ttest)] {
                if let Some(t) = test {
                    writeln!(
                        out,
                        "{},{},{},{:.6},{:.6},{},{:.6e},{},{}",
                        s.fraction,
                        name,
                        opt(s.best_lambda),
                        t.mean_difference,
                        t.t_statistic,
                        t.degrees_of_freedom,
                        t.p_value,
                        t.significant_at_005,
                        t.degenerate
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    pub fn folds_csv(&self) -> String {
        let mut out = String::from(
            "fraction,fold,method,lambda,train_seed,n_fit_pairs,n_validation_pairs,n_test_pairs,stopped_epoch,best_epoch,\
             best_validation_loss,n_test,test_pearson,test_kendall,pearson_degenerate,kendall_degenerate,\
             validation_pearson,validation_kendall,test_pair_accuracy\n",
        );
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.fraction,
                c.fold,
                c.method.label(),
                opt(c.method.lambda()),
                c.train_seed,
                c.n_fit_pairs,
                c.n_validation_pairs,
                c.n_test_pairs,
                c.stopped_epoch,
                c.best_epoch,
                c.best_validation_loss,
                c.test.n,
                c.test.pearson_r,
                c.test.kendall_tau,
                c.test.pearson_degenerate,
                c.test.kendall_degenerate,
                c.validation.pearson_r,
                c.validation.kendall_tau,
                opt(c.test_pair_accuracy)
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self, manifest: Option<&str>) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let (Some(m), Some(obj)) = (manifest, value.as_object_mut()) {
            obj.insert("manifest".into(), m.into());
        }
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write all [`REPORT_FILES`] into `dir` (created if needed). CSV files
/// start with a `# manifest:` line when `manifest` is given.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>, manifest: Option<&str>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = manifest.map(|m| format!("# manifest: {m}\n")).unwrap_or_default();
    let contents = [
        header.clone() + &report.table_csv(false),
        header.clone() + &report.table_csv(true),
        header.clone() + &report.summary_csv(),
        header.clone() + &report.significance_csv(),
        header + &report.folds_csv(),
        report.to_json(manifest)?,
    ];
    let mut written = Vec::new();
    for (name, text) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
