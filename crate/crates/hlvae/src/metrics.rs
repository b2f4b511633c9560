//! Held-out evaluation metrics.
//!
//! Numerical features score by NRMSE (RMSE over the feature's observed
//! training range), categorical features by accuracy error, ordinal features
//! by displacement error |pred − truth|/(R−1). Predictive NLL aggregates by
//! likelihood group. All metrics are computed only over held-out cells whose
//! ground truth is known.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{HeldOutCell, DatasetTable, NormStats, Schema};
use crate::likelihood::Likelihood;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty held-out set")]
    EmptyHoldout,
    #[error("prediction/truth length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// Root mean squared error normalized by the observed training range
/// (max − min). Falls back to plain RMSE when the range is degenerate; the
/// second return value flags the fallback.
pub fn nrmse(pred: &[f64], truth: &[f64], range: (f64, f64)) -> Result<(f64, bool), MetricError> {
    if pred.is_empty() {
        return Err(MetricError::EmptyHoldout);
    }
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let mse: f64 =
        pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    let rmse = mse.sqrt();
    let span = range.1 - range.0;
    if span > 0.0 {
        Ok((rmse / span, false))
    } else {
        Ok((rmse, true))
    }
}

/// Fraction of mismatched categories.
pub fn accuracy_error(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::EmptyHoldout);
    }
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Mean absolute level difference normalized by R−1, bounded in [0, 1].
pub fn displacement_error(pred: &[f64], truth: &[f64], r: usize) -> Result<f64, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::EmptyHoldout);
    }
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let total: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred.len() as f64 / (r - 1) as f64)
}

/// Likelihood grouping used by the aggregate rows.
pub fn likelihood_group(kind: &Likelihood) -> &'static str {
    match kind {
        Likelihood::Gaussian { .. } | Likelihood::GaussianFreeVariance | Likelihood::LogNormal => {
            "real"
        }
        Likelihood::Poisson => "count",
        Likelihood::Categorical { .. } => "categorical",
        Likelihood::Ordinal { .. } => "ordinal",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scope: String,
    pub metric: String,
    pub value: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("scope,metric,value,cells\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.scope, r.metric, r.value, r.cells));
        }
        out
    }

    pub fn to_pretty_string(&self) -> String {
        let mut out = String::new();
        let width = self.rows.iter().map(|r| r.scope.len()).max().unwrap_or(5).max(5);
        out.push_str(&format!("{:<width$}  {:<14}  {:>12}  {:>6}\n", "scope", "metric", "value", "cells"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$}  {:<14}  {:>12.6}  {:>6}\n",
                r.scope, r.metric, r.value, r.cells
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }

    pub fn value_of(&self, scope: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.scope == scope && r.metric == metric).map(|r| r.value)
    }
}

/// Point-estimate error report comparing filled values against held-out
/// ground truth, per feature with cell-weighted group and overall rows.
pub fn point_metrics_report(
    schema: &Schema,
    norm: &NormStats,
    holes: &[HeldOutCell],
    filled: &DatasetTable,
) -> Result<MetricReport, MetricError> {
    if holes.is_empty() {
        return Err(MetricError::EmptyHoldout);
    }
    let d = schema.features.len();
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut truths: Vec<Vec<f64>> = vec![Vec::new(); d];
    for h in holes {
        preds[h.feature].push(filled.raw_value(h.row, h.feature));
        truths[h.feature].push(h.value);
    }
    let mut report = MetricReport::default();
    // (group metric name, weighted sum, cells)
    let mut groups: Vec<(String, String, f64, usize)> = Vec::new();
    for (dj, spec) in schema.features.iter().enumerate() {
        if preds[dj].is_empty() {
            continue;
        }
        let cells = preds[dj].len();
        let (metric, value) = match &spec.likelihood {
            Likelihood::Categorical { .. } => {
                ("accuracy_error".to_string(), accuracy_error(&preds[dj], &truths[dj])?)
            }
            Likelihood::Ordinal { cardinality } => (
                "displacement_error".to_string(),
                displacement_error(&preds[dj], &truths[dj], *cardinality)?,
            ),
            _ => {
                let stats = &norm.per_feature[dj];
                let (value, fallback) =
                    nrmse(&preds[dj], &truths[dj], (stats.min, stats.max))?;
                if fallback {
                    report.warnings.push(format!(
                        "feature {}: degenerate training range, NRMSE fell back to RMSE",
                        spec.name
                    ));
                }
                ("nrmse".to_string(), value)
            }
        };
        report.rows.push(MetricRow {
            scope: format!("feature:{}", spec.name),
            metric: metric.clone(),
            value,
            cells,
        });
        let group = likelihood_group(&spec.likelihood).to_string();
        match groups.iter_mut().find(|(g, m, _, _)| *g == group && *m == metric) {
            Some(entry) => {
                entry.2 += value * cells as f64;
                entry.3 += cells;
            }
            None => groups.push((group, metric, value * cells as f64, cells)),
        }
    }
    for (group, metric, weighted, cells) in groups {
        report.rows.push(MetricRow {
            scope: format!("group:{group}"),
            metric,
            value: weighted / cells as f64,
            cells,
        });
    }
    Ok(report)
}

/// Mean predictive NLL per likelihood group plus an overall row.
pub fn predictive_nll_report(
    schema: &Schema,
    cells: &[(usize, f64)],
) -> MetricReport {
    let mut report = MetricReport::default();
    let mut groups: Vec<(&'static str, f64, usize)> = Vec::new();
    let mut overall = (0.0, 0usize);
    for &(feature, nll) in cells {
        let group = likelihood_group(&schema.features[feature].likelihood);
        match groups.iter_mut().find(|(g, _, _)| *g == group) {
            Some(entry) => {
                entry.1 += nll;
                entry.2 += 1;
            }
            None => groups.push((group, nll, 1)),
        }
        overall.0 += nll;
        overall.1 += 1;
    }
    for (group, total, count) in groups {
        report.rows.push(MetricRow {
            scope: format!("group:{group}"),
            metric: "nll".into(),
            value: total / count as f64,
            cells: count,
        });
    }
    if overall.1 > 0 {
        report.rows.push(MetricRow {
            scope: "overall".into(),
            metric: "nll".into(),
            value: overall.0 / overall.1 as f64,
            cells: overall.1,
        });
    }
    report
}
