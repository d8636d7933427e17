//! JSON report envelope and human-readable tables.

use std::path::Path;

use gamver_core::forest::{ClassificationReport, EvalReport};
use gamver_core::simmetrics::FEATURE_NAMES;
use gamver_core::verifier::VerificationRecord;
use serde::Serialize;

use crate::error::CliError;
use crate::store;

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";

/// Every command writes one of these to `<out>/report.json`.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub tool_version: &'a str,
    pub config: &'a C,
    pub result: &'a R,
}

pub fn write_report<C: Serialize, R: Serialize>(out: &Path, command: &str, config: &C, result: &R) -> Result<(), CliError> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config,
        result,
    };
    store::write_json(&out.join(REPORT_FILE), &report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation (`n - 1`); 0 for a single record.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelStats {
    /// `None` groups unlabeled records.
    pub label: Option<u8>,
    pub count: usize,
    pub degenerate: usize,
    pub iou: MetricStats,
    pub dice: MetricStats,
    pub ssim: MetricStats,
    pub cosine: MetricStats,
    pub pearson: MetricStats,
    pub kl: MetricStats,
    pub wasserstein: MetricStats,
}

impl LabelStats {
    pub fn metrics(&self) -> [MetricStats; 7] {
        [self.iou, self.dice, self.ssim, self.cosine, self.pearson, self.kl, self.wasserstein]
    }
}

fn stats(values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MetricStats {
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        std: var.sqrt(),
    }
}

/// Per-label statistics of each metric, labels in ascending order (unlabeled first).
pub fn label_stats(rows: &[VerificationRecord]) -> Vec<LabelStats> {
    let mut labels: Vec<Option<u8>> = rows.iter().map(|r| r.label).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
        .into_iter()
        .map(|label| {
            let group: Vec<&VerificationRecord> = rows.iter().filter(|r| r.label == label).collect();
            let col = |k: usize| stats(&group.iter().map(|r| r.features.to_array()[k]).collect::<Vec<_>>());
            LabelStats {
                label,
                count: group.len(),
                degenerate: group.iter().filter(|r| r.degenerate).count(),
                iou: col(0),
                dice: col(1),
                ssim: col(2),
                cosine: col(3),
                pearson: col(4),
                kl: col(5),
                wasserstein: col(6),
            }
        })
        .collect()
}

pub fn format_label_stats(stats: &[LabelStats]) -> String {
    let mut s = String::new();
    for g in stats {
        let label = g.label.map_or("unlabeled".to_string(), |l| format!("label {l}"));
        s += &format!("{label} ({} records, {} degenerate)\n", g.count, g.degenerate);
        s += &format!("  {:<12} {:>10} {:>10} {:>10} {:>10}\n", "metric", "mean", "min", "max", "std");
        for (name, m) in FEATURE_NAMES.iter().zip(g.metrics()) {
            s += &format!("  {:<12} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n", name, m.mean, m.min, m.max, m.std);
        }
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |v| format!("{v:.4}"))
}

pub fn format_eval(r: &EvalReport) -> String {
    let mut s = format!(
        "samples {}  threshold {}\naccuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  roc_auc {}\n",
        r.samples,
        r.threshold,
        r.accuracy,
        r.precision,
        r.recall,
        r.f1,
        opt(r.roc_auc)
    );
    s += &format!(
        "confusion  tp {}  fp {}  tn {}  fn {}\n",
        r.confusion.true_positive, r.confusion.false_positive, r.confusion.true_negative, r.confusion.false_negative
    );
    s
}

pub fn format_classification(r: &ClassificationReport) -> String {
    let mut s = format!("{:<10} {:>10} {:>10} {:>10} {:>8}\n", "class", "precision", "recall", "f1", "support");
    for c in &r.per_class {
        s += &format!(
            "{:<10} {:>10} {:>10} {:>10} {:>8}\n",
            c.class,
            opt(c.precision),
            opt(c.recall),
            opt(c.f1),
            c.support
        );
    }
    s += &format!(
        "{:<10} {:>10.4} {:>10.4} {:>10.4} {:>8}\n",
        "macro", r.macro_avg.precision, r.macro_avg.recall, r.macro_avg.f1, r.total_support
    );
    s += &format!("accuracy {:.4}\n", r.accuracy);
    s
}
