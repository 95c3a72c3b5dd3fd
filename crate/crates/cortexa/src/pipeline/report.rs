//! Plot-data export: age histogram, prediction scatter, and the metrics
//! summary, written atomically.

use super::eval::EvalReport;
use super::manifest::Split;
use super::{write_atomic, PipelineError};
use crate::models::ModelKind;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub mae_years: f64,
    pub n: usize,
    pub split: Split,
    pub model: ModelKind,
}

/// Writes `age_histogram.csv`, `scatter.csv`, and `metrics.json` under
/// `out_dir`.
pub fn export_report(report: &EvalReport, out_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)?;

    let mut hist = String::from("bin_start,bin_end,count\n");
    for b in &report.age_histogram {
        hist.push_str(&format!("{},{},{}\n", b.bin_start, b.bin_end, b.count));
    }
    write_atomic(&out_dir.join("age_histogram.csv"), hist.as_bytes())?;

    let mut scatter = String::from("subject_id,true_age,predicted_age\n");
    for p in &report.per_subject {
        scatter.push_str(&format!(
            "{},{},{}\n",
            p.subject_id,
            p.true_age.unwrap_or(f64::NAN),
            p.predicted_age
        ));
    }
    write_atomic(&out_dir.join("scatter.csv"), scatter.as_bytes())?;

    let metrics = Metrics {
        mae_years: report.mae_years,
        n: report.per_subject.len(),
        split: report.split,
        model: report.model_kind,
    };
    let json = serde_json::to_string_pretty(&metrics)?;
    write_atomic(&out_dir.join("metrics.json"), format!("{json}\n").as_bytes())?;
    Ok(())
}

pub fn read_metrics(eval_dir: &Path) -> Result<Metrics, PipelineError> {
    let text = std::fs::read_to_string(eval_dir.join("metrics.json"))?;
    Ok(serde_json::from_str(&text)?)
}
