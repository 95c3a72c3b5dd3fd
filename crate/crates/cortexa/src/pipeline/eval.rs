//! Subject-level MAE evaluation.

use super::manifest::{Manifest, Split};
use super::PipelineError;
use crate::models::{predict_subject_sliced, predict_volume_3d, Model, ModelKind, SubjectPrediction};
use crate::nifti::read_nifti;
use crate::preprocess::{center_crop, extract_center_slices};
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

/// Evaluation artifacts: the headline subject-level MAE, per-subject
/// predictions, the age histogram, and (true, predicted) scatter rows.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mae_years: f64,
    pub per_subject: Vec<SubjectPrediction>,
    pub age_histogram: Vec<HistogramBin>,
    pub scatter_rows: Vec<(f64, f64)>,
    pub split: Split,
    pub model_kind: ModelKind,
    /// 2D diagnostic only: MAE over raw slice predictions, before fusion.
    pub slice_mae_years: Option<f64>,
}

/// 1-year bins spanning the observed ages.
pub(crate) fn age_histogram(ages: &[f64]) -> Vec<HistogramBin> {
    if ages.is_empty() {
        return Vec::new();
    }
    let min = ages.iter().copied().fold(f64::INFINITY, f64::min).floor() as i64;
    let max = ages.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor() as i64;
    (min..=max)
        .map(|b| HistogramBin {
            bin_start: b as f64,
            bin_end: (b + 1) as f64,
            count: ages
                .iter()
                .filter(|a| **a >= b as f64 && **a < (b + 1) as f64)
                .count(),
        })
        .collect()
}

/// Predicts every subject in the split (3D whole-volume or 2D sliced with
/// median fusion) and reports mean |true − predicted| in years.
pub fn evaluate_mae(
    model: &Model<f32>,
    manifest: &Manifest,
    split: Split,
    slices_per_subject: usize,
) -> Result<EvalReport, PipelineError> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(PipelineError::EmptySplit(split));
    }
    let kind = model.spec().kind;

    let per_subject: Vec<SubjectPrediction> = records
        .par_iter()
        .map(|r| -> Result<SubjectPrediction, PipelineError> {
            let (_, volume) = read_nifti(&r.volume_path)?;
            let mut pred = match kind {
                ModelKind::BrainNet3d => predict_volume_3d(model, &volume, &r.subject_id)?,
                ModelKind::SliceNet2d => {
                    let slices = extract_center_slices(&volume, slices_per_subject, &r.subject_id)?;
                    let shape = &model.spec().input_shape;
                    let cropped = slices
                        .iter()
                        .map(|s| center_crop(s, shape[0], shape[1]))
                        .collect::<Result<Vec<_>, _>>()?;
                    predict_subject_sliced(model, &cropped, slices_per_subject)?
                }
            };
            pred.true_age = Some(r.age);
            Ok(pred)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n = per_subject.len() as f64;
    let mae_years = per_subject
        .iter()
        .map(|p| (p.true_age.unwrap() - p.predicted_age).abs())
        .sum::<f64>()
        / n;
    let scatter_rows: Vec<(f64, f64)> = per_subject
        .iter()
        .map(|p| (p.true_age.unwrap(), p.predicted_age))
        .collect();
    let ages: Vec<f64> = per_subject.iter().map(|p| p.true_age.unwrap()).collect();

    let slice_mae_years = match kind {
        ModelKind::SliceNet2d => {
            let (sum, count) = per_subject
                .iter()
                .flat_map(|p| {
                    let age = p.true_age.unwrap();
                    p.slice_predictions
                        .as_deref()
                        .unwrap_or(&[])
                        .iter()
                        .map(move |s| (s - age).abs())
                })
                .fold((0.0f64, 0usize), |(s, c), d| (s + d, c + 1));
            (count > 0).then(|| sum / count as f64)
        }
        ModelKind::BrainNet3d => None,
    };

    Ok(EvalReport {
        mae_years,
        per_subject,
        age_histogram: age_histogram(&ages),
        scatter_rows,
        split,
        model_kind: kind,
        slice_mae_years,
    })
}
