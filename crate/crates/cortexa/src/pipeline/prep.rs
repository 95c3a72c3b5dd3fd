//! Cohort-level intensity preprocessing: reference construction from the
//! train split and batch histogram-match + min-max application.

use super::manifest::{Manifest, Split, SubjectRecord};
use super::PipelineError;
use crate::nifti::{read_nifti, write_nifti};
use crate::preprocess::{build_reference_histogram, histogram_match, minmax_normalize, QuantileTable};
use rayon::prelude::*;
use std::path::Path;

/// Builds the matching reference from the volumes of one split.
pub fn reference_from_split(
    manifest: &Manifest,
    split: Split,
    q: usize,
) -> Result<QuantileTable, PipelineError> {
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(PipelineError::EmptySplit(split));
    }
    let volumes = records
        .par_iter()
        .map(|r| Ok(read_nifti(&r.volume_path)?.1))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(build_reference_histogram(&volumes, q)?)
}

/// Histogram-matches every volume against `table`, min-max scales to 0–255,
/// and writes `volumes/<subject>.nii` plus `manifest.csv` under `out_dir`.
/// Returns the new manifest with paths resolved against `out_dir`.
pub fn preprocess_cohort(
    manifest: &Manifest,
    table: &QuantileTable,
    out_dir: &Path,
) -> Result<Manifest, PipelineError> {
    std::fs::create_dir_all(out_dir.join("volumes"))?;
    let records = manifest
        .records()
        .par_iter()
        .map(|r| -> Result<SubjectRecord, PipelineError> {
            let (_, volume) = read_nifti(&r.volume_path)?;
            let matched = histogram_match(&volume, table)?;
            let scaled = minmax_normalize(&matched)?;
            let rel = format!("volumes/{}.nii", r.subject_id);
            write_nifti(&scaled, &out_dir.join(&rel))?;
            Ok(SubjectRecord {
                volume_path: rel.into(),
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = Manifest::new(records)?;
    out.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(out.resolved_against(out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{generate_synthetic_cohort, SynthConfig};

    #[test]
    fn preprocessed_cohort_is_matched_and_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SynthConfig::new(5, 31);
        cfg.grid = [16, 18, 16];
        let manifest = generate_synthetic_cohort(&cfg, &dir.path().join("raw")).unwrap();
        let table = reference_from_split(&manifest, Split::Train, 64).unwrap();
        let out = preprocess_cohort(&manifest, &table, &dir.path().join("pre")).unwrap();
        assert_eq!(out.len(), 5);
        for r in out.records() {
            let (_, v) = read_nifti(&r.volume_path).unwrap();
            let (lo, hi) = v.compute_range();
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 255.0);
        }
    }
}
