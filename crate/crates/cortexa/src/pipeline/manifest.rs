//! Subject manifests: CSV bookkeeping and the seeded train/val split.

use super::{write_atomic, PipelineError};
use crate::rng::{seeded, DOMAIN_SPLIT};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub const AGE_MIN: f64 = 18.0;
pub const AGE_MAX: f64 = 120.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub age: f64,
    pub volume_path: PathBuf,
    pub split: Split,
}

/// An ordered set of subject records with unique ids and plausible ages.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    records: Vec<SubjectRecord>,
}

impl Manifest {
    pub fn new(records: Vec<SubjectRecord>) -> Result<Self, PipelineError> {
        if records.is_empty() {
            return Err(PipelineError::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.subject_id.as_str()) {
                return Err(PipelineError::BadManifest(format!(
                    "duplicate subject id '{}'",
                    r.subject_id
                )));
            }
            if !(AGE_MIN..=AGE_MAX).contains(&r.age) || !r.age.is_finite() {
                return Err(PipelineError::BadManifest(format!(
                    "subject '{}' age {} outside [{AGE_MIN}, {AGE_MAX}]",
                    r.subject_id, r.age
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&SubjectRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Replace relative volume paths with `base`-anchored ones.
    pub fn resolved_against(&self, base: &Path) -> Manifest {
        let records = self
            .records
            .iter()
            .map(|r| {
                let volume_path = if r.volume_path.is_relative() {
                    base.join(&r.volume_path)
                } else {
                    r.volume_path.clone()
                };
                SubjectRecord {
                    volume_path,
                    ..r.clone()
                }
            })
            .collect();
        Manifest { records }
    }

    /// Load `subject_id,age,volume_path,split` CSV. Relative volume paths are
    /// resolved against the manifest's directory, and every path must exist.
    pub fn read_csv(path: &Path) -> Result<Self, PipelineError> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut records = Vec::new();
        for row in reader.deserialize::<SubjectRecord>() {
            records.push(row?);
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let manifest = Manifest::new(records)?.resolved_against(base);
        for r in &manifest.records {
            if !r.volume_path.exists() {
                return Err(PipelineError::BadManifest(format!(
                    "volume for '{}' not found at {}",
                    r.subject_id,
                    r.volume_path.display()
                )));
            }
        }
        Ok(manifest)
    }

    /// Write records as CSV (paths as stored), atomically.
    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            writer.serialize(r)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| PipelineError::BadManifest(e.to_string()))?;
        write_atomic(path, &bytes)?;
        Ok(())
    }
}

/// Seeded shuffle, then the first `round(N·fraction)` subjects become `train`
/// and the rest `val`. Record order is preserved; only tags change. Test
/// membership is a cohort property, never assigned here.
pub fn split_manifest(
    records: Vec<SubjectRecord>,
    train_fraction: f64,
    seed: u64,
) -> Result<Manifest, PipelineError> {
    if records.is_empty() {
        return Err(PipelineError::EmptyManifest);
    }
    if !(0.0 < train_fraction && train_fraction < 1.0) {
        return Err(PipelineError::BadRange(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let n = records.len();
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed, DOMAIN_SPLIT, 0);
    order.shuffle(&mut rng);

    let mut records = records;
    for (rank, idx) in order.into_iter().enumerate() {
        records[idx].split = if rank < n_train { Split::Train } else { Split::Val };
    }
    Manifest::new(records)
}
