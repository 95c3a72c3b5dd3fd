//! Synthetic phantom cohort.
//!
//! Each subject's volume is an ellipsoidal "brain" with a central ellipsoidal
//! "ventricle" whose radii grow affinely with age and a "cortex" shell whose
//! intensity falls affinely with age, plus seeded Gaussian noise and a random
//! per-volume global intensity scale (which histogram matching must undo).
//! Openly artificial — its job is to make the pipeline falsifiable at desk
//! scale, not to look like tissue.

use super::manifest::{split_manifest, Manifest, Split, SubjectRecord};
use super::PipelineError;
use crate::nifti::{write_nifti, Volume};
use crate::rng::{seeded, DOMAIN_SYNTH};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Brain ellipsoid semi-axes as a fraction of grid extent.
const BRAIN_FRACTION: f64 = 0.40;
/// Ventricle semi-axes as a fraction of the brain's, at the cohort mid-age.
const VENTRICLE_MID_FRACTION: f64 = 0.28;
/// Relative ventricle growth from mid-age to the age-range extremes.
const VENTRICLE_GROWTH: f64 = 0.30;
/// Normalized brain radius where the cortex shell begins.
const CORTEX_INNER: f64 = 0.80;

const VENTRICLE_INTENSITY: f64 = 40.0;
const INTERIOR_INTENSITY: f64 = 100.0;
const CORTEX_MID_INTENSITY: f64 = 170.0;
const CORTEX_AGE_SWING: f64 = 40.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub age_range: (f64, f64),
    pub seed: u64,
    pub grid: [usize; 3],
    pub spacing: [f32; 3],
    pub noise_sigma: f32,
    pub scale_range: (f32, f32),
    pub train_fraction: f64,
}

impl SynthConfig {
    /// Cohort defaults: ages 55–96 on the 2 mm 91×109×91 grid, noise σ = 5,
    /// per-volume scale in [0.8, 1.2], 80/20 train/val.
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            age_range: (55.0, 96.0),
            seed,
            grid: [91, 109, 91],
            spacing: [2.0, 2.0, 2.0],
            noise_sigma: 5.0,
            scale_range: (0.8, 1.2),
            train_fraction: 0.8,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n < 1 {
            return Err(PipelineError::BadRange("n must be at least 1".into()));
        }
        let (lo, hi) = self.age_range;
        if !(lo < hi) || lo < super::manifest::AGE_MIN || hi > super::manifest::AGE_MAX {
            return Err(PipelineError::BadRange(format!(
                "age_range ({lo}, {hi}) outside [{}, {}]",
                super::manifest::AGE_MIN,
                super::manifest::AGE_MAX
            )));
        }
        if self.grid.iter().any(|&e| e < 4) {
            return Err(PipelineError::BadRange(format!(
                "grid {:?} too small",
                self.grid
            )));
        }
        let (s0, s1) = self.scale_range;
        if !(0.0 < s0 && s0 <= s1) {
            return Err(PipelineError::BadRange(format!(
                "scale_range ({s0}, {s1})"
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(PipelineError::BadRange(format!(
                "noise_sigma {}",
                self.noise_sigma
            )));
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return Err(PipelineError::BadRange(format!(
                "train_fraction {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Age drawn for subject `index`; first draw of the subject's stream.
fn draw_age(cfg: &SynthConfig, index: usize) -> f64 {
    let mut rng = seeded(cfg.seed, DOMAIN_SYNTH, index as u64);
    rng.random_range(cfg.age_range.0..=cfg.age_range.1)
}

/// Deterministic phantom for `(cfg.seed, index)`. The returned age is the
/// subject's chronological age label.
pub fn synth_volume(cfg: &SynthConfig, index: usize) -> (f64, Volume) {
    let mut rng = seeded(cfg.seed, DOMAIN_SYNTH, index as u64);
    let age = rng.random_range(cfg.age_range.0..=cfg.age_range.1);
    let scale = rng.random_range(cfg.scale_range.0..=cfg.scale_range.1) as f64;
    (age, synth_volume_at(cfg, age, scale, &mut rng))
}

/// Phantom at an explicit age and intensity scale; noise (if any) is drawn
/// from `rng`.
pub fn synth_volume_at(
    cfg: &SynthConfig,
    age: f64,
    scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Volume {
    let noise = Normal::new(0.0f64, cfg.noise_sigma.max(0.0) as f64).expect("finite sigma");

    let (lo, hi) = cfg.age_range;
    let t = 2.0 * (age - lo) / (hi - lo) - 1.0; // in [-1, 1]

    let [nx, ny, nz] = cfg.grid;
    let center = [
        (nx as f64 - 1.0) / 2.0,
        (ny as f64 - 1.0) / 2.0,
        (nz as f64 - 1.0) / 2.0,
    ];
    let brain = [
        BRAIN_FRACTION * nx as f64,
        BRAIN_FRACTION * ny as f64,
        BRAIN_FRACTION * nz as f64,
    ];
    let vent_fraction = VENTRICLE_MID_FRACTION * (1.0 + VENTRICLE_GROWTH * t);
    let cortex_intensity = CORTEX_MID_INTENSITY - CORTEX_AGE_SWING * t;

    // x is the fastest axis, so iterating z → y → x walks the data linearly.
    let mut data = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let dx = (x as f64 - center[0]) / brain[0];
                let dy = (y as f64 - center[1]) / brain[1];
                let dz = (z as f64 - center[2]) / brain[2];
                let rho2 = dx * dx + dy * dy + dz * dz;
                if rho2 > 1.0 {
                    data.push(0.0);
                    continue;
                }
                let rho = rho2.sqrt();
                let base = if rho <= vent_fraction {
                    VENTRICLE_INTENSITY
                } else if rho >= CORTEX_INNER {
                    cortex_intensity
                } else {
                    INTERIOR_INTENSITY
                };
                let noisy = if cfg.noise_sigma > 0.0 {
                    base + noise.sample(rng)
                } else {
                    base
                };
                data.push(((noisy * scale).max(1.0)) as f32);
            }
        }
    }

    Volume::new(cfg.grid, cfg.spacing, data).expect("phantom is finite by construction")
}

/// Ventricle voxel count of a noise-free phantom. The ventricle is the
/// darkest foreground class; thresholding at the midpoint between the
/// ventricle and interior plateaus, expressed relative to the foreground
/// minimum, makes the count invariant to the per-volume intensity scale.
pub fn ventricle_voxel_count(volume: &Volume) -> usize {
    let lo = volume
        .data()
        .iter()
        .copied()
        .filter(|v| *v != 0.0)
        .fold(f32::INFINITY, f32::min);
    let cut = lo * ((VENTRICLE_INTENSITY + INTERIOR_INTENSITY) / (2.0 * VENTRICLE_INTENSITY)) as f32;
    volume
        .data()
        .iter()
        .filter(|&&v| v != 0.0 && v < cut)
        .count()
}

/// Generates the cohort under `out_dir`: `volumes/sub_NNNN.nii` plus
/// `manifest.csv` with seeded train/val tags. Returns the manifest with
/// paths resolved against `out_dir`.
pub fn generate_synthetic_cohort(
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let vol_dir = out_dir.join("volumes");
    std::fs::create_dir_all(&vol_dir)?;

    (0..cfg.n).into_par_iter().try_for_each(|i| {
        let (_, volume) = synth_volume(cfg, i);
        write_nifti(&volume, &vol_dir.join(format!("sub_{i:04}.nii")))?;
        Ok::<(), PipelineError>(())
    })?;

    let records: Vec<SubjectRecord> = (0..cfg.n)
        .map(|i| SubjectRecord {
            subject_id: format!("sub_{i:04}"),
            age: draw_age(cfg, i),
            volume_path: PathBuf::from(format!("volumes/sub_{i:04}.nii")),
            split: Split::Train,
        })
        .collect();
    let manifest = split_manifest(records, cfg.train_fraction, cfg.seed)?;
    manifest.write_csv(&out_dir.join("manifest.csv"))?;
    Ok(manifest.resolved_against(out_dir))
}
