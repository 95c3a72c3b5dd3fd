//! Minibatch MSE training with Adam and the linear LR ramp.
//!
//! The 3D path trains one sample per subject on whole volumes; the 2D path
//! treats every (subject, central slice) pair as an independent sample
//! carrying the subject's age, while validation always fuses slice
//! predictions per subject. The checkpoint returned is the best-validation-MAE
//! epoch, not the last one. Bit-for-bit deterministic for a fixed
//! (config, seed, data).

use super::manifest::{Manifest, Split, SubjectRecord};
use super::PipelineError;
use crate::augment::{apply_augmentation, AugmentConfig};
use crate::engine::{
    AdamState, Checkpoint, CheckpointMeta, Graph, LrSchedule, Phase, Tensor,
};
use crate::models::{median, Model, ModelKind, ModelSpec};
use crate::nifti::read_nifti;
use crate::preprocess::{center_crop, extract_center_slices};
use crate::rng::{seeded, DOMAIN_DROPOUT, DOMAIN_SHUFFLE};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn default_slices() -> usize {
    40
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// 2D path only: central axial slices per subject.
    #[serde(default = "default_slices")]
    pub slices_per_subject: usize,
}

impl TrainConfig {
    /// 3D defaults: 80 epochs, batch 10, lr 1e-3 decaying linearly to 0.
    pub fn defaults_3d(seed: u64) -> Self {
        Self {
            model: ModelSpec::brainnet3d_default(),
            epochs: 80,
            batch_size: 10,
            schedule: LrSchedule {
                initial_lr: 1e-3,
                total_epochs: 80,
                floor: 0.0,
            },
            augment: AugmentConfig::small(seed),
            seed,
            slices_per_subject: default_slices(),
        }
    }

    /// 2D defaults: 50 epochs, batch 32, lr 1e-4 decaying linearly to 0,
    /// 40 slices per subject.
    pub fn defaults_2d(seed: u64) -> Self {
        Self {
            model: ModelSpec::slicenet2d_default(),
            epochs: 50,
            batch_size: 32,
            schedule: LrSchedule {
                initial_lr: 1e-4,
                total_epochs: 50,
                floor: 0.0,
            },
            augment: AugmentConfig::small(seed),
            seed,
            slices_per_subject: default_slices(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.augment
            .validate()
            .map_err(PipelineError::Augment)?;
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(PipelineError::BadConfig(format!(
                "epochs {} / batch_size {}",
                self.epochs, self.batch_size
            )));
        }
        if self.epochs > self.schedule.total_epochs + 1 {
            return Err(PipelineError::BadConfig(format!(
                "{} epochs outruns the {}-epoch schedule",
                self.epochs, self.schedule.total_epochs
            )));
        }
        if self.model.kind == ModelKind::SliceNet2d && self.slices_per_subject == 0 {
            return Err(PipelineError::BadConfig(
                "slices_per_subject must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub samples_per_epoch: usize,
}

struct TrainSample {
    tensor: Tensor<f32>,
    age: f32,
}

struct ValSubject {
    age: f64,
    tensors: Vec<Tensor<f32>>,
}

fn load_spatial(record: &SubjectRecord, spec: &ModelSpec) -> Result<Tensor<f32>, PipelineError> {
    let (_, volume) = read_nifti(&record.volume_path)?;
    let t = volume.to_tensor();
    if t.shape() != spec.input_shape.as_slice() {
        return Err(PipelineError::Model(crate::models::ModelError::ShapeMismatch(
            format!(
                "subject '{}': volume tensor {:?} vs model input {:?}",
                record.subject_id,
                t.shape(),
                spec.input_shape
            ),
        )));
    }
    Ok(t)
}

fn load_slices(
    record: &SubjectRecord,
    spec: &ModelSpec,
    k: usize,
) -> Result<Vec<Tensor<f32>>, PipelineError> {
    let (_, volume) = read_nifti(&record.volume_path)?;
    let slices = extract_center_slices(&volume, k, &record.subject_id)?;
    slices
        .iter()
        .map(|s| {
            let cropped = center_crop(s, spec.input_shape[0], spec.input_shape[1])?;
            Ok(cropped.to_tensor())
        })
        .collect()
}

/// MAE of the model on held-out subjects (3D: whole volume; 2D: median over
/// slice predictions).
fn validation_mae(
    model: &Model<f32>,
    subjects: &[ValSubject],
    batch_size: usize,
) -> Result<f64, PipelineError> {
    let preds = match model.spec().kind {
        ModelKind::BrainNet3d => {
            let tensors: Vec<&Tensor<f32>> = subjects.iter().map(|s| &s.tensors[0]).collect();
            let mut out = Vec::with_capacity(subjects.len());
            for chunk in tensors.chunks(batch_size.max(1)) {
                let owned: Vec<Tensor<f32>> = chunk.iter().map(|t| (*t).clone()).collect();
                let batch = Tensor::stack_batch(&owned)?;
                out.extend(model.predict_batch(&batch)?.into_iter().map(|v| v as f64));
            }
            out
        }
        ModelKind::SliceNet2d => subjects
            .par_iter()
            .map(|s| {
                let batch = Tensor::stack_batch(&s.tensors)?;
                let slice_preds: Vec<f64> = model
                    .predict_batch(&batch)?
                    .into_iter()
                    .map(|v| v as f64)
                    .collect();
                Ok(median(&slice_preds))
            })
            .collect::<Result<Vec<f64>, PipelineError>>()?,
    };
    let mae = preds
        .iter()
        .zip(subjects)
        .map(|(p, s)| (p - s.age).abs())
        .sum::<f64>()
        / subjects.len() as f64;
    Ok(mae)
}

/// Runs `cfg.epochs` epochs over the manifest's train split, logging per-epoch
/// train MSE and validation MAE, and returns the checkpoint of the epoch with
/// the lowest validation MAE (earliest wins ties).
pub fn train_model<F: FnMut(&EpochLog)>(
    manifest: &Manifest,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutput, PipelineError> {
    cfg.validate()?;
    let spec = &cfg.model;
    let train_records = manifest.split(Split::Train);
    let val_records = manifest.split(Split::Val);
    if train_records.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Train));
    }
    if val_records.is_empty() {
        return Err(PipelineError::EmptySplit(Split::Val));
    }

    let is_2d = spec.kind == ModelKind::SliceNet2d;
    let k = cfg.slices_per_subject;

    // Each training sample is one (subject) volume or one (subject, slice)
    // pair; slices inherit the subject's age, and a subject's slices can
    // never straddle the split because membership is decided per subject.
    let samples: Vec<TrainSample> = train_records
        .par_iter()
        .map(|r| -> Result<Vec<TrainSample>, PipelineError> {
            if is_2d {
                Ok(load_slices(r, spec, k)?
                    .into_iter()
                    .map(|tensor| TrainSample {
                        tensor,
                        age: r.age as f32,
                    })
                    .collect())
            } else {
                Ok(vec![TrainSample {
                    tensor: load_spatial(r, spec)?,
                    age: r.age as f32,
                }])
            }
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let val_subjects: Vec<ValSubject> = val_records
        .par_iter()
        .map(|r| -> Result<ValSubject, PipelineError> {
            let tensors = if is_2d {
                load_slices(r, spec, k)?
            } else {
                vec![load_spatial(r, spec)?]
            };
            Ok(ValSubject {
                age: r.age,
                tensors,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let n_samples = samples.len();

    // Center the regression on the train-split mean age unless the config
    // pins an explicit offset; the head then learns residuals.
    let mut spec = spec.clone();
    if spec.output_offset == 0.0 {
        spec.output_offset = train_records.iter().map(|r| r.age).sum::<f64>()
            / train_records.len() as f64;
    }
    let spec = &spec;
    let offset = spec.output_offset as f32;

    let mut model: Model<f32> = Model::build(spec, cfg.seed)?;
    let mut adam: Vec<AdamState<f32>> = model
        .params()
        .iter()
        .map(|p| AdamState::new(p.len()))
        .collect();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<Tensor<f32>>, Vec<AdamState<f32>>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch)?;

        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut seeded(cfg.seed, DOMAIN_SHUFFLE, epoch as u64));

        let mut loss_sum = 0.0f64;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let augmented: Vec<Tensor<f32>> = chunk
                .par_iter()
                .map(|&i| {
                    let draw = epoch as u64 * n_samples as u64 + i as u64;
                    let mut t = apply_augmentation(&samples[i].tensor, &cfg.augment, draw);
                    model.scale_input(&mut t);
                    t
                })
                .collect();
            let batch = Tensor::stack_batch(&augmented)?;
            let ages = Tensor::new(
                vec![chunk.len(), 1],
                chunk.iter().map(|&i| samples[i].age - offset).collect(),
            )?;

            let mut g: Graph<f32> = Graph::new();
            let param_ids = model.bind(&mut g);
            let input = g.input(batch);
            let target = g.input(ages);
            let mut dropout_rng = seeded(
                cfg.seed,
                DOMAIN_DROPOUT,
                ((epoch as u64) << 32) | step as u64,
            );
            let out = model.forward(&mut g, &param_ids, input, Phase::Train, Some(&mut dropout_rng))?;
            let loss = g.mse_loss(out, target)?;
            let loss_value = g.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(PipelineError::DivergedLoss { epoch });
            }
            g.backward(loss)?;

            for (idx, id) in param_ids.iter().enumerate() {
                let grad = g
                    .grad(*id)
                    .ok_or(crate::engine::EngineError::MissingGradient)?;
                adam[idx].step(model.params_mut()[idx].data_mut(), grad, lr as f32)?;
            }
            loss_sum += loss_value * chunk.len() as f64;
        }

        let train_loss = loss_sum / n_samples as f64;
        let val_mae = validation_mae(&model, &val_subjects, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss,
            val_mae,
        };
        on_epoch(&entry);
        log.push(entry);

        let improved = best.as_ref().map(|(_, m, _, _)| val_mae < *m).unwrap_or(true);
        if improved {
            best = Some((epoch, val_mae, model.params().to_vec(), adam.clone()));
        }
    }

    let (best_epoch, best_val_mae, best_params, best_adam) =
        best.expect("at least one epoch ran");
    let best_model = Model::from_parts(spec.clone(), best_params)?;
    let meta = CheckpointMeta {
        best_epoch,
        best_val_mae,
        seed: cfg.seed,
        slices_per_subject: is_2d.then_some(k),
    };
    let checkpoint = best_model.to_checkpoint(cfg.schedule, &best_adam, meta)?;
    Ok(TrainOutput {
        checkpoint,
        log,
        best_epoch,
        best_val_mae,
        samples_per_epoch: n_samples,
    })
}

/// Serialize the per-epoch log as `epoch,lr,train_loss,val_mae` CSV.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_mae\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.lr, e.train_loss, e.val_mae
        ));
    }
    out
}
