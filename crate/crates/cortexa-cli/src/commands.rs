//! Subcommand implementations.

use crate::Command;
use cortexa::models::{predict_subject_sliced, predict_volume_3d, Model, ModelKind};
use cortexa::nifti::read_nifti;
use cortexa::pipeline::{
    evaluate_mae, export_report, generate_synthetic_cohort, log_to_csv, preprocess_cohort,
    read_metrics, reference_from_split, train_model, Manifest, PipelineError, Split, SynthConfig,
    TrainConfig,
};
use cortexa::preprocess::{center_crop, extract_center_slices, QuantileTable};
use serde_json::json;
use std::path::Path;

/// Every artifact directory gets the effective configuration echoed into it.
fn echo_config(out_dir: &Path, value: &serde_json::Value) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let text = format!("{}\n", serde_json::to_string_pretty(value)?);
    cortexa::pipeline::write_atomic(&out_dir.join("config.json"), text.as_bytes())?;
    Ok(())
}

pub fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Synth {
            n,
            seed,
            out,
            age_min,
            age_max,
            grid,
            train_fraction,
            noise_sigma,
        } => {
            let mut cfg = SynthConfig::new(n, seed);
            cfg.age_range = (age_min, age_max);
            cfg.grid = [grid[0], grid[1], grid[2]];
            cfg.train_fraction = train_fraction;
            cfg.noise_sigma = noise_sigma;
            echo_config(&out, &serde_json::to_value(&cfg)?)?;
            let manifest = generate_synthetic_cohort(&cfg, &out)?;
            eprintln!(
                "wrote {} subjects ({} train / {} val) under {}",
                manifest.len(),
                manifest.split(Split::Train).len(),
                manifest.split(Split::Val).len(),
                out.display()
            );
            Ok(())
        }

        Command::HistRef { manifest, q, out } => {
            let manifest = Manifest::read_csv(&manifest)?;
            let table = reference_from_split(&manifest, Split::Train, q)?;
            table.save(&out)?;
            eprintln!(
                "reference table with {} levels from {} train volumes -> {}",
                table.len(),
                manifest.split(Split::Train).len(),
                out.display()
            );
            Ok(())
        }

        Command::Preprocess {
            manifest,
            reference,
            out,
        } => {
            echo_config(
                &out,
                &json!({
                    "manifest": manifest,
                    "ref": reference,
                }),
            )?;
            let manifest = Manifest::read_csv(&manifest)?;
            let table = QuantileTable::load(&reference)?;
            let done = preprocess_cohort(&manifest, &table, &out)?;
            eprintln!(
                "preprocessed {} volumes -> {}",
                done.len(),
                out.join("manifest.csv").display()
            );
            Ok(())
        }

        Command::Train {
            config,
            manifest,
            out,
            seed,
            epochs,
            batch_size,
            lr,
        } => {
            let text = std::fs::read_to_string(&config)?;
            let mut cfg: TrainConfig = serde_json::from_str(&text)?;
            // flags override config-file values
            if let Some(s) = seed {
                cfg.seed = s;
                cfg.augment.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.schedule.initial_lr = l;
            }
            echo_config(&out, &serde_json::to_value(&cfg)?)?;

            let manifest = Manifest::read_csv(&manifest)?;
            let result = train_model(&manifest, &cfg, |e| {
                eprintln!(
                    "epoch {:>3}  lr {:.3e}  train_mse {:>12.4}  val_mae {:>8.3}",
                    e.epoch, e.lr, e.train_loss, e.val_mae
                );
            })?;

            cortexa::pipeline::write_atomic(
                &out.join("train_log.csv"),
                log_to_csv(&result.log).as_bytes(),
            )?;
            let ck_path = out.join("checkpoint.cxa");
            cortexa::engine::write_checkpoint(&result.checkpoint, &ck_path)?;
            eprintln!(
                "best epoch {} (val MAE {:.3}) -> {}",
                result.best_epoch,
                result.best_val_mae,
                ck_path.display()
            );
            Ok(())
        }

        Command::Predict {
            checkpoint,
            volume,
            subject_id,
        } => {
            let ck = cortexa::engine::read_checkpoint(&checkpoint)?;
            let k = ck.header.meta.slices_per_subject.unwrap_or(40);
            let (model, _) = Model::from_checkpoint(&ck)?;
            let subject = subject_id.unwrap_or_else(|| {
                volume
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "subject".into())
            });
            let (_, vol) = read_nifti(&volume)?;
            let prediction = match model.spec().kind {
                ModelKind::BrainNet3d => predict_volume_3d(&model, &vol, &subject)?,
                ModelKind::SliceNet2d => {
                    let slices = extract_center_slices(&vol, k, &subject)?;
                    let shape = &model.spec().input_shape;
                    let cropped = slices
                        .iter()
                        .map(|s| center_crop(s, shape[0], shape[1]))
                        .collect::<Result<Vec<_>, _>>()?;
                    predict_subject_sliced(&model, &cropped, k)?
                }
            };
            println!("{}", serde_json::to_string(&prediction)?);
            Ok(())
        }

        Command::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => {
            echo_config(
                &out,
                &json!({
                    "checkpoint": checkpoint,
                    "manifest": manifest,
                    "split": split,
                }),
            )?;
            let ck = cortexa::engine::read_checkpoint(&checkpoint)?;
            let k = ck.header.meta.slices_per_subject.unwrap_or(40);
            let (model, _) = Model::from_checkpoint(&ck)?;
            let manifest = Manifest::read_csv(&manifest)?;
            let report = evaluate_mae(&model, &manifest, split, k)?;
            if let Some(slice_mae) = report.slice_mae_years {
                eprintln!("per-slice MAE (diagnostic only): {slice_mae:.3} years");
            }
            export_report(&report, &out)?;
            eprintln!(
                "{} subjects on {}: MAE {:.3} years -> {}",
                report.per_subject.len(),
                split,
                report.mae_years,
                out.display()
            );
            Ok(())
        }

        Command::Report { eval_dir } => {
            let metrics = read_metrics(&eval_dir)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
    }
}
