use cortexa::augment::AugmentConfig;
use cortexa::engine::LrSchedule;
use cortexa::models::ModelSpec;
use cortexa::pipeline::{
    generate_synthetic_cohort, preprocess_cohort, reference_from_split, train_model, Split,
    SynthConfig, TrainConfig,
};

#[test]
#[ignore]
fn exp_3d_identity_augment() {
    let base = tempfile::tempdir().unwrap();
    let seed = 606u64;
    let mut synth = SynthConfig::new(240, seed);
    synth.grid = [20, 24, 20];
    synth.train_fraction = 200.0 / 240.0;
    let raw = generate_synthetic_cohort(&synth, &base.path().join("raw")).unwrap();
    let table = reference_from_split(&raw, Split::Train, 1000).unwrap();
    let manifest = preprocess_cohort(&raw, &table, &base.path().join("pre")).unwrap();

    let cfg = TrainConfig {
        model: ModelSpec { input_shape: vec![20, 24, 20], ..ModelSpec::brainnet3d_default() },
        epochs: 16,
        batch_size: 10,
        schedule: LrSchedule { initial_lr: 1e-3, total_epochs: 16, floor: 0.0 },
        augment: AugmentConfig::identity(seed),
        seed,
        slices_per_subject: 8,
    };
    let t0 = std::time::Instant::now();
    train_model(&manifest, &cfg, |e| {
        eprintln!("idaug epoch {:>2} lr {:.2e} mse {:>9.2} val {:>7.3}", e.epoch, e.lr, e.train_loss, e.val_mae);
    }).unwrap();
    eprintln!("identity-augment run: {:.0?}", t0.elapsed());
}
