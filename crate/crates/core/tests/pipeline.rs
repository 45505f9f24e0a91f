use mmpretrain::data::{generate_synthetic_dataset, ModalityPair};
use mmpretrain::losses::LossWeights;
use mmpretrain::masking::substitution_probability;
use mmpretrain::model::Network;
use mmpretrain::pipeline::{
    augment_pair, checkpoint_path, epoch_layout, epoch_order, load_checkpoint, load_checkpoint_expecting, lr_at,
    run_pretraining, save_checkpoint, sidecar_path, AugmentParams, ExperimentConfig, MetricsRow, RunOptions,
    TrainConfig, Trainer,
};
use proptest::prelude::*;

fn toy() -> ExperimentConfig {
    ExperimentConfig::toy()
}

#[test]
fn lr_schedule_examples() {
    let cfg = TrainConfig::full_scale();
    let spe = 7;
    let warmup = cfg.warmup_epochs * spe;
    let last = cfg.total_epochs * spe - 1;
    assert_eq!(lr_at(0, spe, &cfg), 1e-6);
    assert_eq!(lr_at(warmup, spe, &cfg), 1.5e-4);
    assert!(lr_at(last, spe, &cfg).abs() < 1e-20);
    let before = lr_at(warmup - 1, spe, &cfg);
    let slope = (1.5e-4 - 1e-6) / warmup as f64;
    assert!((1.5e-4 - before - slope).abs() < 1e-15);
    let after = lr_at(warmup + 1, spe, &cfg);
    assert!(1.5e-4 - after < 1e-9);
}

proptest! {
    #[test]
    fn lr_stays_in_range_and_decays(spe in 1usize..20, step in 0usize..400) {
        let cfg = TrainConfig::toy();
        let lr = lr_at(step, spe, &cfg);
        prop_assert!((0.0..=cfg.base_lr).contains(&lr));
        let warmup = cfg.warmup_epochs * spe;
        if step >= warmup {
            prop_assert!(lr_at(step + 1, spe, &cfg) <= lr);
        }
    }
}

#[test]
fn config_overrides_and_errors() {
    let cfg = ExperimentConfig::from_toml_str("", &["train.base_lr=0.0001".into(), "model.encoder_layers=3".into()]).unwrap();
    assert_eq!((cfg.train.base_lr, cfg.model.encoder_layers), (1e-4, 3));
    assert_eq!(ExperimentConfig::from_toml_str("", &[]).unwrap(), toy());
    assert_eq!(ExperimentConfig::from_toml_str(&toy().to_toml(), &[]).unwrap(), toy());

    for bad in ["train.bogus=1", "train.base_lr=fast", "nosection=1", "train.batch_size=0"] {
        assert!(ExperimentConfig::from_toml_str("", &[bad.into()]).is_err(), "{bad}");
    }
    assert!(ExperimentConfig::from_toml_str("[train]\nwhatever = 3\n", &[]).is_err());
    assert!(ExperimentConfig::from_toml_str("", &["train.warmup_epochs=50".into()]).is_err());

    let keys = ExperimentConfig::documented_keys();
    for key in ["train.base_lr", "train.loss_weights.lambda_hsic", "model.encoder_dim", "data.count"] {
        assert!(keys.iter().any(|k| k.starts_with(&format!("{key} = "))), "{key}");
    }

    let err = ExperimentConfig::load(std::path::Path::new("/nonexistent/cfg.toml"), &[]).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/cfg.toml"), "{err}");
}

fn twin(pair: &ModalityPair) -> ModalityPair {
    let mut other = pair.rgb.clone();
    other.modality = mmpretrain::raster::Modality::Other;
    ModalityPair::new(pair.rgb.clone(), other, pair.pair_id.clone(), pair.label).unwrap()
}

#[test]
fn augmentation_keeps_modalities_aligned() {
    let pair = twin(&generate_synthetic_dataset(1, 1, 32, 4).unwrap()[0]);
    let mut changed = 0;
    for seed in 0..40 {
        let out = augment_pair(&pair, seed).unwrap();
        assert_eq!(out.rgb.pixels(), out.other.pixels());
        assert_eq!(out.size(), pair.size());
        changed += (out.rgb != pair.rgb) as usize;
    }
    assert!(changed > 30);
}

#[test]
fn augmentation_examples() {
    let pair = generate_synthetic_dataset(2, 1, 32, 4).unwrap().remove(0);
    let id = AugmentParams::default();
    assert!(id.is_identity());
    assert_eq!(id.apply(&pair.rgb).unwrap(), pair.rgb);
    let half = AugmentParams { quarter_turns: 2, ..id };
    assert_eq!(half.apply(&half.apply(&pair.other).unwrap()).unwrap(), pair.other);
    let quarter = AugmentParams { quarter_turns: 1, ..id };
    let four = (0..4).try_fold(pair.rgb.clone(), |img, _| quarter.apply(&img)).unwrap();
    assert_eq!(four, pair.rgb);
    let flips = AugmentParams { hflip: true, vflip: true, ..id };
    assert_eq!(flips.apply(&pair.rgb).unwrap(), half.apply(&pair.rgb).unwrap());
}

#[test]
fn epoch_layout_and_order() {
    let cfg = toy();
    assert_eq!(epoch_layout(35, &cfg).unwrap(), (4, 2));
    assert!(epoch_layout(15, &cfg).is_err());
    let order = epoch_order(50, 3, 4);
    let mut sorted = order.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    assert_eq!(order, epoch_order(50, 3, 4));
    assert_ne!(order, epoch_order(50, 3, 5));
}

fn quiet(mut cfg: ExperimentConfig) -> ExperimentConfig {
    cfg.model.dropout = 0.0;
    cfg.model.drop_path = 0.0;
    cfg.train.grad_accum_steps = 1;
    cfg.train.batch_size = 4;
    cfg
}

#[test]
fn rec_only_weights_make_total_equal_rec() {
    let mut cfg = quiet(toy());
    cfg.train.loss_weights = LossWeights { lambda_rec: 1.0, lambda_align: 0.0, lambda_hsic: 0.0, lambda_cls: 0.0 };
    let pairs = generate_synthetic_dataset(5, 4, 32, 4).unwrap();
    let mut trainer = Trainer::new(&cfg, 1).unwrap();
    for epoch in [0, 13, 31] {
        let row = trainer.train_step(&pairs, epoch).unwrap();
        assert_eq!(row.total, row.rec);
        assert_eq!(row.rho, substitution_probability(epoch, &cfg.train.substitution));
        assert_eq!(row.epoch, epoch);
        assert!((0.0..=1.0).contains(&row.mask_rate_rgb) && (0.0..=1.0).contains(&row.mask_rate_other));
    }
}

#[test]
fn identical_runs_give_identical_rows() {
    let cfg = quiet(toy());
    let pairs = generate_synthetic_dataset(6, 4, 32, 4).unwrap();
    let run = || {
        let mut t = Trainer::new(&cfg, 1).unwrap();
        (0..3).map(|e| t.train_step(&pairs, e).unwrap()).collect::<Vec<MetricsRow>>()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.iter().map(MetricsRow::csv_line).collect::<Vec<_>>(), b.iter().map(MetricsRow::csv_line).collect::<Vec<_>>());
}

#[test]
fn checkpoint_round_trip_and_rejections() {
    let cfg = quiet(toy());
    let pairs = generate_synthetic_dataset(7, 4, 32, 4).unwrap();
    let mut trainer = Trainer::new(&cfg, 1).unwrap();
    trainer.train_step(&pairs, 0).unwrap();
    let record = trainer.record(1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.mmpt");
    save_checkpoint(&record, &path).unwrap();
    assert!(sidecar_path(&path).exists());
    assert_eq!(load_checkpoint(&path).unwrap(), record);
    assert_eq!(load_checkpoint_expecting(&path, &cfg.model).unwrap(), record);

    let mut other = cfg.model.clone();
    other.encoder_mlp_dim *= 2;
    let err = load_checkpoint_expecting(&path, &other).unwrap_err().to_string();
    let names: Vec<String> = Network::param_specs(&other).unwrap().into_iter().map(|s| s.name).collect();
    assert!(names.iter().any(|n| err.contains(n.as_str())), "{err}");

    let bytes = std::fs::read(&path).unwrap();
    let cut = dir.path().join("cut.mmpt");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    std::fs::copy(sidecar_path(&path), sidecar_path(&cut)).unwrap();
    assert!(load_checkpoint(&cut).is_err());
    assert!(load_checkpoint(&dir.path().join("absent.mmpt")).is_err());
}

#[test]
fn zero_epoch_run_writes_only_the_initial_checkpoint() {
    let mut cfg = toy();
    cfg.train.total_epochs = 0;
    cfg.train.warmup_epochs = 0;
    let pairs = generate_synthetic_dataset(8, 16, 32, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: dir.path().to_path_buf(), ..RunOptions::default() };
    let summary = run_pretraining(&cfg, &pairs, &opts).unwrap();
    assert!(summary.rows.is_empty());
    assert_eq!(summary.checkpoint, checkpoint_path(dir.path(), 0));
    assert_eq!((summary.record.step, summary.record.opt_step), (0, 0));
    let files = std::fs::read_dir(dir.path().join("checkpoints")).unwrap().count();
    assert_eq!(files, 2);
    assert_eq!(std::fs::read_to_string(&summary.metrics_csv).unwrap().trim(), MetricsRow::HEADER);
}

#[test]
fn resume_rejects_a_different_config() {
    let mut cfg = toy();
    cfg.train.total_epochs = 0;
    cfg.train.warmup_epochs = 0;
    let pairs = generate_synthetic_dataset(9, 16, 32, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { out_dir: dir.path().to_path_buf(), ..RunOptions::default() };
    let summary = run_pretraining(&cfg, &pairs, &opts).unwrap();
    let mut changed = cfg.clone();
    changed.train.base_lr *= 2.0;
    let resume = RunOptions { resume_from: Some(summary.checkpoint), ..opts };
    assert!(run_pretraining(&changed, &pairs, &resume).is_err());
}

#[test]
fn shipped_presets_parse() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    assert_eq!(ExperimentConfig::load(&root.join("toy.toml"), &[]).unwrap(), toy());
    assert_eq!(ExperimentConfig::load(&root.join("full_scale.toml"), &[]).unwrap(), ExperimentConfig::full_scale());
}
