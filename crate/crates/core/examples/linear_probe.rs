//! Linear probe of a briefly pretrained encoder against a random-init
//! encoder on a held-out synthetic benchmark, with a confusion matrix PNG.
//!
//! cargo run --release --example linear_probe [out_dir]

use std::path::PathBuf;

use mmpretrain::data::generate_synthetic_dataset;
use mmpretrain::eval::{extract_features, linear_probe, load_encoder, random_encoder, write_confusion_png};
use mmpretrain::pipeline::{run_pretraining, ExperimentConfig, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("mmpt-probe"), PathBuf::from);
    let mut cfg = ExperimentConfig::toy();
    cfg.train.total_epochs = 3;
    cfg.train.warmup_epochs = 1;
    let pretrain_pairs = cfg.data.load(cfg.model.patch_size)?;
    let opts = RunOptions {
        out_dir: out.clone(),
        ..RunOptions::default()
    };
    let summary = run_pretraining(&cfg, &pretrain_pairs, &opts)?;

    let benchmark = generate_synthetic_dataset(1000, 100, cfg.model.image_size, 4)?;
    let pretrained = load_encoder(&summary.checkpoint, &cfg.model)?;
    let random = random_encoder(&cfg.model, 0)?;
    for (tag, encoder) in [("pretrained", &pretrained), ("random-init", &random)] {
        let table = extract_features(encoder, &cfg.model, &benchmark, tag)?;
        let result = linear_probe(&table, 0)?;
        println!(
            "{tag:>11}: top-1 {:.2} on {} test pairs ({} train, {} iterations)",
            result.accuracy, result.test_size, result.train_size, result.iterations
        );
        let png = out.join(format!("confusion_{tag}.png"));
        write_confusion_png(&png, &result.confusion)?;
        println!("             confusion {:?} -> {}", result.confusion, png.display());
    }
    Ok(())
}
