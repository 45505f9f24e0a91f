//! Small fine-tune: the whole encoder plus a linear head trained on the
//! labelled synthetic benchmark, compared with a linear probe of the same
//! starting weights.
//!
//! cargo run --release --example finetune [out_dir]

use std::path::PathBuf;

use mmpretrain::data::generate_synthetic_dataset;
use mmpretrain::eval::{extract_features, finetune_small, linear_probe, FinetuneConfig};
use mmpretrain::pipeline::{run_pretraining, ExperimentConfig, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("mmpt-finetune"), PathBuf::from);
    let mut cfg = ExperimentConfig::toy();
    cfg.train.total_epochs = 2;
    cfg.train.warmup_epochs = 1;
    let pairs = cfg.data.load(cfg.model.patch_size)?;
    let summary = run_pretraining(
        &cfg,
        &pairs,
        &RunOptions {
            out_dir: out,
            ..RunOptions::default()
        },
    )?;

    let benchmark = generate_synthetic_dataset(1000, 100, cfg.model.image_size, 4)?;
    let (net, store) = summary.record.network()?;
    let probe = linear_probe(&extract_features(&net.encoder, &cfg.model, &benchmark, "pretrained")?, 0)?;
    let ft_cfg = FinetuneConfig {
        epochs: 5,
        ..FinetuneConfig::default()
    };
    let ft = finetune_small(&store, &cfg.model, &benchmark, &ft_cfg, 0)?;
    println!("linear probe top-1 {:.2}", probe.accuracy);
    println!("fine-tune    top-1 {:.2} after {} epochs", ft.accuracy, ft_cfg.epochs);
    println!("fine-tune confusion {:?}", ft.confusion);
    Ok(())
}
