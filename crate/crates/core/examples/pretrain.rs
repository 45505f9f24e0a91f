//! Toy pretraining run: 32 synthetic pairs, the dim-64 model, a few epochs.
//! Prints the loss components per optimizer update and where the metrics
//! CSV and checkpoints were written.
//!
//! cargo run --release --example pretrain [out_dir]

use std::path::PathBuf;

use mmpretrain::pipeline::{run_pretraining, ExperimentConfig, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("mmpt-pretrain"), PathBuf::from);
    let mut cfg = ExperimentConfig::toy();
    cfg.train.total_epochs = 4;
    cfg.train.warmup_epochs = 1;
    cfg.validate()?;
    let pairs = cfg.data.load(cfg.model.patch_size)?;
    let opts = RunOptions {
        out_dir: out,
        ..RunOptions::default()
    };
    let summary = run_pretraining(&cfg, &pairs, &opts)?;
    println!("{:>4} {:>5} {:>10} {:>9} {:>8} {:>8} {:>8} {:>9}", "step", "epoch", "lr", "rec", "align", "hsic", "cls", "total");
    for row in &summary.rows {
        println!(
            "{:>4} {:>5} {:>10.3e} {:>9.4} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            row.step, row.epoch, row.lr, row.rec, row.align, row.hsic, row.cls, row.total
        );
    }
    println!("metrics {}", summary.metrics_csv.display());
    println!("final checkpoint {} (update {})", summary.checkpoint.display(), summary.record.opt_step);
    Ok(())
}
