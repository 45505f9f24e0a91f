//! Checkpoint and resume: an uninterrupted run and a run stopped after two
//! updates then resumed from its checkpoint produce the same metrics file
//! and the same final weights, bit for bit.
//!
//! cargo run --release --example resume [out_dir]

use std::path::PathBuf;

use mmpretrain::pipeline::{load_checkpoint, run_pretraining, ExperimentConfig, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("mmpt-resume"), PathBuf::from);
    let mut cfg = ExperimentConfig::toy();
    cfg.train.total_epochs = 2;
    cfg.train.warmup_epochs = 1;
    let pairs = cfg.data.load(cfg.model.patch_size)?;

    let full = run_pretraining(
        &cfg,
        &pairs,
        &RunOptions {
            out_dir: out.join("full"),
            ..RunOptions::default()
        },
    )?;

    let split_dir = out.join("split");
    let first = run_pretraining(
        &cfg,
        &pairs,
        &RunOptions {
            out_dir: split_dir.clone(),
            stop_after: Some(2),
            ..RunOptions::default()
        },
    )?;
    println!("stopped at update {} -> {}", first.record.opt_step, first.checkpoint.display());
    let resumed = run_pretraining(
        &cfg,
        &pairs,
        &RunOptions {
            out_dir: split_dir,
            resume_from: Some(first.checkpoint.clone()),
            ..RunOptions::default()
        },
    )?;
    println!("resumed to update {} -> {}", resumed.record.opt_step, resumed.checkpoint.display());

    let csv_full = std::fs::read(&full.metrics_csv)?;
    let csv_resumed = std::fs::read(&resumed.metrics_csv)?;
    let same_weights = load_checkpoint(&full.checkpoint)? == load_checkpoint(&resumed.checkpoint)?;
    println!("metrics identical: {}", csv_full == csv_resumed);
    println!("checkpoints identical: {same_weights}");
    Ok(())
}
