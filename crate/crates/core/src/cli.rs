//! Batch entry points: `gen-synth`, `pretrain`, `probe`, `finetune`,
//! `mask-viz` and `losses-check`.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unknown config keys), 2 runtime.

use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::data::{write_dataset, NormStats};
use crate::error::{Error, Result};
use crate::eval::{
    extract_features, finetune_small, linear_probe, load_encoder, random_encoder, write_confusion_png, write_results_csv,
    FinetuneConfig, ResultRow,
};
use crate::masking::write_mask_png;
use crate::pipeline::{load_checkpoint_expecting, prepare_batch, run_pretraining, ExperimentConfig, RunOptions};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MMPT_OUT_DIR";
const FALLBACK_OUT_DIR: &str = "mmpt-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Parser)]
#[command(name = "mmpt", about = "Multi-modal masked pretraining at desk scale")]
pub struct CommandSpec {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML experiment config; the toy preset when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted config override, e.g. `train.base_lr=0.0001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory (default: $MMPT_OUT_DIR, else ./mmpt-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset with a manifest.
    GenSynth,
    /// Run pretraining, logging metrics and writing checkpoints.
    Pretrain {
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer updates.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Linear probe on frozen features (random-init encoder without --checkpoint).
    Probe {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Fine-tune the whole encoder with a linear head.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = FinetuneConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = FinetuneConfig::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Write mask and substitution PNGs for the first few pairs.
    MaskViz {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        pairs: usize,
        /// Epoch whose substitution probability applies.
        #[arg(long, default_value_t = 0)]
        epoch: usize,
    },
    /// Check losses, masking, schedules and EMA against independent oracles.
    LossesCheck,
}

impl CommandSpec {
    /// Clap command whose help lists every config key with its default.
    pub fn clap_command() -> clap::Command {
        let keys = ExperimentConfig::documented_keys().join("\n  ");
        Self::command().after_help(format!("Config keys (defaults):\n  {keys}"))
    }

    pub fn try_parse_args<I, T>(args: I) -> std::result::Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let matches = Self::clap_command().try_get_matches_from(args)?;
        Self::from_arg_matches(&matches)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match CommandSpec::try_parse_args(args) {
        Ok(spec) => run_command(&spec),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn run_command(spec: &CommandSpec) -> i32 {
    match execute(spec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR))
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &common.overrides),
        None => ExperimentConfig::from_toml_str("", &common.overrides),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(spec: &CommandSpec) -> Result<i32> {
    if let Command::LossesCheck = spec.command {
        let results = crate::verify::run_all()?;
        for r in &results {
            println!("{r}");
        }
        return Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_RUNTIME });
    }
    let cfg = load_config(&spec.common)?;
    let out = out_dir(&spec.common);
    ensure_dir(&out)?;
    match &spec.command {
        Command::GenSynth => {
            let pairs = cfg.data.load(cfg.model.patch_size)?;
            let manifest = write_dataset(&out, &pairs, &NormStats::default())?;
            println!("wrote {} pairs, manifest {}", pairs.len(), manifest.display());
        }
        Command::Pretrain { resume, stop_after } => {
            let pairs = cfg.data.load(cfg.model.patch_size)?;
            let summary = run_pretraining(
                &cfg,
                &pairs,
                &RunOptions {
                    out_dir: out.clone(),
                    resume_from: resume.clone(),
                    stop_after: *stop_after,
                },
            )?;
            if let Some(last) = summary.rows.last() {
                println!("step {} total loss {}", last.step, last.total);
            }
            println!("checkpoint {}", summary.checkpoint.display());
            println!("metrics {}", summary.metrics_csv.display());
        }
        Command::Probe { checkpoint, split_seed } => {
            let pairs = cfg.data.load(cfg.model.patch_size)?;
            let (encoder, tag) = match checkpoint {
                Some(path) => (load_encoder(path, &cfg.model)?, checkpoint_tag(path)),
                None => (random_encoder(&cfg.model, cfg.train.seed)?, "random-init".to_string()),
            };
            let table = extract_features(&encoder, &cfg.model, &pairs, &tag)?;
            let result = linear_probe(&table, *split_seed)?;
            report(&out, &tag, "linear_probe", result.accuracy, *split_seed, &result.confusion)?;
        }
        Command::Finetune {
            checkpoint,
            epochs,
            lr,
            split_seed,
        } => {
            let pairs = cfg.data.load(cfg.model.patch_size)?;
            let (store, tag) = match checkpoint {
                Some(path) => (load_checkpoint_expecting(path, &cfg.model)?.student_store()?, checkpoint_tag(path)),
                None => {
                    let (_, store) =
                        crate::model::Network::init(&cfg.model, crate::rng::stream(cfg.train.seed, &[crate::rng::tag::INIT]))?;
                    (store, "random-init".to_string())
                }
            };
            let ft = FinetuneConfig {
                epochs: *epochs,
                lr: *lr,
                seed: cfg.train.seed,
                ..FinetuneConfig::default()
            };
            let result = finetune_small(&store, &cfg.model, &pairs, &ft, *split_seed)?;
            report(&out, &tag, "finetune", result.accuracy, *split_seed, &result.confusion)?;
        }
        Command::MaskViz { seed, pairs: count, epoch } => {
            let pairs = cfg.data.load(cfg.model.patch_size)?;
            let chosen = &pairs[..(*count).min(pairs.len())];
            let mut train = cfg.train.clone();
            train.seed = *seed;
            let batch = prepare_batch(chosen, 0, *epoch, &train, cfg.model.image_size)?;
            for s in &batch.samples {
                let a = write_mask_png(&out, &s.pair_id, &s.rgb, &s.mask_rgb, &[])?;
                let b = write_mask_png(&out, &s.pair_id, &s.other_student, &s.mask_other, &s.substituted)?;
                println!("{}\n{}", a.display(), b.display());
            }
            println!("rho {}", batch.rho);
        }
        Command::LossesCheck => unreachable!("handled above"),
    }
    Ok(EXIT_OK)
}

fn checkpoint_tag(path: &Path) -> String {
    path.file_stem().map_or_else(|| "checkpoint".to_string(), |s| s.to_string_lossy().into_owned())
}

fn report(out: &Path, tag: &str, protocol: &str, accuracy: f64, seed: u64, confusion: &[Vec<usize>]) -> Result<()> {
    let rows = [ResultRow {
        checkpoint_tag: tag.to_string(),
        protocol: protocol.to_string(),
        accuracy,
        seed,
    }];
    let csv = out.join(format!("results_{protocol}.csv"));
    write_results_csv(&csv, &rows)?;
    let png = out.join(format!("confusion_{protocol}.png"));
    write_confusion_png(&png, confusion)?;
    println!("{tag} {protocol} top-1 {accuracy}");
    println!("results {}", csv.display());
    Ok(())
}
