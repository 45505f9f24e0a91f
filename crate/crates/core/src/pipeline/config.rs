//! Experiment configuration: one TOML file with `[model]`, `[train]` and
//! `[data]` tables mirroring the config structs. Unknown keys are errors.
//! Overrides use dotted keys (`train.base_lr=0.0001`) applied after parsing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic_dataset, load_hr_pairs, read_labels, read_manifest, ModalityPair};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::masking::{ScoreWeights, SubstitutionSchedule};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingStrategy {
    /// Score-driven probabilities from batch quantiles.
    InformationAware,
    /// Every patch masked with `uniform_mask_prob`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Tokens of the same sample at other positions plus every token of the
    /// other samples in the batch.
    Batch,
    /// Tokens of the same sample at other positions only; each sample's loss
    /// is then independent of the rest of the batch.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub ema_momentum: f64,
    pub ema_momentum_final: f64,
    pub seed: u64,
    pub strict_paper_align: bool,
    pub tau: f64,
    pub num_negatives: usize,
    pub negative_source: NegativeSource,
    pub masking: MaskingStrategy,
    pub uniform_mask_prob: f64,
    pub augment: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    /// Optimizer steps between checkpoints; 0 writes only the initial/final ones.
    pub checkpoint_every: usize,
    pub loss_weights: LossWeights,
    pub substitution: SubstitutionSchedule,
    pub score_weights: ScoreWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self {
            base_lr: 1.5e-4,
            warmup_lr: 1e-6,
            warmup_epochs: 2,
            total_epochs: 20,
            batch_size: 8,
            grad_accum_steps: 2,
            ema_momentum: 0.996,
            ema_momentum_final: 1.0,
            seed: 0,
            strict_paper_align: false,
            tau: 0.07,
            num_negatives: 16,
            negative_source: NegativeSource::Batch,
            masking: MaskingStrategy::InformationAware,
            uniform_mask_prob: 0.52,
            augment: true,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            weight_decay: 0.05,
            checkpoint_every: 0,
            loss_weights: LossWeights::default(),
            substitution: SubstitutionSchedule::default(),
            score_weights: ScoreWeights::default(),
        }
    }

    /// Full-scale schedule (500 epochs, batch 512). Not validated at desk scale.
    pub fn full_scale() -> Self {
        Self {
            warmup_epochs: 30,
            total_epochs: 500,
            batch_size: 512,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.total_epochs > 0 && self.warmup_epochs >= self.total_epochs {
            return bad(format!(
                "warmup_epochs ({}) must be below total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return bad("batch_size and grad_accum_steps must be at least 1".into());
        }
        for (name, m) in [("ema_momentum", self.ema_momentum), ("ema_momentum_final", self.ema_momentum_final)] {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.tau > 0.0) || self.num_negatives == 0 {
            return bad("tau must be positive and num_negatives at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.uniform_mask_prob) {
            return bad("uniform_mask_prob must lie in [0, 1]".into());
        }
        if !(self.base_lr >= 0.0 && self.warmup_lr >= 0.0) {
            return bad("learning rates must be nonnegative".into());
        }
        self.loss_weights.validate()?;
        self.substitution.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub count: usize,
    pub seed: u64,
    pub size: usize,
    pub n_classes: usize,
    /// Manifest path, used when `source = "manifest"`.
    pub manifest: String,
    pub tile_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            count: 32,
            seed: 0,
            size: 32,
            n_classes: 4,
            manifest: String::new(),
            tile_size: crate::data::DEFAULT_TILE_SIZE,
        }
    }
}

impl DataConfig {
    /// Generates or reads the configured pairs. Manifest datasets pick up
    /// labels from `labels.tsv` when present.
    pub fn load(&self, patch_size: usize) -> Result<Vec<ModalityPair>> {
        match self.source {
            DataSource::Synthetic => generate_synthetic_dataset(self.seed, self.count, self.size, self.n_classes),
            DataSource::Manifest => {
                if self.manifest.is_empty() {
                    return Err(Error::Config("data.manifest must be set when data.source = \"manifest\"".into()));
                }
                let mut manifest = read_manifest(Path::new(&self.manifest))?;
                manifest.tile_size = self.tile_size;
                manifest.patch_size = patch_size;
                let labels = read_labels(&manifest.root)?;
                load_hr_pairs(&manifest)
                    .map(|p| {
                        p.map(|mut pair| {
                            pair.label = labels.get(&pair.pair_id).copied();
                            pair
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        Self::default()
    }

    pub fn full_scale() -> Self {
        Self {
            model: ModelConfig::base(),
            train: TrainConfig::full_scale(),
            data: DataConfig {
                size: 320,
                ..DataConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.size % self.model.patch_size != 0 {
            return Err(Error::Config(format!(
                "data.size {} is not divisible by model.patch_size {}",
                self.data.size, self.model.patch_size
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Parses TOML text, applies dotted overrides, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        // missing sections and fields fall back to the toy preset
        let defaults: toml::Table = toml::from_str(&Self::toy().to_toml()).expect("defaults parse");
        merge_defaults(&mut root, &defaults);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Every leaf key of the default configuration, as `dotted.key = value`.
    pub fn documented_keys() -> Vec<String> {
        let table: toml::Table = toml::from_str(&Self::toy().to_toml()).expect("defaults parse");
        let mut out = Vec::new();
        flatten("", &toml::Value::Table(table), &mut out);
        out
    }
}

fn merge_defaults(target: &mut toml::Table, defaults: &toml::Table) {
    for (k, dv) in defaults {
        match (target.get_mut(k), dv) {
            (Some(toml::Value::Table(t)), toml::Value::Table(d)) => merge_defaults(t, d),
            (Some(_), _) => {}
            (None, v) => {
                target.insert(k.clone(), v.clone());
            }
        }
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push(format!("{prefix} = {leaf}")),
    }
}

fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (leaf, path) = parts.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in path {
        table = match table.get_mut(*part) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config key `{}`", key.trim()))),
        };
    }
    match table.get(*leaf) {
        Some(toml::Value::Table(_)) | None => Err(Error::Config(format!("unknown config key `{}`", key.trim()))),
        Some(_) => {
            table.insert(leaf.to_string(), value);
            Ok(())
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
