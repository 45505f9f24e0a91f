use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which features feed the alignment, HSIC and modality-classification terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxFeatureSource {
    /// Student encoder output tokens.
    Encoder,
    /// Per-modality tokens after the fusion input projections.
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_dim: usize,
    pub encoder_mlp_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub fusion_dim: usize,
    pub fusion_mlp_dim: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub decoder_dim: usize,
    pub decoder_mlp_dim: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub in_channels: usize,
    pub dropout: f64,
    pub drop_path: f64,
    pub aux_features: AuxFeatureSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// ViT-B/16 encoder with the 384-wide fusion and decoder stacks, 320 px input.
    pub fn base() -> Self {
        Self {
            encoder_dim: 768,
            encoder_mlp_dim: 3072,
            encoder_layers: 12,
            encoder_heads: 12,
            fusion_dim: 384,
            fusion_mlp_dim: 1536,
            fusion_layers: 3,
            fusion_heads: 6,
            decoder_dim: 384,
            decoder_mlp_dim: 1536,
            decoder_layers: 4,
            decoder_heads: 6,
            patch_size: 16,
            image_size: 320,
            in_channels: 3,
            dropout: 0.1,
            drop_path: 0.1,
            aux_features: AuxFeatureSource::Encoder,
        }
    }

    /// Desk-scale preset: same depth for fusion/decoder, narrow widths, 32 px input.
    pub fn toy() -> Self {
        Self {
            encoder_dim: 64,
            encoder_mlp_dim: 128,
            encoder_layers: 2,
            encoder_heads: 4,
            fusion_dim: 32,
            fusion_mlp_dim: 64,
            fusion_layers: 3,
            fusion_heads: 2,
            decoder_dim: 32,
            decoder_mlp_dim: 64,
            decoder_layers: 4,
            decoder_heads: 2,
            patch_size: 16,
            image_size: 32,
            in_channels: 3,
            dropout: 0.1,
            drop_path: 0.1,
            aux_features: AuxFeatureSource::Encoder,
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    /// Width of the features used by the auxiliary losses.
    pub fn aux_dim(&self) -> usize {
        match self.aux_features {
            AuxFeatureSource::Encoder => self.encoder_dim,
            AuxFeatureSource::Fusion => self.fusion_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stacks = [
            ("encoder", self.encoder_dim, self.encoder_heads, self.encoder_layers),
            ("fusion", self.fusion_dim, self.fusion_heads, self.fusion_layers),
            ("decoder", self.decoder_dim, self.decoder_heads, self.decoder_layers),
        ];
        for (name, dim, heads, layers) in stacks {
            if heads == 0 || dim % heads != 0 {
                return Err(Error::Config(format!("{name}_dim {dim} is not divisible by {name}_heads {heads}")));
            }
            if layers == 0 {
                return Err(Error::Config(format!("{name}_layers must be at least 1")));
            }
        }
        // 2D sin-cos encodings split each width into four equal bands
        for (name, dim) in [("encoder", self.encoder_dim), ("decoder", self.decoder_dim)] {
            if dim % 4 != 0 {
                return Err(Error::Config(format!("{name}_dim {dim} must be divisible by 4")));
            }
        }
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.drop_path) {
            return Err(Error::Config("dropout and drop_path must lie in [0, 1)".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        Ok(())
    }
}
