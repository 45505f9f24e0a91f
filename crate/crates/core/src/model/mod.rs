//! Modality-shared student/teacher encoders, fusion, decoder and heads.

pub mod archive;
mod config;
mod decoder;
mod ema;
mod embed;
mod encoder;
mod fusion;
mod heads;
pub mod layers;
mod network;
mod params;
mod tokens;

pub use config::{AuxFeatureSource, ModelConfig};
pub use decoder::Decoder;
pub use ema::{cosine_momentum, ema_update, EmaState};
pub use embed::{patch_tensor, patchify, sincos_2d, unpatchify};
pub use encoder::{Encoder, Role};
pub use fusion::Fusion;
pub use heads::{ModalityClassifierHead, Predictor};
pub use network::{encoder_from_map, Network, ENCODER_PREFIX};
pub use params::{Builder, Init, ParamSpec, ParamStore, TensorMap};
pub use tokens::{gather_rows, TokenBatch, TokenKind, TokenSequence};
