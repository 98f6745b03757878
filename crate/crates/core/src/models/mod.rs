//! ChannelViT, ViT and MultiViT over arbitrary channel subsets.
//!
//! ChannelViT turns every (channel, patch) pair into its own token, so
//! dropping channels only shortens the sequence. ViT sums per-channel
//! projections into one token per patch; dropped channels are masked and
//! the survivors rescaled by `C/|S|`. MultiViT runs an independent
//! single-channel ViT per channel.

pub mod checkpoint;
mod config;
mod forward;
mod params;

pub use config::{ModelConfig, Variant};
pub use forward::{argmax, ForwardOutput, Session, TokenSequence, LAYER_NORM_EPS};
pub use params::{ModelParams, Param, ParamId, ParamKind};
