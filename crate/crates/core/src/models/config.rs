use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One token per (channel, patch); projection shared across channels.
    ChannelVitTied,
    /// One token per (channel, patch); a projection per channel.
    ChannelVitUntied,
    /// Tied ChannelViT whose channel embeddings were replaced by their mean.
    ChannelVitSharedChn,
    /// One token per patch summing per-channel projections.
    Vit,
    /// One single-channel ViT per channel with mean-pooled CLS outputs.
    MultiVit,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ChannelVitTied,
        Variant::ChannelVitUntied,
        Variant::ChannelVitSharedChn,
        Variant::Vit,
        Variant::MultiVit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ChannelVitTied => "channelvit_tied",
            Variant::ChannelVitUntied => "channelvit_untied",
            Variant::ChannelVitSharedChn => "channelvit_shared_chn",
            Variant::Vit => "vit",
            Variant::MultiVit => "multivit",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::ChannelVitTied => 0,
            Variant::ChannelVitUntied => 1,
            Variant::ChannelVitSharedChn => 2,
            Variant::Vit => 3,
            Variant::MultiVit => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn is_channelvit(self) -> bool {
        matches!(
            self,
            Variant::ChannelVitTied | Variant::ChannelVitUntied | Variant::ChannelVitSharedChn
        )
    }

    pub fn tied_projection(self) -> bool {
        matches!(self, Variant::ChannelVitTied | Variant::ChannelVitSharedChn)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub variant: Variant,
}

impl ModelConfig {
    /// ViT-S/16 encoder widths (384 wide, 12 deep, 6 heads, MLP 1536).
    pub fn vit_small(channels: usize, num_classes: usize, image: usize, variant: Variant) -> Self {
        ModelConfig {
            image_h: image,
            image_w: image,
            patch_size: 16,
            channels,
            embed_dim: 384,
            depth: 12,
            heads: 6,
            mlp_hidden: 1536,
            num_classes,
            variant,
        }
    }

    /// Desk-scale encoder: 64 wide, 4 deep, 4 heads, MLP 256.
    pub fn tiny(channels: usize, num_classes: usize, image: usize, variant: Variant) -> Self {
        ModelConfig {
            image_h: image,
            image_w: image,
            patch_size: 16,
            channels,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_hidden: 256,
            num_classes,
            variant,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0
            || !self.image_h.is_multiple_of(self.patch_size)
            || !self.image_w.is_multiple_of(self.patch_size)
        {
            return fail(format!(
                "image {}x{} is not divisible into {p}x{p} patches",
                self.image_h,
                self.image_w,
                p = self.patch_size
            ));
        }
        if self.image_h == 0 || self.image_w == 0 {
            return fail("image dimensions must be positive".into());
        }
        if self.channels == 0 {
            return fail("channel count must be positive".into());
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.mlp_hidden == 0 {
            return fail("mlp_hidden must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        Ok(())
    }
}
