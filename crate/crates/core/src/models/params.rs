use std::collections::HashMap;

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter, used to decide weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub kind: ParamKind,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIds {
    pub norm1: (ParamId, ParamId),
    pub q: (ParamId, ParamId),
    pub k: (ParamId, ParamId),
    pub v: (ParamId, ParamId),
    pub o: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderIds {
    pub blocks: Vec<BlockIds>,
    /// Final layer norm; absent when depth is 0.
    pub norm: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Tokenizer {
    /// One token per (channel, patch).
    PerChannel,
    /// One token per patch, summing rescaled channel projections.
    Summed,
}

#[derive(Clone, Debug)]
pub(crate) struct BackboneIds {
    pub tokenizer: Tokenizer,
    /// One shared projection, or one per channel.
    pub proj: Vec<ParamId>,
    pub proj_bias: Option<ParamId>,
    /// `[C, D]` channel embedding table.
    pub chn: Option<ParamId>,
    pub pos: ParamId,
    pub cls: ParamId,
    pub encoder: EncoderIds,
}

#[derive(Clone, Debug)]
pub(crate) enum Layout {
    Single {
        backbone: BackboneIds,
        head: (ParamId, ParamId),
    },
    Multi {
        towers: Vec<BackboneIds>,
        hidden: (ParamId, ParamId),
        out: (ParamId, ParamId),
    },
}

#[derive(Clone, Copy)]
enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

struct Builder<'r> {
    params: Vec<Param>,
    rng: Option<&'r mut Rng>,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: &[usize], kind: ParamKind, init: Init) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match (init, self.rng.as_deref_mut()) {
            (Init::TruncNormal, Some(r)) => (0..n).map(|_| rng::trunc_normal(r, INIT_STD)).collect(),
            (Init::Ones, _) => vec![1.0; n],
            _ => vec![0.0; n],
        };
        self.params.push(Param {
            name,
            value: Tensor::new(shape.to_vec(), data).expect("shape matches data"),
            kind,
        });
        ParamId(self.params.len() - 1)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (ParamId, ParamId) {
        (
            self.add(format!("{prefix}.weight"), &[d], ParamKind::Norm, Init::Ones),
            self.add(format!("{prefix}.bias"), &[d], ParamKind::Norm, Init::Zeros),
        )
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize, init: Init) -> (ParamId, ParamId) {
        (
            self.add(format!("{prefix}.weight"), &[i, o], ParamKind::Weight, init),
            self.add(format!("{prefix}.bias"), &[o], ParamKind::Bias, Init::Zeros),
        )
    }

    fn encoder(&mut self, prefix: &str, cfg: &ModelConfig) -> EncoderIds {
        let d = cfg.embed_dim;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("{prefix}blocks.{i}");
                BlockIds {
                    norm1: self.norm(&format!("{p}.norm1"), d),
                    q: self.linear(&format!("{p}.attn.q"), d, d, Init::TruncNormal),
                    k: self.linear(&format!("{p}.attn.k"), d, d, Init::TruncNormal),
                    v: self.linear(&format!("{p}.attn.v"), d, d, Init::TruncNormal),
                    o: self.linear(&format!("{p}.attn.proj"), d, d, Init::TruncNormal),
                    norm2: self.norm(&format!("{p}.norm2"), d),
                    fc1: self.linear(&format!("{p}.mlp.fc1"), d, cfg.mlp_hidden, Init::TruncNormal),
                    fc2: self.linear(&format!("{p}.mlp.fc2"), cfg.mlp_hidden, d, Init::TruncNormal),
                }
            })
            .collect();
        let norm = (cfg.depth > 0).then(|| self.norm(&format!("{prefix}norm"), d));
        EncoderIds { blocks, norm }
    }

    fn backbone(&mut self, prefix: &str, cfg: &ModelConfig, tokenizer: Tokenizer) -> BackboneIds {
        let (d, p2, c) = (cfg.embed_dim, cfg.patch_dim(), cfg.channels);
        let w = |b: &mut Self, name: String| b.add(name, &[p2, d], ParamKind::Weight, Init::TruncNormal);
        let proj = if cfg.variant.tied_projection() {
            vec![w(self, format!("{prefix}patch_embed.weight"))]
        } else {
            (0..c)
                .map(|i| w(self, format!("{prefix}patch_embed.weight.{i}")))
                .collect()
        };
        let proj_bias = (tokenizer == Tokenizer::Summed).then(|| {
            self.add(format!("{prefix}patch_embed.bias"), &[d], ParamKind::Bias, Init::Zeros)
        });
        let chn = (tokenizer == Tokenizer::PerChannel).then(|| {
            self.add(format!("{prefix}chn_embed"), &[c, d], ParamKind::Embedding, Init::TruncNormal)
        });
        let pos = self.add(
            format!("{prefix}pos_embed"),
            &[cfg.num_patches(), d],
            ParamKind::Embedding,
            Init::TruncNormal,
        );
        let cls = self.add(format!("{prefix}cls_token"), &[d], ParamKind::Embedding, Init::TruncNormal);
        let encoder = self.encoder(prefix, cfg);
        BackboneIds {
            tokenizer,
            proj,
            proj_bias,
            chn,
            pos,
            cls,
            encoder,
        }
    }
}

fn build(config: &ModelConfig, rng: Option<&mut Rng>) -> (Vec<Param>, Layout) {
    let mut b = Builder {
        params: Vec::new(),
        rng,
    };
    let (d, k) = (config.embed_dim, config.num_classes);
    let layout = match config.variant {
        Variant::MultiVit => {
            let tower_cfg = ModelConfig {
                channels: 1,
                variant: Variant::Vit,
                ..config.clone()
            };
            let towers = (0..config.channels)
                .map(|c| b.backbone(&format!("towers.{c}."), &tower_cfg, Tokenizer::Summed))
                .collect();
            let hidden = b.linear("head.fc1", d, d, Init::TruncNormal);
            let out = b.linear("head.fc2", d, k, Init::Zeros);
            Layout::Multi { towers, hidden, out }
        }
        v => {
            let tokenizer = if v.is_channelvit() {
                Tokenizer::PerChannel
            } else {
                Tokenizer::Summed
            };
            let backbone = b.backbone("", config, tokenizer);
            let head = b.linear("head", d, k, Init::Zeros);
            Layout::Single { backbone, head }
        }
    };
    (b.params, layout)
}

/// All learnable arrays of one model.
#[derive(Clone, Debug)]
pub struct ModelParams {
    config: ModelConfig,
    params: Vec<Param>,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Truncated-normal (std 0.02) projections and embeddings, zero biases
    /// and classifier output, unit norm gains.
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build(config, Some(rng));
        Ok(ModelParams {
            config: config.clone(),
            params,
            layout,
        })
    }

    /// Rebuilds a model from named arrays; every expected name must be
    /// present exactly once with the expected shape.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (mut params, layout) = build(config, None);
        let index: HashMap<String, usize> = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        let mut seen = vec![false; params.len()];
        for (name, value) in named {
            let &i = index
                .get(&name)
                .ok_or_else(|| Error::format("parameters", format!("unexpected parameter '{name}'")))?;
            if seen[i] {
                return Err(Error::format("parameters", format!("duplicate parameter '{name}'")));
            }
            if value.shape() != params[i].value.shape() {
                return Err(Error::format(
                    "parameters",
                    format!(
                        "parameter '{name}' has shape {:?}, expected {:?}",
                        value.shape(),
                        params[i].value.shape()
                    ),
                ));
            }
            params[i].value = value;
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                "parameters",
                format!("missing parameter '{}'", params[i].name),
            ));
        }
        Ok(ModelParams {
            config: config.clone(),
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// The `[C, D]` channel embedding table (ChannelViT variants only).
    pub fn channel_embeddings(&self) -> Result<&Tensor> {
        match &self.layout {
            Layout::Single { backbone, .. } => backbone
                .chn
                .map(|id| self.get(id))
                .ok_or_else(|| self.unsupported("channel embeddings")),
            Layout::Multi { .. } => Err(self.unsupported("channel embeddings")),
        }
    }

    pub(crate) fn unsupported(&self, what: &str) -> Error {
        Error::UnsupportedVariant {
            variant: self.config.variant.to_string(),
            what: what.to_string(),
        }
    }

    /// Copy with every channel embedding replaced by the mean embedding.
    pub fn with_shared_channel_embedding(&self) -> Result<ModelParams> {
        if !self.config.variant.is_channelvit() {
            return Err(self.unsupported("shared channel embedding"));
        }
        let table = self.channel_embeddings()?;
        let (c, d) = (table.shape()[0], table.shape()[1]);
        let mut mean = vec![0.0; d];
        for i in 0..c {
            for (m, v) in mean.iter_mut().zip(table.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        let shared = Tensor::new(vec![c, d], mean.repeat(c))?;

        let mut out = self.clone();
        let Layout::Single { backbone, .. } = &out.layout else {
            unreachable!("channelvit variants use the single layout")
        };
        let id = backbone.chn.expect("channelvit has channel embeddings");
        out.params[id.0].value = shared;
        if self.config.variant == Variant::ChannelVitTied {
            out.config.variant = Variant::ChannelVitSharedChn;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: Variant) -> ModelConfig {
        ModelConfig {
            image_h: 8,
            image_w: 8,
            patch_size: 4,
            channels: 3,
            embed_dim: 8,
            depth: 2,
            heads: 2,
            mlp_hidden: 16,
            num_classes: 3,
            variant,
        }
    }

    #[test]
    fn tied_count_identity() {
        let mut r = rng::seeded(0);
        let tied = ModelParams::init(&cfg(Variant::ChannelVitTied), &mut r).unwrap();
        let untied = ModelParams::init(&cfg(Variant::ChannelVitUntied), &mut r).unwrap();
        let c = cfg(Variant::ChannelVitTied);
        assert_eq!(
            tied.num_scalars(),
            untied.num_scalars() - (c.channels - 1) * c.patch_dim() * c.embed_dim
        );
    }

    #[test]
    fn multivit_count_is_per_channel_towers_plus_head() {
        let mut r = rng::seeded(0);
        let c = cfg(Variant::MultiVit);
        let multi = ModelParams::init(&c, &mut r).unwrap();
        let single = ModelParams::init(
            &ModelConfig {
                channels: 1,
                variant: Variant::Vit,
                ..c.clone()
            },
            &mut r,
        )
        .unwrap();
        let d = c.embed_dim;
        let single_head = d * c.num_classes + c.num_classes;
        let tower = single.num_scalars() - single_head;
        let multi_head = d * d + d + d * c.num_classes + c.num_classes;
        assert_eq!(multi.num_scalars(), c.channels * tower + multi_head);
    }

    #[test]
    fn vit_has_no_channel_embedding() {
        let mut r = rng::seeded(0);
        let vit = ModelParams::init(&cfg(Variant::Vit), &mut r).unwrap();
        assert!(matches!(
            vit.channel_embeddings(),
            Err(Error::UnsupportedVariant { .. })
        ));
        assert!(vit.with_shared_channel_embedding().is_err());
        assert!(vit.by_name("patch_embed.bias").is_some());
    }

    #[test]
    fn shared_embedding_replaces_with_mean() {
        let mut r = rng::seeded(0);
        let mut p = ModelParams::init(&cfg(Variant::ChannelVitTied), &mut r).unwrap();
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        *p.by_name_mut("chn_embed").unwrap() =
            Tensor::new(vec![3, 8], [v.clone(), neg, vec![0.0; 8]].concat()).unwrap();
        let shared = p.with_shared_channel_embedding().unwrap();
        assert!(shared.channel_embeddings().unwrap().data().iter().all(|&x| x == 0.0));
        assert_eq!(shared.config().variant, Variant::ChannelVitSharedChn);
        // original untouched
        assert_eq!(p.channel_embeddings().unwrap().row(0), &v[..]);
    }

    #[test]
    fn shared_embedding_identity_when_equal() {
        let mut r = rng::seeded(0);
        let mut p = ModelParams::init(&cfg(Variant::ChannelVitTied), &mut r).unwrap();
        let row: Vec<f64> = (0..8).map(|i| 0.25 * i as f64).collect();
        *p.by_name_mut("chn_embed").unwrap() = Tensor::new(vec![3, 8], row.repeat(3)).unwrap();
        let shared = p.with_shared_channel_embedding().unwrap();
        assert_eq!(shared.channel_embeddings().unwrap(), p.channel_embeddings().unwrap());
    }

    #[test]
    fn from_named_checks_completeness() {
        let mut r = rng::seeded(0);
        let p = ModelParams::init(&cfg(Variant::Vit), &mut r).unwrap();
        let named: Vec<_> = p
            .params()
            .iter()
            .map(|q| (q.name.clone(), q.value.clone()))
            .collect();
        let back = ModelParams::from_named(p.config(), named.clone()).unwrap();
        assert_eq!(back.params(), p.params());
        assert!(ModelParams::from_named(p.config(), named[1..].to_vec()).is_err());
    }
}
