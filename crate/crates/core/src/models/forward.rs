use super::params::{BackboneIds, EncoderIds, Layout, ModelParams, ParamId, Tokenizer};
use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::image::{patchify, MultiChannelImage};
use crate::nn::{self, AttentionParams};
use crate::sampling::ChannelCombination;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Encoder input: the CLS token followed by the embedded patch tokens.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    /// `[1 + n_tokens, D]`
    pub tokens: Var,
    /// Source channel of each non-CLS token; `None` when tokens mix
    /// channels (ViT).
    pub channel_of_token: Option<Vec<usize>>,
    /// Patch index of each non-CLS token.
    pub patch_of_token: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.patch_of_token.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug)]
pub struct ForwardOutput {
    /// `[1, K]`
    pub logits: Var,
    /// Per layer, per head attention matrices (empty unless recorded).
    pub attention: Vec<Vec<Var>>,
    /// Present for single-backbone variants.
    pub tokens: Option<TokenSequence>,
}

/// One computation graph with the model parameters bound as leaves.
pub struct Session<'a> {
    pub graph: Graph,
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let mut graph = Graph::new();
        let vars = params
            .params()
            .iter()
            .map(|p| graph.leaf(p.value.clone()))
            .collect();
        Session {
            graph,
            params,
            vars,
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient of every parameter, zeros where unreached.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.params
            .params()
            .iter()
            .zip(&self.vars)
            .map(|(p, &v)| grads.get_or_zeros(v, &p.value))
            .collect()
    }

    fn check_input(&self, img: &MultiChannelImage, combo: &ChannelCombination) -> Result<()> {
        let cfg = self.params.config();
        if img.channels() != cfg.channels || img.height() != cfg.image_h || img.width() != cfg.image_w
        {
            return Err(Error::Dimension {
                op: "model input",
                left: vec![img.channels(), img.height(), img.width()],
                right: vec![cfg.channels, cfg.image_h, cfg.image_w],
            });
        }
        if combo.source_channels() != cfg.channels {
            return Err(Error::Input(format!(
                "combination over {} channels used with a {}-channel model",
                combo.source_channels(),
                cfg.channels
            )));
        }
        Ok(())
    }

    /// Token sequence of a single-backbone model for the channels in `combo`.
    pub fn embed(
        &mut self,
        img: &MultiChannelImage,
        combo: &ChannelCombination,
    ) -> Result<TokenSequence> {
        self.check_input(img, combo)?;
        let Layout::Single { backbone, .. } = &self.params.layout else {
            return Err(self.params.unsupported("single token sequence"));
        };
        let backbone = backbone.clone();
        let patches = patchify(img, self.params.config().patch_size)?;
        self.embed_backbone(&backbone, &patches, combo)
    }

    fn embed_backbone(
        &mut self,
        bb: &BackboneIds,
        patches: &[Tensor],
        combo: &ChannelCombination,
    ) -> Result<TokenSequence> {
        match bb.tokenizer {
            Tokenizer::PerChannel => self.embed_per_channel(bb, patches, combo),
            Tokenizer::Summed => self.embed_summed(bb, patches, combo),
        }
    }

    /// `pos_n + chn_c + W·x[c, p_n]` for every `c ∈ S`, ordered by
    /// (channel, patch).
    fn embed_per_channel(
        &mut self,
        bb: &BackboneIds,
        patches: &[Tensor],
        combo: &ChannelCombination,
    ) -> Result<TokenSequence> {
        let chn = self.var(bb.chn.expect("per-channel tokenizer has channel embeddings"));
        let pos = self.var(bb.pos);
        let cls = self.var(bb.cls);
        let n = patches[0].shape()[0];
        let mut parts = vec![cls];
        let mut channel_of_token = Vec::with_capacity(n * combo.len());
        let mut patch_of_token = Vec::with_capacity(n * combo.len());
        for &c in combo.indices() {
            let w = self.var(if bb.proj.len() == 1 { bb.proj[0] } else { bb.proj[c] });
            let x = self.graph.leaf(patches[c].clone());
            let proj = self.graph.matmul(x, w)?;
            let chn_c = self.graph.select_rows(chn, &[c])?;
            let pos_chn = self.graph.add_row(pos, chn_c)?;
            parts.push(self.graph.add(pos_chn, proj)?);
            channel_of_token.extend(std::iter::repeat_n(c, n));
            patch_of_token.extend(0..n);
        }
        let tokens = self.graph.concat_rows(&parts)?;
        Ok(TokenSequence {
            tokens,
            channel_of_token: Some(channel_of_token),
            patch_of_token,
        })
    }

    /// `pos_n + (C/|S|)·Σ_{c∈S} W_c·x[c, p_n] + b`
    fn embed_summed(
        &mut self,
        bb: &BackboneIds,
        patches: &[Tensor],
        combo: &ChannelCombination,
    ) -> Result<TokenSequence> {
        let pos = self.var(bb.pos);
        let cls = self.var(bb.cls);
        let bias = self.var(bb.proj_bias.expect("summed tokenizer has a bias"));
        let n = patches[0].shape()[0];
        let mut acc: Option<Var> = None;
        for &c in combo.indices() {
            let w = self.var(bb.proj[c]);
            let x = self.graph.leaf(patches[c].clone());
            let proj = self.graph.matmul(x, w)?;
            acc = Some(match acc {
                None => proj,
                Some(a) => self.graph.add(a, proj)?,
            });
        }
        let acc = acc.expect("combination is nonempty");
        let scale = combo.source_channels() as f64 / combo.len() as f64;
        let scaled = self.graph.scale(acc, scale);
        let biased = self.graph.add_row(scaled, bias)?;
        let patch_tokens = self.graph.add(pos, biased)?;
        let tokens = self.graph.concat_rows(&[cls, patch_tokens])?;
        Ok(TokenSequence {
            tokens,
            channel_of_token: None,
            patch_of_token: (0..n).collect(),
        })
    }

    /// Pre-norm encoder; returns the final hidden states (after the final
    /// layer norm when depth > 0) and per-layer attention if requested.
    fn encode(
        &mut self,
        enc: &EncoderIds,
        tokens: Var,
        record: bool,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let heads = self.params.config().heads;
        let mut x = tokens;
        let mut attention = Vec::new();
        for b in &enc.blocks {
            let h = self.layer_norm(x, b.norm1)?;
            let ap = AttentionParams {
                wq: self.var(b.q.0),
                bq: self.var(b.q.1),
                wk: self.var(b.k.0),
                bk: self.var(b.k.1),
                wv: self.var(b.v.0),
                bv: self.var(b.v.1),
                wo: self.var(b.o.0),
                bo: self.var(b.o.1),
            };
            let att = nn::multihead_attention(&mut self.graph, h, &ap, heads)?;
            if record {
                attention.push(att.attention);
            }
            x = self.graph.add(x, att.output)?;
            let h = self.layer_norm(x, b.norm2)?;
            let h = self.linear(h, b.fc1)?;
            let h = self.graph.gelu(h);
            let h = self.linear(h, b.fc2)?;
            x = self.graph.add(x, h)?;
        }
        if let Some(norm) = enc.norm {
            x = self.layer_norm(x, norm)?;
        }
        Ok((x, attention))
    }

    fn linear(&mut self, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
        let (w, b) = (self.var(w), self.var(b));
        nn::linear(&mut self.graph, x, w, b)
    }

    fn layer_norm(&mut self, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
        let (g, b) = (self.var(g), self.var(b));
        self.graph.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    /// Runs the encoder on `tokens` and applies the classifier to the final
    /// CLS representation.
    pub fn forward_tokens(&mut self, tokens: &TokenSequence, record: bool) -> Result<ForwardOutput> {
        let Layout::Single { backbone, head } = &self.params.layout else {
            return Err(self.params.unsupported("single-sequence forward"));
        };
        let (enc, head) = (backbone.encoder.clone(), *head);
        let (hidden, attention) = self.encode(&enc, tokens.tokens, record)?;
        let cls = self.graph.select_rows(hidden, &[0])?;
        let logits = self.linear(cls, head)?;
        Ok(ForwardOutput {
            logits,
            attention,
            tokens: Some(tokens.clone()),
        })
    }

    /// Logits for `img` restricted to the channels in `combo`.
    pub fn forward(
        &mut self,
        img: &MultiChannelImage,
        combo: &ChannelCombination,
        record: bool,
    ) -> Result<ForwardOutput> {
        match &self.params.layout {
            Layout::Single { .. } => {
                let tokens = self.embed(img, combo)?;
                self.forward_tokens(&tokens, record)
            }
            Layout::Multi { .. } => self.forward_multivit(img, combo),
        }
    }

    /// One single-channel ViT per selected channel, mean of their CLS
    /// outputs, then a one-hidden-layer MLP head.
    pub fn forward_multivit(
        &mut self,
        img: &MultiChannelImage,
        combo: &ChannelCombination,
    ) -> Result<ForwardOutput> {
        self.check_input(img, combo)?;
        let Layout::Multi {
            towers,
            hidden,
            out,
        } = &self.params.layout
        else {
            return Err(self.params.unsupported("multivit forward"));
        };
        let (hidden, out) = (*hidden, *out);
        let patches = patchify(img, self.params.config().patch_size)?;
        let solo = ChannelCombination::full(1)?;
        let mut sum: Option<Var> = None;
        for &c in combo.indices() {
            let tower = towers[c].clone();
            let seq = self.embed_backbone(&tower, &patches[c..=c], &solo)?;
            let (h, _) = self.encode(&tower.encoder, seq.tokens, false)?;
            let cls = self.graph.select_rows(h, &[0])?;
            sum = Some(match sum {
                None => cls,
                Some(s) => self.graph.add(s, cls)?,
            });
        }
        let sum = sum.expect("combination is nonempty");
        let pooled = if combo.len() == 1 {
            sum
        } else {
            self.graph.scale(sum, 1.0 / combo.len() as f64)
        };
        let h = self.linear(pooled, hidden)?;
        let h = self.graph.gelu(h);
        let logits = self.linear(h, out)?;
        Ok(ForwardOutput {
            logits,
            attention: Vec::new(),
            tokens: None,
        })
    }
}

impl ModelParams {
    /// Embedded token matrix `[1 + n_tokens, D]` plus its index maps.
    pub fn embed_tokens(
        &self,
        img: &MultiChannelImage,
        combo: &ChannelCombination,
    ) -> Result<(Tensor, Option<Vec<usize>>, Vec<usize>)> {
        let mut s = Session::new(self);
        let seq = s.embed(img, combo)?;
        Ok((
            s.graph.value(seq.tokens).clone(),
            seq.channel_of_token,
            seq.patch_of_token,
        ))
    }

    pub fn logits(&self, img: &MultiChannelImage, combo: &ChannelCombination) -> Result<Vec<f64>> {
        let mut s = Session::new(self);
        let out = s.forward(img, combo, false)?;
        Ok(s.graph.value(out.logits).data().to_vec())
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, img: &MultiChannelImage, combo: &ChannelCombination) -> Result<usize> {
        Ok(argmax(&self.logits(img, combo)?))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
