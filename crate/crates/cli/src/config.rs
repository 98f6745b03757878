//! Flat `key=value` run configuration. One key per line; `#` starts a
//! comment. `preset` is applied first, then `seed`, then every other key,
//! so later keys refine the preset. Flags given as `--set key=value` win
//! over the file.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use channelvit::data::{Dataset, InfoMode, SynthConfig};
use channelvit::models::{ModelConfig, Variant};
use channelvit::sampling::SamplingMode;
use channelvit::training::TrainConfig;

pub const KEYS: &[&str] = &[
    "preset",
    "seed",
    "channels",
    "height",
    "width",
    "num_classes",
    "train_samples",
    "test_samples",
    "channel_groups",
    "rho_in",
    "rho_out",
    "info_mode",
    "signal_strength",
    "field_std",
    "noise_std",
    "channel_offsets",
    "channel_gains",
    "signal_gains",
    "artifact_rate",
    "artifact_std",
    "texture_overlap",
    "decoy_strength",
    "duplicate_channel",
    "variant",
    "patch_size",
    "embed_dim",
    "depth",
    "heads",
    "mlp_hidden",
    "peak_lr",
    "final_lr",
    "warmup_epochs",
    "epochs",
    "wd_start",
    "wd_end",
    "sampling",
    "dropout_rate",
    "beta1",
    "beta2",
    "eps",
    "decay_embeddings",
    "batch_size",
    "grad_clip",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    RedundantRgb,
    Complementary,
    DistinctChannels,
    Isolated,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::RedundantRgb => "redundant_rgb",
            Preset::Complementary => "complementary",
            Preset::DistinctChannels => "distinct_channels",
            Preset::Isolated => "isolated",
        }
    }

    pub fn data(self, seed: u64) -> SynthConfig {
        match self {
            Preset::RedundantRgb => SynthConfig::redundant_rgb(seed),
            Preset::Complementary => SynthConfig::complementary(seed),
            Preset::DistinctChannels => SynthConfig::distinct_channels(seed),
            Preset::Isolated => SynthConfig::isolated(seed, 0),
        }
    }
}

impl FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Preset::RedundantRgb,
            Preset::Complementary,
            Preset::DistinctChannels,
            Preset::Isolated,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
        .ok_or_else(|| {
            anyhow!("unknown preset '{s}' (expected redundant_rgb, complementary, distinct_channels or isolated)")
        })
    }
}

/// Architecture settings; image size, channels and classes come from the
/// data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let t = ModelConfig::tiny(1, 2, 16, Variant::ChannelVitTied);
        ModelSpec {
            variant: t.variant,
            patch_size: t.patch_size,
            embed_dim: t.embed_dim,
            depth: t.depth,
            heads: t.heads,
            mlp_hidden: t.mlp_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: SynthConfig,
    /// Appends a copy of this channel to generated data.
    pub duplicate_channel: Option<usize>,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_preset(Preset::RedundantRgb, 0)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("invalid value '{value}' for {key}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Closest known key by edit distance.
pub fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .min_by_key(|k| strsim::levenshtein(key, k))
        .copied()
        .expect("key list is nonempty")
}

/// `key=value` pairs from config text, in order.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key=value, found '{line}'", i + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_preset(preset: Preset, seed: u64) -> Self {
        let mut train = TrainConfig::default();
        train.seed = seed;
        train.sampler.seed = seed;
        RunConfig {
            preset,
            seed,
            data: preset.data(seed),
            duplicate_channel: None,
            model: ModelSpec::default(),
            train,
        }
    }

    /// Applies `file` (if any) and then `flags` on top of `self`.
    pub fn resolve(mut self, file: Option<&Path>, flags: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            pairs.extend(parse_pairs(&text, &path.display().to_string())?);
        }
        for f in flags {
            pairs.extend(parse_pairs(f, "--set")?);
        }
        self.apply(&pairs)?;
        Ok(self)
    }

    /// Later pairs win; see the module docs for the application order.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, _) in pairs {
            if !KEYS.contains(&k.as_str()) {
                bail!("unknown config key '{k}' (did you mean '{}'?)", nearest_key(k));
            }
        }
        let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v);
        if let Some(v) = last("preset") {
            self.preset = v.parse()?;
            self.data = self.preset.data(self.seed);
        }
        if let Some(v) = last("seed") {
            self.set_seed(parse("seed", v)?);
        }
        for (k, v) in pairs {
            if k != "preset" && k != "seed" {
                self.set(k, v)?;
            }
        }
        self.validate()
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self.train.sampler.seed = seed;
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "channels" => d.channels = parse(key, v)?,
            "height" => d.height = parse(key, v)?,
            "width" => d.width = parse(key, v)?,
            "num_classes" => d.num_classes = parse(key, v)?,
            "train_samples" => d.train_samples = parse(key, v)?,
            "test_samples" => d.test_samples = parse(key, v)?,
            "channel_groups" => {
                d.channel_groups = v
                    .split(';')
                    .map(|g| parse_list(key, g))
                    .collect::<Result<_>>()?
            }
            "rho_in" => d.rho_in = parse(key, v)?,
            "rho_out" => d.rho_out = parse(key, v)?,
            "info_mode" => d.info_mode = parse::<InfoMode>(key, v)?,
            "signal_strength" => d.signal_strength = parse(key, v)?,
            "field_std" => d.field_std = parse(key, v)?,
            "noise_std" => d.noise_std = parse(key, v)?,
            "channel_offsets" => d.channel_offsets = parse_list(key, v)?,
            "channel_gains" => d.channel_gains = parse_list(key, v)?,
            "signal_gains" => d.signal_gains = parse_list(key, v)?,
            "artifact_rate" => d.artifact_rate = parse(key, v)?,
            "artifact_std" => d.artifact_std = parse(key, v)?,
            "texture_overlap" => d.texture_overlap = parse(key, v)?,
            "decoy_strength" => d.decoy_strength = parse(key, v)?,
            "duplicate_channel" => {
                self.duplicate_channel = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "variant" => m.variant = parse::<Variant>(key, v)?,
            "patch_size" => m.patch_size = parse(key, v)?,
            "embed_dim" => m.embed_dim = parse(key, v)?,
            "depth" => m.depth = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "mlp_hidden" => m.mlp_hidden = parse(key, v)?,
            "peak_lr" => t.schedule.peak_lr = parse(key, v)?,
            "final_lr" => t.schedule.final_lr = parse(key, v)?,
            "warmup_epochs" => t.schedule.warmup_epochs = parse(key, v)?,
            "epochs" => t.schedule.total_epochs = parse(key, v)?,
            "wd_start" => t.schedule.wd_start = parse(key, v)?,
            "wd_end" => t.schedule.wd_end = parse(key, v)?,
            "sampling" => t.sampler.mode = parse::<SamplingMode>(key, v)?,
            "dropout_rate" => t.sampler.dropout_rate = parse(key, v)?,
            "beta1" => t.adamw.beta1 = parse(key, v)?,
            "beta2" => t.adamw.beta2 = parse(key, v)?,
            "eps" => t.adamw.eps = parse(key, v)?,
            "decay_embeddings" => t.adamw.decay_embeddings = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "grad_clip" => {
                t.grad_clip = match v {
                    "none" | "" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            _ => unreachable!("keys are checked before application"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if let Some(c) = self.duplicate_channel {
            if c >= self.data.channels {
                bail!("duplicate_channel {c} out of range for {} channels", self.data.channels);
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in `KEYS` order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let m = &self.model;
        let t = &self.train;
        let groups = d
            .channel_groups
            .iter()
            .map(|g| join(g))
            .collect::<Vec<_>>()
            .join(";");
        let opt = |o: Option<String>| o.unwrap_or_else(|| "none".into());
        let values = [
            self.preset.as_str().to_string(),
            self.seed.to_string(),
            d.channels.to_string(),
            d.height.to_string(),
            d.width.to_string(),
            d.num_classes.to_string(),
            d.train_samples.to_string(),
            d.test_samples.to_string(),
            groups,
            d.rho_in.to_string(),
            d.rho_out.to_string(),
            d.info_mode.as_str().to_string(),
            d.signal_strength.to_string(),
            d.field_std.to_string(),
            d.noise_std.to_string(),
            join(&d.channel_offsets),
            join(&d.channel_gains),
            join(&d.signal_gains),
            d.artifact_rate.to_string(),
            d.artifact_std.to_string(),
            d.texture_overlap.to_string(),
            d.decoy_strength.to_string(),
            opt(self.duplicate_channel.map(|c| c.to_string())),
            m.variant.as_str().to_string(),
            m.patch_size.to_string(),
            m.embed_dim.to_string(),
            m.depth.to_string(),
            m.heads.to_string(),
            m.mlp_hidden.to_string(),
            t.schedule.peak_lr.to_string(),
            t.schedule.final_lr.to_string(),
            t.schedule.warmup_epochs.to_string(),
            t.schedule.total_epochs.to_string(),
            t.schedule.wd_start.to_string(),
            t.schedule.wd_end.to_string(),
            t.sampler.mode.as_str().to_string(),
            t.sampler.dropout_rate.to_string(),
            t.adamw.beta1.to_string(),
            t.adamw.beta2.to_string(),
            t.adamw.eps.to_string(),
            t.adamw.decay_embeddings.to_string(),
            t.batch_size.to_string(),
            opt(t.grad_clip.map(|c| c.to_string())),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn model_config(&self, ds: &Dataset) -> Result<ModelConfig> {
        if ds.height() != ds.width() {
            bail!("square images required, got {}x{}", ds.height(), ds.width());
        }
        let m = &self.model;
        let cfg = ModelConfig {
            image_h: ds.height(),
            image_w: ds.width(),
            patch_size: m.patch_size,
            channels: ds.channels(),
            embed_dim: m.embed_dim,
            depth: m.depth,
            heads: m.heads,
            mlp_hidden: m.mlp_hidden,
            num_classes: ds.num_classes(),
            variant: m.variant,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_pairs(text, "test").unwrap()
    }

    #[test]
    fn empty_input_keeps_defaults() {
        let mut c = RunConfig::default();
        c.apply(&[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn later_values_win() {
        let mut c = RunConfig::default();
        c.apply(&pairs("epochs=30\nepochs=70")).unwrap();
        assert_eq!(c.train.schedule.total_epochs, 70);
    }

    #[test]
    fn misspelled_key_suggests_nearest() {
        let err = RunConfig::default().apply(&pairs("epohcs=3")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epohcs") && msg.contains("'epochs'"), "{msg}");
    }

    #[test]
    fn preset_then_seed_then_rest() {
        let mut c = RunConfig::default();
        c.apply(&pairs("noise_std=0.3\nseed=9\npreset=complementary")).unwrap();
        assert_eq!(c.data.channels, 6);
        assert_eq!(c.data.noise_std, 0.3);
        assert_eq!((c.data.seed, c.train.seed, c.train.sampler.seed), (9, 9, 9));
    }

    #[test]
    fn pairs_round_trip() {
        let mut c = RunConfig::default();
        c.apply(&pairs("preset=complementary\ngrad_clip=1.5\nduplicate_channel=2\nsignal_gains=1,0.5,0.5,1,1,1"))
            .unwrap();
        let mut d = RunConfig::default();
        d.apply(&parse_pairs(&c.to_text(), "round trip").unwrap()).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn comments_and_malformed_lines() {
        assert_eq!(pairs("# x\n epochs = 4 # four\n\n").len(), 1);
        assert!(parse_pairs("epochs 4", "t").is_err());
    }
}
