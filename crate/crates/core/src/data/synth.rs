//! Synthetic multi-channel classification data with controllable channel
//! correlation.
//!
//! Every pixel of channel `c` is
//!
//! ```text
//! offset_c + gain_c · (signal_gain_c · signal_c + field_std · field_c) + noise_std · ε
//! ```
//!
//! where `field` is a zero-mean, unit-variance Gaussian vector over channels
//! with block correlation `rho_in` inside a channel group and `rho_out`
//! across groups, drawn independently per pixel, and `ε` is i.i.d. noise.
//! Optionally, each 8×8 cell of each channel is independently hit by an
//! artifact with probability `artifact_rate`, adding `artifact_std`-scaled
//! white noise to that cell only.
//!
//! Signals are balanced ±1 textures with an 8×8 period, so every patch whose
//! side is a multiple of 8 sees the same evidence. The label rule depends on
//! [`InfoMode`]:
//! - `Redundant`: class `k` adds texture `k` to every channel.
//! - `Isolated`: as redundant, but only the channels of group 0 carry it.
//! - `Complementary`: `K = 2^b`; bit `g` of the class is the sign of the
//!   amplitude of a group texture present in group `g` only, so no single
//!   group determines the label. Group textures mix a common texture with a
//!   private one, `√overlap · common + √(1 − overlap) · private_g`; at
//!   overlap 1 only the channel identity tells the groups apart. Groups
//!   beyond the label bits are decoys: group `b + j` carries texture
//!   `j mod b` at `±decoy_strength`, with a sign independent of the label.

use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::MultiChannelImage;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InfoMode {
    Redundant,
    Complementary,
    Isolated,
}

impl InfoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InfoMode::Redundant => "redundant",
            InfoMode::Complementary => "complementary",
            InfoMode::Isolated => "isolated",
        }
    }
}

impl FromStr for InfoMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "redundant" => Ok(InfoMode::Redundant),
            "complementary" => Ok(InfoMode::Complementary),
            "isolated" => Ok(InfoMode::Isolated),
            other => Err(Error::Config(format!(
                "unknown info_mode '{other}' (expected redundant, complementary or isolated)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Partition of `0..channels`.
    pub channel_groups: Vec<Vec<usize>>,
    pub rho_in: f64,
    pub rho_out: f64,
    pub info_mode: InfoMode,
    pub signal_strength: f64,
    pub field_std: f64,
    pub noise_std: f64,
    /// Per-channel additive offsets; empty means all zero.
    pub channel_offsets: Vec<f64>,
    /// Per-channel gains; empty means all one.
    pub channel_gains: Vec<f64>,
    /// Per-channel multipliers of the label signal only; empty means all one.
    pub signal_gains: Vec<f64>,
    pub artifact_rate: f64,
    pub artifact_std: f64,
    /// Share of the common texture in each complementary group texture.
    pub texture_overlap: f64,
    /// Amplitude of the label-independent textures in decoy groups.
    pub decoy_strength: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Redundant three-channel data: one strongly correlated noise field,
    /// label texture at a different amplitude in each channel.
    pub fn redundant_rgb(seed: u64) -> Self {
        SynthConfig {
            channels: 3,
            height: 32,
            width: 32,
            num_classes: 4,
            train_samples: 4000,
            test_samples: 1000,
            channel_groups: vec![vec![0, 1, 2]],
            rho_in: 0.95,
            rho_out: 0.0,
            info_mode: InfoMode::Redundant,
            signal_strength: 0.5,
            field_std: 1.0,
            noise_std: 0.1,
            channel_offsets: Vec::new(),
            channel_gains: Vec::new(),
            signal_gains: vec![1.0, 0.3, 0.3],
            artifact_rate: 0.0,
            artifact_std: 0.0,
            texture_overlap: 0.0,
            decoy_strength: 0.0,
            seed,
        }
    }

    /// Six channels in three pairs: pairs 0 and 1 carry one label bit each,
    /// pair 2 is a decoy showing pair 0's texture with a random sign.
    /// Frequent local artifacts.
    pub fn complementary(seed: u64) -> Self {
        SynthConfig {
            channels: 6,
            height: 32,
            width: 32,
            num_classes: 4,
            train_samples: 1000,
            test_samples: 500,
            channel_groups: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
            rho_in: 0.8,
            rho_out: 0.0,
            info_mode: InfoMode::Complementary,
            signal_strength: 0.0375,
            field_std: 0.25,
            noise_std: 0.125,
            channel_offsets: Vec::new(),
            channel_gains: Vec::new(),
            signal_gains: Vec::new(),
            artifact_rate: 0.1,
            artifact_std: 5.0,
            texture_overlap: 0.0,
            decoy_strength: 0.0375,
            seed,
        }
    }

    /// Three single-channel groups: two label bits and a decoy, so every
    /// channel plays a different role. 16×16.
    pub fn distinct_channels(seed: u64) -> Self {
        SynthConfig {
            channels: 3,
            height: 16,
            width: 16,
            channel_groups: vec![vec![0], vec![1], vec![2]],
            ..SynthConfig::complementary(seed)
        }
    }

    /// Three independent channels; only `informative` carries the class
    /// texture.
    pub fn isolated(seed: u64, informative: usize) -> Self {
        let others = (0..3).filter(|&c| c != informative % 3).map(|c| vec![c]);
        SynthConfig {
            channels: 3,
            height: 32,
            width: 32,
            num_classes: 4,
            train_samples: 600,
            test_samples: 500,
            channel_groups: std::iter::once(vec![informative % 3]).chain(others).collect(),
            rho_in: 0.0,
            rho_out: 0.0,
            info_mode: InfoMode::Isolated,
            signal_strength: 0.5,
            field_std: 1.0,
            noise_std: 0.5,
            channel_offsets: Vec::new(),
            channel_gains: Vec::new(),
            signal_gains: Vec::new(),
            artifact_rate: 0.0,
            artifact_std: 0.0,
            texture_overlap: 0.0,
            decoy_strength: 0.0,
            seed,
        }
    }

    pub fn offset(&self, c: usize) -> f64 {
        self.channel_offsets.get(c).copied().unwrap_or(0.0)
    }

    pub fn gain(&self, c: usize) -> f64 {
        self.channel_gains.get(c).copied().unwrap_or(1.0)
    }

    pub fn signal_gain(&self, c: usize) -> f64 {
        self.signal_gains.get(c).copied().unwrap_or(1.0)
    }

    /// Number of label bits in complementary mode.
    fn label_bits(&self) -> usize {
        self.num_classes.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.height == 0 || self.width == 0 || self.num_classes == 0 {
            return fail("channels, dimensions and num_classes must be positive".into());
        }
        let mut seen = vec![false; self.channels];
        for g in &self.channel_groups {
            if g.is_empty() {
                return fail("channel groups must be nonempty".into());
            }
            for &c in g {
                if c >= self.channels || std::mem::replace(&mut seen[c], true) {
                    return fail(format!(
                        "channel_groups {:?} do not partition 0..{}",
                        self.channel_groups, self.channels
                    ));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return fail(format!(
                "channel_groups {:?} do not partition 0..{}",
                self.channel_groups, self.channels
            ));
        }
        for (name, rho) in [("rho_in", self.rho_in), ("rho_out", self.rho_out)] {
            if !(-1.0..=1.0).contains(&rho) {
                return fail(format!("{name} = {rho} is outside [-1, 1]"));
            }
        }
        for (name, v) in [
            ("channel_offsets", &self.channel_offsets),
            ("channel_gains", &self.channel_gains),
            ("signal_gains", &self.signal_gains),
        ] {
            if !v.is_empty() && v.len() != self.channels {
                return fail(format!("{name} has {} entries for {} channels", v.len(), self.channels));
            }
        }
        if self.noise_std < 0.0 || self.field_std < 0.0 || self.artifact_std < 0.0 {
            return fail("noise_std, field_std and artifact_std must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.texture_overlap) {
            return fail(format!("texture_overlap = {} is outside [0, 1]", self.texture_overlap));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return fail(format!("artifact_rate = {} is outside [0, 1]", self.artifact_rate));
        }
        if self.info_mode == InfoMode::Complementary {
            if self.channel_groups.len() < 2 {
                return fail("complementary mode requires at least two channel groups".into());
            }
            if !self.num_classes.is_power_of_two() || self.num_classes < 2 {
                return fail(format!(
                    "complementary mode needs a power-of-two class count, got {}",
                    self.num_classes
                ));
            }
            if self.label_bits() > self.channel_groups.len() {
                return fail(format!(
                    "{} classes need {} groups, only {} given",
                    self.num_classes,
                    self.label_bits(),
                    self.channel_groups.len()
                ));
            }
        }
        Ok(())
    }

    fn group_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.channels];
        for (g, members) in self.channel_groups.iter().enumerate() {
            for &c in members {
                out[c] = g;
            }
        }
        out
    }

    /// Target `C×C` correlation of the channel fields.
    pub fn target_correlation(&self) -> Vec<Vec<f64>> {
        let group = self.group_of();
        (0..self.channels)
            .map(|i| {
                (0..self.channels)
                    .map(|j| match (i == j, group[i] == group[j]) {
                        (true, _) => 1.0,
                        (false, true) => self.rho_in,
                        (false, false) => self.rho_out,
                    })
                    .collect()
            })
            .collect()
    }
}

/// Maps independent standard normals to correlated channel fields.
enum FieldMixer {
    /// `√ρ_out·z_global + √(ρ_in−ρ_out)·z_group + √(1−ρ_in)·z_channel`
    Block {
        group: Vec<usize>,
        groups: usize,
        w_global: f64,
        w_group: f64,
        w_own: f64,
    },
    /// Symmetric square-root factor `L` with `L·Lᵀ = R`.
    Dense { factor: Vec<Vec<f64>> },
}

impl FieldMixer {
    fn new(cfg: &SynthConfig) -> Result<Self> {
        let target = cfg.target_correlation();
        let c = cfg.channels;
        let m = DMatrix::from_fn(c, c, |i, j| target[i][j]);
        let eig = SymmetricEigen::new(m);
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::Config(format!(
                "channel correlation matrix (rho_in={}, rho_out={}) is not positive semidefinite \
                 (smallest eigenvalue {min:.3e}): {target:?}",
                cfg.rho_in, cfg.rho_out
            )));
        }
        if (0.0..=cfg.rho_in).contains(&cfg.rho_out) {
            return Ok(FieldMixer::Block {
                group: cfg.group_of(),
                groups: cfg.channel_groups.len(),
                w_global: cfg.rho_out.sqrt(),
                w_group: (cfg.rho_in - cfg.rho_out).sqrt(),
                w_own: (1.0 - cfg.rho_in).sqrt(),
            });
        }
        let v = &eig.eigenvectors;
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let factor = (0..c)
            .map(|i| (0..c).map(|j| v[(i, j)] * lam[j]).collect())
            .collect();
        Ok(FieldMixer::Dense { factor })
    }

    /// One correlated draw per channel into `out`.
    fn draw(&self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            FieldMixer::Block {
                group,
                groups,
                w_global,
                w_group,
                w_own,
            } => {
                let global = rng::normal(rng);
                let per_group: Vec<f64> = (0..*groups).map(|_| rng::normal(rng)).collect();
                for (c, o) in out.iter_mut().enumerate() {
                    let own = rng::normal(rng);
                    *o = w_global * global + w_group * per_group[group[c]] + w_own * own;
                }
            }
            FieldMixer::Dense { factor } => {
                let z: Vec<f64> = (0..out.len()).map(|_| rng::normal(rng)).collect();
                for (o, row) in out.iter_mut().zip(factor) {
                    *o = row.iter().zip(&z).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
}

/// Generator-side ground truth for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleLatents {
    pub label: usize,
    /// Complementary mode: the signed amplitude per informative group.
    pub group_amplitudes: Vec<f64>,
}

#[derive(Debug)]
pub struct GeneratedSplit {
    pub dataset: Dataset,
    pub latents: Vec<SampleLatents>,
}

/// Side of the periodic signal textures.
pub const TEXTURE_PERIOD: usize = 8;

/// Balanced ±1 texture number `k`, tiled over the image. Fixed across
/// datasets so that train and test splits share it.
pub fn texture(k: usize, height: usize, width: usize) -> Vec<f64> {
    let cells = TEXTURE_PERIOD * TEXTURE_PERIOD;
    let perm = rng::permutation(&mut rng::seeded(0x7E47_0000 + k as u64), cells);
    let mut cell = vec![-1.0; cells];
    for &i in &perm[..cells / 2] {
        cell[i] = 1.0;
    }
    (0..height * width)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            cell[(y % TEXTURE_PERIOD) * TEXTURE_PERIOD + x % TEXTURE_PERIOD]
        })
        .collect()
}

fn add_artifacts(cfg: &SynthConfig, img: &mut MultiChannelImage, rng: &mut Rng) {
    let (h, w) = (cfg.height, cfg.width);
    let cell = TEXTURE_PERIOD;
    for c in 0..cfg.channels {
        let plane = img.channel_mut(c);
        for cy in (0..h).step_by(cell) {
            for cx in (0..w).step_by(cell) {
                if rng::uniform(rng) >= cfg.artifact_rate {
                    continue;
                }
                for y in cy..(cy + cell).min(h) {
                    for x in cx..(cx + cell).min(w) {
                        plane[y * w + x] += cfg.artifact_std * rng::normal(rng);
                    }
                }
            }
        }
    }
}

fn channel_names(cfg: &SynthConfig) -> Vec<String> {
    let group = cfg.group_of();
    (0..cfg.channels)
        .map(|c| format!("g{}c{}", group[c], c))
        .collect()
}

fn generate_split(cfg: &SynthConfig, n: usize, rng: &mut Rng) -> Result<GeneratedSplit> {
    let mixer = FieldMixer::new(cfg)?;
    let group = cfg.group_of();
    let plane = cfg.height * cfg.width;
    let class_tex: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|k| texture(k, cfg.height, cfg.width))
        .collect();
    let bits = cfg.label_bits();
    let common = texture(cfg.num_classes, cfg.height, cfg.width);
    let (wc, wp) = (cfg.texture_overlap.sqrt(), (1.0 - cfg.texture_overlap).sqrt());
    let group_tex: Vec<Vec<f64>> = (0..bits)
        .map(|g| {
            let private = texture(cfg.num_classes + 1 + g, cfg.height, cfg.width);
            common.iter().zip(&private).map(|(a, b)| wc * a + wp * b).collect()
        })
        .collect();

    let mut ds = Dataset::new(channel_names(cfg), cfg.height, cfg.width, cfg.num_classes)?;
    let mut latents = Vec::with_capacity(n);
    let mut field = vec![0.0; cfg.channels];
    for _ in 0..n {
        let label = rng.random_range(0..cfg.num_classes);
        let amplitudes: Vec<f64> = if cfg.info_mode == InfoMode::Complementary {
            (0..bits)
                .map(|b| {
                    let sign = if (label >> b) & 1 == 1 { 1.0 } else { -1.0 };
                    sign * cfg.signal_strength
                })
                .collect()
        } else {
            Vec::new()
        };
        let decoys: Vec<f64> = if cfg.info_mode == InfoMode::Complementary {
            (bits..cfg.channel_groups.len())
                .map(|_| {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    sign * cfg.decoy_strength
                })
                .collect()
        } else {
            Vec::new()
        };

        let mut img = MultiChannelImage::zeros(cfg.channels, cfg.height, cfg.width);
        let data = img.data_mut();
        for p in 0..plane {
            mixer.draw(rng, &mut field);
            for c in 0..cfg.channels {
                let signal = match cfg.info_mode {
                    InfoMode::Redundant => cfg.signal_strength * class_tex[label][p],
                    InfoMode::Isolated if group[c] == 0 => cfg.signal_strength * class_tex[label][p],
                    InfoMode::Isolated => 0.0,
                    InfoMode::Complementary if group[c] < bits => {
                        amplitudes[group[c]] * group_tex[group[c]][p]
                    }
                    InfoMode::Complementary => {
                        let j = group[c] - bits;
                        decoys[j] * group_tex[j % bits][p]
                    }
                };
                let mut v = cfg.offset(c)
                    + cfg.gain(c) * (cfg.signal_gain(c) * signal + cfg.field_std * field[c]);
                if cfg.noise_std > 0.0 {
                    v += cfg.noise_std * rng::normal(rng);
                }
                data[c * plane + p] = v;
            }
        }
        if cfg.artifact_rate > 0.0 {
            add_artifacts(cfg, &mut img, rng);
        }
        ds.push(&img, label)?;
        latents.push(SampleLatents {
            label,
            group_amplitudes: amplitudes,
        });
    }
    Ok(GeneratedSplit {
        dataset: ds,
        latents,
    })
}

use rand::Rng as _;

/// Train and test splits drawn from independent streams of `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<(GeneratedSplit, GeneratedSplit)> {
    cfg.validate()?;
    let mut streams = rng::streams(cfg.seed, 2);
    let train = generate_split(cfg, cfg.train_samples, &mut streams[0])?;
    let test = generate_split(cfg, cfg.test_samples, &mut streams[1])?;
    Ok((train, test))
}

/// Pearson correlation between channels over all pixels of all samples.
pub fn pixel_correlation(ds: &Dataset) -> Vec<Vec<f64>> {
    let c = ds.channels();
    let plane = ds.height() * ds.width();
    let mut sum = vec![0.0; c];
    let mut cross = vec![vec![0.0; c]; c];
    let mut count = 0.0;
    for i in 0..ds.len() {
        let img = ds.image(i);
        for p in 0..plane {
            for a in 0..c {
                let va = img.data()[a * plane + p];
                sum[a] += va;
                for b in a..c {
                    cross[a][b] += va * img.data()[b * plane + p];
                }
            }
            count += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let cov = |a: usize, b: usize| {
        let (lo, hi) = (a.min(b), a.max(b));
        cross[lo][hi] / count - mean[a] * mean[b]
    };
    (0..c)
        .map(|a| {
            (0..c)
                .map(|b| cov(a, b) / (cov(a, a) * cov(b, b)).sqrt())
                .collect()
        })
        .collect()
}
