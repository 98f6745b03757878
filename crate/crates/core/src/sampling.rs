//! Channel-subset sampling for training and subset enumeration for
//! evaluation.
//!
//! Hierarchical channel sampling (HCS) draws the subset size `m` uniformly
//! from `1..=C` and then a uniform `m`-subset, so every size is equally
//! represented. Independent channel dropout keeps each channel with
//! probability `1 - p`; empty draws are rejected, which makes the size
//! distribution a zero-truncated binomial.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Nonempty, strictly increasing subset of `0..source_channels`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelCombination {
    indices: Vec<usize>,
    source_channels: usize,
}

impl ChannelCombination {
    pub fn new(indices: Vec<usize>, source_channels: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Input("channel combination must be nonempty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "channel indices must be strictly increasing, got {indices:?}"
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&c| c >= source_channels) {
            return Err(Error::Input(format!(
                "channel {bad} out of range for {source_channels} channels"
            )));
        }
        Ok(ChannelCombination {
            indices,
            source_channels,
        })
    }

    /// Sorts `indices`; duplicates are rejected.
    pub fn from_unordered(mut indices: Vec<usize>, source_channels: usize) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices, source_channels)
    }

    pub fn full(source_channels: usize) -> Result<Self> {
        Self::new((0..source_channels).collect(), source_channels)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_channels(&self) -> usize {
        self.source_channels
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.source_channels
    }

    pub fn contains(&self, c: usize) -> bool {
        self.indices.binary_search(&c).is_ok()
    }

    /// Dash-joined indices, e.g. `0-2`.
    pub fn label(&self) -> String {
        self.indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn parse_label(label: &str, source_channels: usize) -> Result<Self> {
        let indices = label
            .split('-')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Input(format!("bad channel combination '{label}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, source_channels)
    }
}

impl fmt::Display for ChannelCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.label().replace('-', ","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Always the full set (no channel sampling).
    None,
    Hcs,
    Dropout,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::None => "none",
            SamplingMode::Hcs => "hcs",
            SamplingMode::Dropout => "dropout",
        }
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SamplingMode::None),
            "hcs" => Ok(SamplingMode::Hcs),
            "dropout" => Ok(SamplingMode::Dropout),
            other => Err(Error::Config(format!(
                "unknown sampling mode '{other}' (expected none, hcs or dropout)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub mode: SamplingMode,
    /// Per-channel drop probability; dropout mode only.
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SamplingMode::Hcs,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == SamplingMode::Dropout && !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Stateful sampler owning its random stream.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    config: SamplerConfig,
    rng: Rng,
}

impl ChannelSampler {
    pub fn new(config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let rng = rng::seeded(config.seed);
        Ok(ChannelSampler { config, rng })
    }

    pub fn with_rng(config: SamplerConfig, rng: Rng) -> Result<Self> {
        config.validate()?;
        Ok(ChannelSampler { config, rng })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn sample(&mut self, channels: usize) -> Result<ChannelCombination> {
        match self.config.mode {
            SamplingMode::None => ChannelCombination::full(channels),
            SamplingMode::Hcs => hcs_sample(channels, &mut self.rng),
            SamplingMode::Dropout => {
                dropout_sample(channels, self.config.dropout_rate, &mut self.rng)
            }
        }
    }

    /// Samples among `available` channels only (partial-availability data);
    /// the result is expressed in the `source_channels` index space.
    pub fn sample_from(
        &mut self,
        available: &ChannelCombination,
    ) -> Result<ChannelCombination> {
        let local = self.sample(available.len())?;
        let picked = local
            .indices()
            .iter()
            .map(|&i| available.indices()[i])
            .collect();
        ChannelCombination::new(picked, available.source_channels())
    }
}

/// `m ~ U{1..C}`, then a uniform `m`-subset.
pub fn hcs_sample(channels: usize, rng: &mut Rng) -> Result<ChannelCombination> {
    if channels == 0 {
        return Err(Error::Input("cannot sample channels from an empty set".into()));
    }
    let m = rng.random_range(1..=channels);
    let picked = rand::seq::index::sample(rng, channels, m).into_vec();
    ChannelCombination::from_unordered(picked, channels)
}

/// Keeps each channel with probability `1 - p`, redrawing empty outcomes.
pub fn dropout_sample(channels: usize, p: f64, rng: &mut Rng) -> Result<ChannelCombination> {
    if channels == 0 {
        return Err(Error::Input("cannot sample channels from an empty set".into()));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate must be in [0, 1), got {p}")));
    }
    loop {
        let kept: Vec<usize> = (0..channels)
            .filter(|_| rng::uniform(rng) >= p)
            .collect();
        if !kept.is_empty() {
            return ChannelCombination::new(kept, channels);
        }
    }
}

/// Analytic distribution of the sampled subset size; entry `m - 1` holds
/// `P(|S| = m)`.
pub fn exact_size_distribution(config: &SamplerConfig, channels: usize) -> Result<Vec<f64>> {
    config.validate()?;
    if channels == 0 {
        return Err(Error::Input("channel count must be positive".into()));
    }
    let c = channels;
    Ok(match config.mode {
        SamplingMode::None => (1..=c).map(|m| if m == c { 1.0 } else { 0.0 }).collect(),
        SamplingMode::Hcs => vec![1.0 / c as f64; c],
        SamplingMode::Dropout => {
            let p = config.dropout_rate;
            let nonempty = 1.0 - p.powi(c as i32);
            (1..=c)
                .map(|m| {
                    binomial(c, m) * (1.0 - p).powi(m as i32) * p.powi((c - m) as i32) / nonempty
                })
                .collect()
        }
    })
}

/// Binomial coefficient as `f64` (exact for the small arguments used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All `m`-subsets of `0..channels` in lexicographic order.
pub fn enumerate_combinations(channels: usize, m: usize) -> Result<Vec<ChannelCombination>> {
    if m == 0 || m > channels {
        return Err(Error::Input(format!(
            "subset size {m} out of range 1..={channels}"
        )));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(ChannelCombination::new(idx.clone(), channels)?);
        // advance the rightmost index that still has room
        let Some(i) = (0..m).rev().find(|&i| idx[i] < channels - m + i) else {
            break;
        };
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Every nonempty subset, ordered by size and then lexicographically.
pub fn all_combinations(channels: usize) -> Result<Vec<ChannelCombination>> {
    let mut out = Vec::new();
    for m in 1..=channels {
        out.extend(enumerate_combinations(channels, m)?);
    }
    Ok(out)
}
