//! Canned desk-scale experiments on synthetic data. Each run is fully
//! determined by its seed, which drives data generation, initialization,
//! shuffling and channel sampling.

use crate::analysis::channel_embedding_correlation;
use crate::data::{generate, Dataset, SynthConfig};
use crate::error::Result;
use crate::evaluation::{accuracy, evaluate_all_combinations, CombinationReport};
use crate::models::{ModelConfig, ModelParams, Variant};
use crate::relevance::{relevance, Method};
use crate::rng;
use crate::sampling::{ChannelCombination, SamplerConfig, SamplingMode};
use crate::training::{steps_per_epoch, LogRow, ScheduleConfig, TrainConfig, Trainer};

/// Short schedule used by every recipe: one warmup epoch, peak lr 1e-3,
/// weight decay 0.01 → 0.05.
pub fn desk_train_config(epochs: usize, seed: u64, mode: SamplingMode) -> TrainConfig {
    TrainConfig {
        schedule: ScheduleConfig {
            peak_lr: 1e-3,
            warmup_epochs: 1,
            total_epochs: epochs,
            wd_start: 0.01,
            wd_end: 0.05,
            ..ScheduleConfig::default()
        },
        sampler: SamplerConfig {
            mode,
            seed,
            ..SamplerConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

/// Initializes a tiny model for `train` from `init_seed` and fits it.
pub fn train_model(
    train: &Dataset,
    variant: Variant,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(ModelParams, Vec<LogRow>)> {
    let mcfg = ModelConfig::tiny(train.channels(), train.num_classes(), train.height(), variant);
    let params = ModelParams::init(&mcfg, &mut rng::seeded(init_seed))?;
    let spe = steps_per_epoch(train.len(), config.batch_size);
    let mut trainer = Trainer::new(params, config.clone(), spe)?;
    trainer.fit(train)?;
    let log = trainer.log().to_vec();
    Ok((trainer.into_params(), log))
}

fn train_seeded(
    train: &Dataset,
    variant: Variant,
    epochs: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<ModelParams> {
    train_model(train, variant, &desk_train_config(epochs, seed, mode), seed).map(|(p, _)| p)
}

/// The same architecture trained without and with hierarchical channel
/// sampling, evaluated on every channel combination.
#[derive(Clone, Debug)]
pub struct SamplingComparison {
    pub seed: u64,
    pub variant: Variant,
    pub none: CombinationReport,
    pub hcs: CombinationReport,
}

/// Full-channel accuracy minus the mean single-channel accuracy.
pub fn single_channel_drop(report: &CombinationReport) -> f64 {
    let full = report
        .grouped
        .last()
        .expect("reports cover at least one size")
        .mean;
    full - report.group(1).expect("reports cover size 1").mean
}

pub const SAMPLING_COMPARISON_EPOCHS: usize = 4;

/// ViT on the redundant three-channel preset.
pub fn sampling_comparison(seed: u64) -> Result<SamplingComparison> {
    sampling_comparison_on(
        &SynthConfig::redundant_rgb(seed),
        Variant::Vit,
        SAMPLING_COMPARISON_EPOCHS,
    )
}

pub fn sampling_comparison_on(
    data: &SynthConfig,
    variant: Variant,
    epochs: usize,
) -> Result<SamplingComparison> {
    let (train, test) = generate(data)?;
    let report = |mode| {
        train_seeded(&train.dataset, variant, epochs, data.seed, mode)
            .and_then(|p| evaluate_all_combinations(&p, &test.dataset))
    };
    let none = report(SamplingMode::None)?;
    let hcs = report(SamplingMode::Hcs)?;
    Ok(SamplingComparison {
        seed: data.seed,
        variant,
        none,
        hcs,
    })
}

/// Full-channel accuracies on the complementary preset, all trained with
/// hierarchical channel sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplementaryOutcome {
    pub seed: u64,
    pub tied: f64,
    pub untied: f64,
    pub vit: f64,
    /// The tied model with every channel embedding replaced by their mean.
    pub tied_shared_embedding: f64,
}

pub const COMPLEMENTARY_EPOCHS: usize = 16;

pub fn complementary_ablation(seed: u64) -> Result<ComplementaryOutcome> {
    let data = SynthConfig::complementary(seed);
    let (train, test) = generate(&data)?;
    let full = ChannelCombination::full(data.channels)?;
    let fit = |v| train_seeded(&train.dataset, v, COMPLEMENTARY_EPOCHS, seed, SamplingMode::Hcs);
    let tied = fit(Variant::ChannelVitTied)?;
    let untied = fit(Variant::ChannelVitUntied)?;
    let vit = fit(Variant::Vit)?;
    Ok(ComplementaryOutcome {
        seed,
        tied: accuracy(&tied, &test.dataset, &full)?,
        untied: accuracy(&untied, &test.dataset, &full)?,
        vit: accuracy(&vit, &test.dataset, &full)?,
        tied_shared_embedding: accuracy(
            &tied.with_shared_channel_embedding()?,
            &test.dataset,
            &full,
        )?,
    })
}

/// Relevance per channel on data where a single channel carries the label.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceTrial {
    pub seed: u64,
    pub informative: usize,
    /// Raw relevance summed over patches and evaluation images.
    pub channel_totals: Vec<f64>,
    pub accuracy: f64,
}

impl RelevanceTrial {
    pub fn top_channel(&self) -> usize {
        crate::models::argmax(&self.channel_totals)
    }
}

pub const RELEVANCE_EPOCHS: usize = 3;
pub const RELEVANCE_IMAGES: usize = 50;

/// ChannelViT (tied, HCS) on the isolated preset with informative channel
/// `seed mod 3`.
pub fn isolated_relevance(seed: u64, method: Method) -> Result<RelevanceTrial> {
    let informative = (seed % 3) as usize;
    let data = SynthConfig::isolated(seed, informative);
    let (train, test) = generate(&data)?;
    let params = train_seeded(
        &train.dataset,
        Variant::ChannelVitTied,
        RELEVANCE_EPOCHS,
        seed,
        SamplingMode::Hcs,
    )?;
    let full = ChannelCombination::full(data.channels)?;
    let mut totals = vec![0.0; data.channels];
    for i in 0..RELEVANCE_IMAGES.min(test.dataset.len()) {
        let map = relevance(&params, &test.dataset.image(i), &full, test.dataset.label(i), method)?;
        for (t, s) in totals.iter_mut().zip(map.row_sums()) {
            *t += s;
        }
    }
    Ok(RelevanceTrial {
        seed,
        informative,
        channel_totals: totals,
        accuracy: accuracy(&params, &test.dataset, &full)?,
    })
}

/// Learned channel-embedding correlation when one channel is duplicated.
#[derive(Clone, Debug, PartialEq)]
pub struct DuplicateOutcome {
    pub seed: u64,
    pub correlation: Vec<Vec<f64>>,
    pub pair: (usize, usize),
}

impl DuplicateOutcome {
    pub fn pair_correlation(&self) -> f64 {
        self.correlation[self.pair.0][self.pair.1]
    }

    /// Largest correlation between two channels other than the pair.
    pub fn max_cross_correlation(&self) -> f64 {
        let n = self.correlation.len();
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                if (i, j) != self.pair {
                    best = best.max(self.correlation[i][j]);
                }
            }
        }
        best
    }
}

pub const DUPLICATE_EPOCHS: usize = 8;

/// ChannelViT (tied) on the distinct-channel preset with channel 0 copied
/// as the last channel, trained on all channels.
pub fn duplicate_embedding(seed: u64) -> Result<DuplicateOutcome> {
    let data = SynthConfig::distinct_channels(seed);
    let (train, _) = generate(&data)?;
    let ds = train.dataset.with_duplicate_channel(0)?;
    let params = train_seeded(
        &ds,
        Variant::ChannelVitTied,
        DUPLICATE_EPOCHS,
        seed,
        SamplingMode::None,
    )?;
    Ok(DuplicateOutcome {
        seed,
        correlation: channel_embedding_correlation(&params)?,
        pair: (0, data.channels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_cross_skips_the_pair() {
        let o = DuplicateOutcome {
            seed: 0,
            correlation: vec![
                vec![1.0, 0.2, 0.9],
                vec![0.2, 1.0, 0.4],
                vec![0.9, 0.4, 1.0],
            ],
            pair: (0, 2),
        };
        assert_eq!(o.pair_correlation(), 0.9);
        assert_eq!(o.max_cross_correlation(), 0.4);
    }
}
