use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use channelvit::analysis::{
    channel_embedding_correlation, matrix_csv, size_distribution_csv, size_distributions,
};
use channelvit::data::{generate, Dataset};
use channelvit::evaluation::{evaluate_all_combinations, gain_report, CombinationReport};
use channelvit::models::{checkpoint, ModelParams};
use channelvit::relevance::{relevance as relevance_map, to_pgm, upsample_nearest, Method};
use channelvit::rng;
use channelvit::sampling::{ChannelCombination, SamplerConfig, SamplingMode};
use channelvit::training::{log_csv, steps_per_epoch, LogRow, Trainer};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{AnalyzeCommand, ConfigArgs};

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Train and test splits for `cfg`, with the duplicate channel appended
/// when configured.
pub fn generate_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (train, test) = generate(&cfg.data)?;
    match cfg.duplicate_channel {
        Some(c) => Ok((
            train.dataset.with_duplicate_channel(c)?,
            test.dataset.with_duplicate_channel(c)?,
        )),
        None => Ok((train.dataset, test.dataset)),
    }
}

/// Initializes from the run seed and trains for the configured epochs.
pub fn train_on(cfg: &RunConfig, ds: &Dataset) -> Result<(ModelParams, Vec<LogRow>)> {
    let mcfg = cfg.model_config(ds)?;
    let params = ModelParams::init(&mcfg, &mut rng::seeded(cfg.seed))?;
    let spe = steps_per_epoch(ds.len(), cfg.train.batch_size);
    let mut trainer = Trainer::new(params, cfg.train.clone(), spe)?;
    for epoch in 0..cfg.train.schedule.total_epochs {
        let loss = trainer.train_epoch(ds)?;
        log::info!(
            "{} epoch {}/{} loss {loss:.4}",
            mcfg.variant.as_str(),
            epoch + 1,
            cfg.train.schedule.total_epochs
        );
    }
    let log = trainer.log().to_vec();
    Ok((trainer.into_params(), log))
}

pub fn gen_data(args: &ConfigArgs, out_dir: &Path) -> Result<()> {
    let cfg = RunConfig::default().resolve(args.config.as_deref(), &args.set)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = RunManifest::new("gen-data", owned(&cfg));
    let (train, test) = generate_data(&cfg)?;
    for (name, ds) in [("train.mcds", &train), ("test.mcds", &test)] {
        ds.save(out_dir.join(name))?;
        manifest.add_output(name);
    }
    write_file(&out_dir.join("config.txt"), cfg.to_text())?;
    manifest.add_output("config.txt");
    manifest.record_stage("gen", true);
    manifest.write(out_dir)?;
    log::info!("wrote {} train and {} test images to {}", train.len(), test.len(), out_dir.display());
    Ok(())
}

pub fn owned(cfg: &RunConfig) -> Vec<(String, String)> {
    cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn train(args: &ConfigArgs, data: Option<&Path>, out: &Path, log_path: &Path) -> Result<()> {
    let cfg = RunConfig::default().resolve(args.config.as_deref(), &args.set)?;
    let ds = match data {
        Some(p) => load_dataset(p)?,
        None => generate_data(&cfg)?.0,
    };
    let (params, log) = train_on(&cfg, &ds)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    checkpoint::save(&params, out)?;
    write_file(log_path, log_csv(&log))?;
    Ok(())
}

fn grouped_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "eval".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.grouped.csv"))
}

pub fn eval_report(params: &ModelParams, ds: &Dataset) -> Result<CombinationReport> {
    Ok(evaluate_all_combinations(params, ds)?)
}

pub fn write_report(report: &CombinationReport, out: &Path, grouped: &Path) -> Result<()> {
    write_file(out, report.to_csv())?;
    write_file(grouped, report.grouped_csv())
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path, grouped_out: Option<&Path>) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    let report = eval_report(&params, &ds)?;
    let grouped = grouped_out.map_or_else(|| grouped_path(out), Path::to_path_buf);
    write_report(&report, out, &grouped)?;
    for g in &report.grouped {
        log::info!("m={} mean accuracy {:.4} (std {:.4}, {} combinations)", g.m, g.mean, g.std, g.count);
    }
    Ok(())
}

pub fn relevance(
    checkpoint: &Path,
    image: &Path,
    index: usize,
    class: usize,
    method: &str,
    channels: Option<&str>,
    out_prefix: &Path,
) -> Result<()> {
    let method: Method = method.parse()?;
    let params = load_checkpoint(checkpoint)?;
    let ds = load_dataset(image)?;
    if index >= ds.len() {
        bail!("image index {index} out of range for {} images", ds.len());
    }
    let c = ds.channels();
    let combo = match channels {
        Some(label) => ChannelCombination::parse_label(label, c)?,
        None => ChannelCombination::full(c)?,
    };
    let map = relevance_map(&params, &ds.image(index), &combo, class, method)?;
    let cfg = params.config();
    let (gh, gw) = (cfg.image_h / cfg.patch_size, cfg.image_w / cfg.patch_size);
    let prefix = out_prefix.to_string_lossy();
    write_file(Path::new(&format!("{prefix}.csv")), map.to_csv())?;
    for (r, scores) in map.scores.iter().enumerate() {
        let tag = match &map.channels {
            Some(ch) => format!("c{}", ch[r]),
            None => "all".to_string(),
        };
        let pixels = upsample_nearest(scores, gh, gw, cfg.patch_size);
        write_file(
            Path::new(&format!("{prefix}_{tag}.pgm")),
            to_pgm(&pixels, cfg.image_h, cfg.image_w),
        )?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("invalid {what} '{v}': {e}"))
        })
        .collect()
}

pub fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Sampler {
            channels,
            dropout_rates,
            draws,
            seed,
            out,
        } => {
            let counts: Vec<usize> = parse_list("channel count", &channels)?;
            let mut samplers = vec![SamplerConfig {
                mode: SamplingMode::Hcs,
                seed,
                ..Default::default()
            }];
            for p in parse_list::<f64>("dropout rate", &dropout_rates)? {
                samplers.push(SamplerConfig {
                    mode: SamplingMode::Dropout,
                    dropout_rate: p,
                    seed,
                });
            }
            let rows = size_distributions(&samplers, &counts, draws)?;
            write_file(&out, size_distribution_csv(&rows))
        }
        AnalyzeCommand::Embeddings { checkpoint, out } => {
            let params = load_checkpoint(&checkpoint)?;
            let corr = channel_embedding_correlation(&params)?;
            let names: Vec<String> = (0..corr.len()).map(|c| format!("c{c}")).collect();
            write_file(&out, matrix_csv(&corr, &names))
        }
        AnalyzeCommand::Gain {
            a,
            b,
            channels,
            out,
            grouped_out,
        } => {
            let read = |p: &Path| -> Result<CombinationReport> {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(CombinationReport::from_csv(&text, channels, 0)?)
            };
            let gain = gain_report(&read(&a)?, &read(&b)?)?;
            let grouped = grouped_out.unwrap_or_else(|| grouped_path(&out));
            write_file(&out, gain.to_csv())?;
            write_file(&grouped, gain.grouped_csv())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_path_is_a_sibling() {
        assert_eq!(grouped_path(Path::new("out/eval.csv")), PathBuf::from("out/eval.grouped.csv"));
    }
}
