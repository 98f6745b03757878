//! Canned reproduction recipes. Every stage is recorded in the run
//! manifest; on failure the outputs written so far are kept and the
//! manifest names the failed stage.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use channelvit::analysis::{channel_embedding_correlation, matrix_csv};
use channelvit::data::Dataset;
use channelvit::evaluation::{accuracy, gain_report};
use channelvit::experiments::{
    desk_train_config, single_channel_drop, COMPLEMENTARY_EPOCHS, DUPLICATE_EPOCHS,
    RELEVANCE_EPOCHS, RELEVANCE_IMAGES, SAMPLING_COMPARISON_EPOCHS,
};
use channelvit::models::{checkpoint, ModelParams, Variant};
use channelvit::relevance::{relevance, Method};
use channelvit::sampling::{ChannelCombination, SamplingMode};
use channelvit::training::log_csv;

use crate::commands::{eval_report, generate_data, owned, train_on, write_file};
use crate::config::{Preset, RunConfig};
use crate::manifest::RunManifest;
use crate::ConfigArgs;

pub const RECIPES: &[&str] = &[
    "hcs-vs-none",
    "complementary",
    "isolated-relevance",
    "duplicate-embedding",
];

fn base_config(recipe: &str, seed: u64) -> Result<RunConfig> {
    let (preset, variant, epochs, mode) = match recipe {
        "hcs-vs-none" => (Preset::RedundantRgb, Variant::Vit, SAMPLING_COMPARISON_EPOCHS, SamplingMode::Hcs),
        "complementary" => (Preset::Complementary, Variant::ChannelVitTied, COMPLEMENTARY_EPOCHS, SamplingMode::Hcs),
        "isolated-relevance" => (Preset::Isolated, Variant::ChannelVitTied, RELEVANCE_EPOCHS, SamplingMode::Hcs),
        "duplicate-embedding" => (
            Preset::DistinctChannels,
            Variant::ChannelVitTied,
            DUPLICATE_EPOCHS,
            SamplingMode::None,
        ),
        other => bail!("unknown recipe '{other}' (expected one of {})", RECIPES.join(", ")),
    };
    let mut cfg = RunConfig::from_preset(preset, seed);
    cfg.model.variant = variant;
    cfg.train = desk_train_config(epochs, seed, mode);
    if recipe == "duplicate-embedding" {
        cfg.duplicate_channel = Some(0);
    }
    Ok(cfg)
}

struct Run<'a> {
    root: &'a Path,
    manifest: RunManifest,
}

impl Run<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        let result = f(self);
        self.manifest.record_stage(name, result.is_ok());
        if result.is_err() {
            if let Err(e) = self.manifest.write(self.root) {
                log::error!("could not write the failure manifest: {e:#}");
            }
        }
        result.with_context(|| format!("stage {name} failed"))
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        write_file(&self.root.join(rel), bytes)?;
        self.manifest.add_output(rel);
        Ok(())
    }

    fn save_dataset(&mut self, rel: &str, ds: &Dataset) -> Result<()> {
        self.write(rel, ds.to_bytes())
    }

    fn train(&mut self, dir: &str, cfg: &RunConfig, ds: &Dataset) -> Result<ModelParams> {
        let (params, log) = train_on(cfg, ds)?;
        self.write(&format!("{dir}/model.ckpt"), checkpoint::to_bytes(&params))?;
        self.write(&format!("{dir}/log.csv"), log_csv(&log))?;
        Ok(params)
    }
}

pub fn run(recipe: &str, seed: u64, args: &ConfigArgs, out_dir: &Path) -> Result<()> {
    let cfg = base_config(recipe, seed)?.resolve(args.config.as_deref(), &args.set)?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut run = Run {
        root: out_dir,
        manifest: RunManifest::new(format!("run {recipe}"), owned(&cfg)),
    };
    run.write("config.txt", cfg.to_text())?;
    let (train, test) = run.stage("gen", |r| {
        let (train, test) = generate_data(&cfg)?;
        r.save_dataset("data/train.mcds", &train)?;
        r.save_dataset("data/test.mcds", &test)?;
        Ok((train, test))
    })?;
    match recipe {
        "hcs-vs-none" => hcs_vs_none(&mut run, &cfg, &train, &test)?,
        "complementary" => complementary(&mut run, &cfg, &train, &test)?,
        "isolated-relevance" => isolated(&mut run, &cfg, &train, &test)?,
        "duplicate-embedding" => duplicate(&mut run, &cfg, &train)?,
        _ => unreachable!("recipe names are checked by base_config"),
    }
    let path = run.manifest.write(out_dir)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn with_mode(cfg: &RunConfig, mode: SamplingMode) -> RunConfig {
    let mut c = cfg.clone();
    c.train.sampler.mode = mode;
    c
}

fn hcs_vs_none(run: &mut Run, cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    let mut reports = Vec::new();
    for (arm, mode) in [("none", SamplingMode::None), ("hcs", SamplingMode::Hcs)] {
        let params = run.stage(&format!("train_{arm}"), |r| r.train(arm, &with_mode(cfg, mode), train))?;
        let report = run.stage(&format!("eval_{arm}"), |r| {
            let report = eval_report(&params, test)?;
            r.write(&format!("{arm}/eval.csv"), report.to_csv())?;
            r.write(&format!("{arm}/eval.grouped.csv"), report.grouped_csv())?;
            Ok(report)
        })?;
        reports.push((arm, report));
    }
    run.stage("analyze", |r| {
        let gain = gain_report(&reports[1].1, &reports[0].1)?;
        r.write("gain.csv", gain.to_csv())?;
        r.write("gain.grouped.csv", gain.grouped_csv())?;
        let mut summary = String::from("arm,full_accuracy,single_channel_mean,drop\n");
        for (arm, rep) in &reports {
            let full = rep.grouped.last().ok_or_else(|| anyhow!("empty report"))?.mean;
            let single = rep.group(1).ok_or_else(|| anyhow!("no single-channel group"))?.mean;
            writeln!(summary, "{arm},{full:.4},{single:.4},{:.4}", single_channel_drop(rep))?;
        }
        r.write("summary.csv", summary)
    })
}

fn complementary(run: &mut Run, cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    let full = ChannelCombination::full(train.channels())?;
    let mut summary = String::from("model,full_accuracy\n");
    for variant in [Variant::ChannelVitTied, Variant::ChannelVitUntied, Variant::Vit] {
        let name = variant.as_str();
        let mut c = cfg.clone();
        c.model.variant = variant;
        let params = run.stage(&format!("train_{name}"), |r| r.train(name, &c, train))?;
        run.stage(&format!("eval_{name}"), |r| {
            writeln!(summary, "{name},{:.4}", accuracy(&params, test, &full)?)?;
            if variant == Variant::ChannelVitTied {
                let shared = params.with_shared_channel_embedding()?;
                writeln!(summary, "{name}_shared_embedding,{:.4}", accuracy(&shared, test, &full)?)?;
                let corr = channel_embedding_correlation(&params)?;
                r.write("embeddings.csv", matrix_csv(&corr, train.channel_names()))?;
            }
            Ok(())
        })?;
    }
    run.stage("analyze", |r| r.write("summary.csv", &summary))
}

fn isolated(run: &mut Run, cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<()> {
    let params = run.stage("train", |r| r.train("model", cfg, train))?;
    run.stage("analyze", |r| {
        let full = ChannelCombination::full(train.channels())?;
        let mut out = String::from("method,channel,informative,relevance\n");
        let informative = cfg.data.channel_groups[0].clone();
        for method in [Method::Rollout, Method::Grad] {
            let mut totals = vec![0.0; train.channels()];
            for i in 0..RELEVANCE_IMAGES.min(test.len()) {
                let map = relevance(&params, &test.image(i), &full, test.label(i), method)?;
                totals.iter_mut().zip(map.row_sums()).for_each(|(t, s)| *t += s);
            }
            let tag = if method == Method::Rollout { "rollout" } else { "grad" };
            for (c, t) in totals.iter().enumerate() {
                writeln!(out, "{tag},{c},{},{t:.6}", informative.contains(&c))?;
            }
        }
        r.write("relevance.csv", out)
    })
}

fn duplicate(run: &mut Run, cfg: &RunConfig, train: &Dataset) -> Result<()> {
    let params = run.stage("train", |r| r.train("model", cfg, train))?;
    run.stage("analyze", |r| {
        let corr = channel_embedding_correlation(&params)?;
        r.write("embeddings.csv", matrix_csv(&corr, train.channel_names()))?;
        let (a, b) = (cfg.duplicate_channel.unwrap_or(0), train.channels() - 1);
        let cross = (0..corr.len())
            .flat_map(|i| (i + 1..corr.len()).map(move |j| (i, j)))
            .filter(|&p| p != (a.min(b), a.max(b)))
            .map(|(i, j)| corr[i][j])
            .fold(f64::NEG_INFINITY, f64::max);
        r.write(
            "summary.csv",
            format!("pair_correlation,max_cross_correlation\n{:.4},{cross:.4}\n", corr[a][b]),
        )
    })
}
