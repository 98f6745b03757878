mod commands;
mod config;
mod manifest;
mod recipes;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "channelvit", about = "Channel-aware vision transformers on synthetic multi-channel data")]
pub struct Cli {
    /// Worker threads for data-parallel work (1 = sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Plain-text key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set epochs=4`; repeatable, wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train and test datasets.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model and write its checkpoint and log.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training dataset; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: PathBuf,
    },
    /// Accuracy on every channel combination.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-size summary; defaults to `<out>` with a `.grouped.csv` suffix.
        #[arg(long)]
        grouped_out: Option<PathBuf>,
    },
    /// Per-channel relevance maps for one image.
    Relevance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file holding the image.
        #[arg(long)]
        image: PathBuf,
        /// Image index within the dataset.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value = "rollout")]
        method: String,
        /// Channels to feed, dash-joined (e.g. `0-2`); all by default.
        #[arg(long)]
        channels: Option<String>,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Post-hoc analyses.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Canned end-to-end recipe: generate, train, evaluate, analyze.
    Run {
        /// One of hcs-vs-none, complementary, isolated-relevance, duplicate-embedding.
        recipe: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Exact and empirical subset-size distributions of the samplers.
    Sampler {
        /// Comma-separated channel counts.
        #[arg(long, default_value = "3,5,8")]
        channels: String,
        /// Comma-separated dropout rates.
        #[arg(long, default_value = "0.5")]
        dropout_rates: String,
        /// Empirical draws per sampler and channel count (0 = exact only).
        #[arg(long, default_value_t = 0)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation matrix of learned channel embeddings.
    Embeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-combination accuracy gain of `a` over `b` from eval CSVs.
    Gain {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Source channel count of the evaluated models.
        #[arg(long)]
        channels: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grouped_out: Option<PathBuf>,
    },
}

fn version_text() -> String {
    format!(
        "{}\ncheckpoint format {} v{}\ndataset format {} v{}\nmanifest format v{}",
        env!("CARGO_PKG_VERSION"),
        String::from_utf8_lossy(channelvit::models::checkpoint::MAGIC),
        channelvit::models::checkpoint::VERSION,
        String::from_utf8_lossy(channelvit::data::MAGIC),
        channelvit::data::VERSION,
        manifest::MANIFEST_VERSION,
    )
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        channelvit::parallel::set_threads(n)?;
    }
    match cli.command {
        Command::GenData { config, out_dir } => commands::gen_data(&config, &out_dir),
        Command::Train {
            config,
            data,
            out,
            log,
        } => commands::train(&config, data.as_deref(), &out, &log),
        Command::Eval {
            checkpoint,
            data,
            out,
            grouped_out,
        } => commands::eval(&checkpoint, &data, &out, grouped_out.as_deref()),
        Command::Relevance {
            checkpoint,
            image,
            index,
            class,
            method,
            channels,
            out_prefix,
        } => commands::relevance(
            &checkpoint,
            &image,
            index,
            class,
            &method,
            channels.as_deref(),
            &out_prefix,
        ),
        Command::Analyze(cmd) => commands::analyze(cmd),
        Command::Run {
            recipe,
            seed,
            config,
            out_dir,
        } => recipes::run(&recipe, seed, &config, &out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let version: &'static str = Box::leak(version_text().into_boxed_str());
    let matches = Cli::command().version(version).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
