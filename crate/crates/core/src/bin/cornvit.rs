use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cornvit::backbone::StageModel;
use cornvit::config::AppConfig;
use cornvit::data::synthetic::{write_dataset, SyntheticConfig};
use cornvit::data::{build_manifest, split_manifest, DatasetManifest, Split, SplitRatios};
use cornvit::labels::Stage;
use cornvit::service::{serve, InferenceEngine};
use cornvit::training::{evaluate, load_checkpoint, save_checkpoint, train_stage};

#[derive(Parser)]
#[command(name = "cornvit", version, about = "Three-stage corn kernel grading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a stage root of class folders and write a manifest with a stratified split.
    Split {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        #[arg(long)]
        data_root: PathBuf,
        /// Manifest CSV to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one stage; writes `stage<N>.ckpt` and `stage<N>_history.csv` into --out.
    Train {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classification report for a checkpoint on one manifest split.
    Eval {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cascade on one image and print the JSON response.
    Infer {
        #[command(flatten)]
        checkpoints: CheckpointArgs,
        image: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[command(flatten)]
        checkpoints: CheckpointArgs,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, env = "CORNVIT_HOST")]
        host: Option<String>,
        #[arg(long, env = "CORNVIT_PORT")]
        port: Option<u16>,
    },
    /// Write the generated two-class dataset and its manifest.
    Synth {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        /// Directory for the images; the manifest goes to `<out>/manifest.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Preset name (`tiny`, `cvt13`) or TOML file.
    #[arg(long, default_value = "tiny")]
    config: String,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long = "checkpoint-1")]
    checkpoint_1: PathBuf,
    #[arg(long = "checkpoint-2")]
    checkpoint_2: PathBuf,
    #[arg(long = "checkpoint-3")]
    checkpoint_3: PathBuf,
}

impl CheckpointArgs {
    fn engine(&self) -> Result<InferenceEngine> {
        Ok(InferenceEngine::from_checkpoints([&self.checkpoint_1, &self.checkpoint_2, &self.checkpoint_3])?)
    }
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse::<u8>().ok().and_then(Stage::from_number).ok_or_else(|| format!("stage must be 1, 2 or 3, got {s:?}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split { stage, data_root, out, seed } => {
            let scanned = build_manifest(&data_root, stage)?;
            if !scanned.skipped.is_empty() {
                log::warn!("skipped {} undecodable files", scanned.skipped.len());
            }
            let manifest = split_manifest(&scanned, SplitRatios::default(), seed)?;
            manifest.save(&out)?;
            for split in Split::ALL {
                let [a, b] = manifest.split_counts(split);
                println!("{split}: {} ({a} + {b})", a + b);
            }
        }
        Command::Train { stage, manifest, config, out, seed } => {
            let mut cfg = AppConfig::resolve(&config.config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let manifest = DatasetManifest::load(&manifest)?;
            if manifest.stage != stage {
                bail!("manifest is for stage {}, not stage {}", manifest.stage.number(), stage.number());
            }
            let model = StageModel::new(cfg.backbone.clone(), cfg.train.seed)?;
            let outcome =
                train_stage(stage, model, &manifest.samples(Split::Train), &manifest.samples(Split::Val), &cfg.train)?;
            create_dir(&out)?;
            let n = stage.number();
            let ckpt = out.join(format!("stage{n}.ckpt"));
            save_checkpoint(&outcome.model, Some(&outcome.history), &ckpt)?;
            let history = out.join(format!("stage{n}_history.csv"));
            std::fs::write(&history, outcome.history.to_csv()).with_context(|| history.display().to_string())?;
            println!("best epoch {} -> {}", outcome.best_epoch, ckpt.display());
        }
        Command::Eval { stage, manifest, checkpoint, split, out } => {
            let model = load_checkpoint(&checkpoint, Some(stage))?.model;
            let manifest = DatasetManifest::load(&manifest)?;
            let samples = manifest.samples(split);
            if samples.is_empty() {
                bail!("{split} split of the manifest is empty");
            }
            let report = evaluate(&model, stage, &samples, 32)?;
            println!("{report}");
            if let Some(out) = out {
                std::fs::write(&out, report.to_json()).with_context(|| out.display().to_string())?;
            }
        }
        Command::Infer { checkpoints, image } => {
            let engine = checkpoints.engine()?;
            let bytes = std::fs::read(&image).with_context(|| image.display().to_string())?;
            let response = engine.analyze_bytes(&bytes)?;
            eprintln!("{}", response.summary);
            println!("{}", serde_json::to_string_pretty(&response)?);
        }
        Command::Serve { checkpoints, config, host, port } => {
            let mut cfg = AppConfig::resolve(&config.config)?.service;
            cfg.host = host.unwrap_or(cfg.host);
            cfg.port = port.unwrap_or(cfg.port);
            let engine = Arc::new(checkpoints.engine()?);
            tokio::runtime::Runtime::new()?.block_on(serve(engine, &cfg))?;
        }
        Command::Synth { stage, out, seed } => {
            create_dir(&out)?;
            let manifest = write_dataset(&SyntheticConfig { seed, ..Default::default() }, stage, &out)?;
            let path = out.join("manifest.csv");
            manifest.save(&path)?;
            println!("{} images, manifest {}", manifest.len(), path.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
