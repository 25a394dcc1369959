//! `dck`: preprocess, train, evaluate, inspect and gradcheck.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dck_core::harness::data::{self, preprocess, DataDir, PreprocessOptions};
use dck_core::harness::pipeline::{data_for_model, train_from_dir, write_json, write_run};
use dck_core::harness::{
    checkpoint, evaluate_report, export_selection_weights, oracles, AblationFlags, Dataset, ModelConfig,
    TrainOptions,
};

#[derive(Parser)]
#[command(name = "dck", version, about = "Knowledge-grounded multi-turn response selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw dataset, build the vocabulary and corpus vectors, encode every split.
    Preprocess {
        #[arg(long)]
        dataset: Dataset,
        /// Raw split directory [default: $DCK_DATA_DIR/{persona,cmudog}]
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output directory [default: $DCK_DATA_DIR/processed/<dataset>]
        #[arg(long)]
        out: Option<PathBuf>,
        /// Config whose limits, dims and seed to use (dataset must agree).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretrained `token v1 .. vd` vectors.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Keep the first N dialogues of each split.
        #[arg(long)]
        max_dialogues: Option<usize>,
    },
    /// Train with early stopping; writes checkpoint, history and metrics to output_dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated ablation flags.
        #[arg(long)]
        ablate: Option<String>,
        /// Preprocessed data directory [default: config data_dir, else $DCK_DATA_DIR/processed/<dataset>]
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory [default: config output_dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the metrics report of a split as JSON.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Add per context-length bucket metrics.
        #[arg(long)]
        buckets: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export selection weights, post-selection weights and logits of one sample.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample_id: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print a complete default config file.
    Defaults {
        #[arg(long, default_value = "persona_original")]
        dataset: Dataset,
        /// The small gradient-check / overfit configuration.
        #[arg(long)]
        tiny: bool,
    },
    /// Finite-difference check of every primitive and of the full loss.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ModelConfig> {
    ModelConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Preprocess {
            dataset,
            input,
            out,
            config,
            vectors,
            max_dialogues,
        } => {
            let config = match config {
                Some(p) => {
                    let c = load_config(&p)?;
                    if c.dataset != dataset {
                        bail!("config is for {}, --dataset is {dataset}", c.dataset);
                    }
                    c
                }
                None => ModelConfig::for_dataset(dataset),
            };
            let input = input.unwrap_or_else(|| data::raw_dir(dataset));
            let out = out.unwrap_or_else(|| data::processed_dir(dataset));
            let opts = PreprocessOptions {
                config,
                vectors,
                max_dialogues,
            };
            let meta = preprocess(&input, &out, &opts)?;
            eprintln!("wrote {}", out.display());
            println!("{}", serde_json::to_string_pretty(&meta)?);
        }
        Command::Train {
            config,
            seed,
            ablate,
            data,
            out,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(list) = ablate {
                cfg.ablation = AblationFlags::parse_list(&list)?;
            }
            cfg.validate()?;
            let dir = match data {
                Some(p) => DataDir::open(&p)?,
                None => DataDir::for_config(&cfg)?,
            };
            cfg.data_dir = dir.path.display().to_string();
            let run = train_from_dir(&cfg, &dir, TrainOptions::default(), |e| {
                eprintln!(
                    "epoch {:>2}  train loss {:.4}  valid loss {:.4}  R@1 {:.4}  R@2 {:.4}  R@5 {:.4}{}  ({:.1}s)",
                    e.epoch,
                    e.train_loss,
                    e.valid_loss,
                    e.valid_r_at_1,
                    e.valid_r_at_2,
                    e.valid_r_at_5,
                    if e.improved { "  *" } else { "" },
                    e.wall_time_secs
                )
            })?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let ckpt = write_run(&out, &run)?;
            eprintln!("best epoch {}, checkpoint {}", run.history.best_epoch, ckpt.display());
            println!("{}", serde_json::to_string_pretty(&run.valid)?);
        }
        Command::Evaluate {
            checkpoint,
            split,
            buckets,
            data,
            out,
        } => {
            let model = checkpoint::load(&checkpoint)?;
            let dir = data_for_model(&model, data.as_deref())?;
            let samples = dir.samples(&split, 0)?;
            let report = evaluate_report(&model, &split, &samples, buckets)?;
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Inspect {
            checkpoint,
            sample_id,
            out,
            split,
            data,
        } => {
            let model = checkpoint::load(&checkpoint)?;
            let dir = data_for_model(&model, data.as_deref())?;
            let samples = dir.samples(&split, 0)?;
            let Some(sample) = samples.get(sample_id) else {
                bail!("sample {sample_id} out of range: {split} has {} samples", samples.len());
            };
            let raw = dir.raw_samples(&split)?;
            let record = export_selection_weights(&model, sample_id, sample, raw.get(sample_id))?;
            write_json(&out, &record)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Defaults { dataset, tiny } => {
            let cfg = if tiny {
                let mut c = ModelConfig::tiny();
                c.set("dataset", dataset.name())?;
                c
            } else {
                ModelConfig::for_dataset(dataset)
            };
            print!("{}", cfg.to_text());
        }
        Command::Gradcheck { config } => {
            let cfg = load_config(&config)?;
            let start = std::time::Instant::now();
            let cases = oracles::run_suite(&cfg)?;
            let mut ok = true;
            for c in &cases {
                let worst = c.worst.clone().unwrap_or_default();
                println!(
                    "{:<4} {:<28} max rel error {:.3e} over {} entries {}",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.max_rel_error,
                    c.entries,
                    worst
                );
                ok &= c.passed;
            }
            println!("{} cases, {:.1}s", cases.len(), start.elapsed().as_secs_f64());
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
