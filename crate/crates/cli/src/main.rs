//! Command-line surface of the weather-sensing pipeline.
//!
//! Subcommands mirror the pipeline stages: `simulate` a synthetic capture
//! campaign, `preprocess` frames into feature tensors, `train` a model,
//! `eval` a checkpoint, and `report` a periodogram heatmap. All randomness
//! flows from the global `--seed`; identical inputs and seeds produce
//! byte-identical outputs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use isac_weather::chansim::CampaignSpec;
use isac_weather::config::PipelineConfig;
use isac_weather::dataset;
use isac_weather::pipeline;
use isac_weather::tensorio::{manifest_path, DatasetManifest};
use isac_weather::train::Task;

#[derive(Parser)]
#[command(
    name = "isac-weather",
    about = "Weather sensing from OFDM channel estimates",
    version
)]
struct Cli {
    /// Pipeline configuration file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; every random draw in the pipeline derives from it.
    #[arg(long, global = true, default_value_t = 1234)]
    seed: u64,

    /// Output directory of the subcommand.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(value: TaskArg) -> Self {
        match value {
            TaskArg::Classification => Task::Classification,
            TaskArg::Regression => Task::Regression,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic capture campaign into --out.
    Simulate {
        /// Campaign spec file ([[strata]] entries); omit for the built-in
        /// campaign scaled by --scale.
        #[arg(long)]
        campaign: Option<PathBuf>,

        /// Scale factor applied to the built-in campaign sample counts.
        #[arg(long, default_value_t = 0.01)]
        scale: f64,
    },

    /// Turn a dataset directory into feature tensors in --out.
    Preprocess {
        /// Dataset directory produced by `simulate` (or a real capture).
        #[arg(long)]
        data: PathBuf,

        /// Weather-station CSV (ISO-8601 timestamp, precipitation mm/h,
        /// wind km/h) to pair labels from before feature extraction.
        #[arg(long)]
        weather_csv: Option<PathBuf>,

        /// Largest tolerated pairing gap in seconds.
        #[arg(long, default_value_t = 600.0)]
        max_gap_s: f64,
    },

    /// Train a model on a features directory; writes --out/checkpoint.
    Train {
        #[arg(long)]
        features: PathBuf,

        #[arg(long, value_enum, default_value = "classification")]
        task: TaskArg,

        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,

        /// Override the configured learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
    },

    /// Evaluate a checkpoint on its held-out test split.
    Eval {
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,

        #[arg(long)]
        features: PathBuf,
    },

    /// Render range-Doppler heatmaps (PGM + CSV) for one sample.
    Report {
        #[arg(long)]
        data: PathBuf,

        /// Frame id to render.
        #[arg(long)]
        sample: u64,

        /// Render the raw periodogram without clutter removal.
        #[arg(long)]
        no_clutter_removal: bool,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.config)?;
    match cli.command {
        Command::Simulate { campaign, scale } => {
            let spec = match campaign {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str::<CampaignSpec>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => CampaignSpec::default_scaled(scale),
            };
            let manifest =
                pipeline::simulate_to_dir(&config.radio, &config.sim, &spec, cli.seed, &cli.out)?;
            println!(
                "simulated {} samples into {}",
                manifest.len(),
                cli.out.display()
            );
        }
        Command::Preprocess {
            data,
            weather_csv,
            max_gap_s,
        } => {
            let manifest = match weather_csv {
                Some(csv) => {
                    let rows = dataset::read_weather_csv(&csv)?;
                    let stored = DatasetManifest::read(&manifest_path(&data))?;
                    let outcome = dataset::pair_labels(&stored, &rows, max_gap_s)?;
                    for excluded in &outcome.excluded {
                        eprintln!(
                            "excluding frame {}: pairing gap {:.1} s exceeds {:.1} s",
                            excluded.frame_id, excluded.gap_s, excluded.max_gap_s
                        );
                    }
                    Some(outcome.manifest)
                }
                None => None,
            };
            let outcome = pipeline::preprocess_manifest(
                &data,
                manifest,
                &config.crop,
                &config.preprocess,
                &cli.out,
            )?;
            println!(
                "preprocessed {} samples into {} (calibration day {}, clutter ranks {}/{})",
                outcome.manifest.len(),
                cli.out.display(),
                outcome.calibration_day,
                outcome.basis_copol_rank,
                outcome.basis_crosspol_rank
            );
        }
        Command::Train {
            features,
            task,
            epochs,
            learning_rate,
        } => {
            let mut settings = config.train.clone();
            if let Some(epochs) = epochs {
                settings.epochs = epochs;
            }
            if let Some(lr) = learning_rate {
                settings.adam.learning_rate = lr;
            }
            let checkpoint = pipeline::train_to_dir(
                &features,
                &config.bins,
                task.into(),
                &settings,
                cli.seed,
                &cli.out,
            )?;
            println!(
                "trained {} epochs; checkpoint in {}",
                checkpoint.epochs_trained,
                cli.out.join("checkpoint").display()
            );
        }
        Command::Eval {
            checkpoint,
            features,
        } => {
            let report = pipeline::evaluate_to_dir(&checkpoint, &features, &cli.out)?;
            for head in &report.heads {
                println!(
                    "{}: accuracy {:.2}%, mean error {:.4}, p90 error {:.4}",
                    head.name,
                    head.accuracy * 100.0,
                    head.mean_error,
                    head.p90_error
                );
            }
            println!("report files in {}", cli.out.display());
        }
        Command::Report {
            data,
            sample,
            no_clutter_removal,
        } => {
            let written = pipeline::report_periodogram_to_dir(
                &data,
                sample,
                &config.crop,
                &config.preprocess,
                !no_clutter_removal,
                &cli.out,
            )?;
            for path in written {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
