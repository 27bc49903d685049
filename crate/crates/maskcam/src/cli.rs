//! Command-line surface.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, AttackOptions, DecoySource, Experiment};
use crate::config::{mnist_desk_template, parse_resolutions, ConfigError, ExperimentConfig};
use crate::io::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "maskcam", version, about = "Lensless programmable-mask camera simulator")]
pub struct Cli {
    /// Experiment configuration (INI).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `sim.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; experiments are written to `<out>/<name>`.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the mask PSF and write tensor, metadata and preview.
    SimulatePsf,
    /// Simulate sensor embeddings for the configured dataset splits.
    SimulateDataset,
    /// Train the classifier (and the mask in learned mode).
    Train,
    /// Reconstruct scenes with the true PSF and with a decoy PSF.
    Attack(AttackArgs),
    /// PSNR/SSIM between same-named PNG images of two directories.
    Metrics(MetricsArgs),
    /// Print a desk-scale MNIST configuration to start from.
    Template {
        #[arg(long, default_value = "desk")]
        name: String,
        #[arg(long, default_value = "data/mnist")]
        dataset: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Decoy PSF tensor (with its `.meta` sidecar) used as the wrong estimate.
    #[arg(long, conflicts_with = "decoy_seed")]
    pub psf: Option<PathBuf>,
    /// Seed of the random decoy mask; overrides `attack.decoy_seed`.
    #[arg(long)]
    pub decoy_seed: Option<u64>,
    /// Comma-separated embedding resolutions, e.g. `24x32,48x64`.
    #[arg(long)]
    pub resolutions: Option<String>,
    /// PGD iterations; overrides `attack.iters`.
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    pub a_dir: PathBuf,
    pub b_dir: PathBuf,
    /// Where to write the CSV (stdout when omitted).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_deref().ok_or(ConfigError::MissingKeys(vec!["--config".into()]))?;
    let cfg = ExperimentConfig::load(path)?;
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn config_error(key: &str, message: String) -> anyhow::Error {
    ConfigError::Invalid {
        key: key.into(),
        message,
    }
    .into()
}

fn run_in_experiment(
    cli: &Cli,
    name: &str,
    needs_dataset: bool,
    work: impl FnOnce(&Experiment) -> Result<Vec<PathBuf>>,
) -> Result<()> {
    let cfg = load_config(cli)?;
    commands::preflight(&cfg, needs_dataset)?;
    let exp = Experiment::open(cfg, &cli.out)?;
    let (written, seconds) = commands::timed(|| work(&exp))?;
    exp.record(name, &written, seconds)?;
    log::info!("{name}: wrote {} files to {} in {seconds:.1}s", written.len(), exp.root.display());
    println!("{}", exp.root.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads", "must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::SimulatePsf => run_in_experiment(&cli, "simulate-psf", false, commands::simulate_psf),
        Command::SimulateDataset => run_in_experiment(&cli, "simulate-dataset", true, commands::simulate_dataset),
        Command::Train => run_in_experiment(&cli, "train", true, commands::train),
        Command::Attack(args) => {
            let cfg = load_config(&cli)?;
            let mut opts = AttackOptions::from_config(&cfg);
            if let Some(list) = &args.resolutions {
                opts.resolutions =
                    parse_resolutions(list).ok_or_else(|| config_error("--resolutions", format!("cannot parse {list:?}")))?;
                for &r in &opts.resolutions {
                    maskcam_core::attack::downsample_for_resolution(cfg.optics.setup.grid.shape(), r)
                        .map_err(|e| config_error("--resolutions", e.to_string()))?;
                }
            }
            if let Some(n) = args.iters {
                if n == 0 {
                    return Err(config_error("--iters", "must be at least 1".into()));
                }
                opts.iterations = n;
            }
            if let Some(seed) = args.decoy_seed {
                opts.decoy = DecoySource::Seed(seed);
            }
            if let Some(p) = &args.psf {
                if !p.is_file() {
                    return Err(config_error("--psf", format!("{} does not exist", p.display())));
                }
                opts.decoy = DecoySource::File(p.clone());
            }
            run_in_experiment(&cli, "attack", true, |exp| commands::attack(exp, &opts))
        }
        Command::Metrics(args) => {
            for dir in [&args.a_dir, &args.b_dir] {
                if !dir.is_dir() {
                    return Err(config_error("metrics", format!("{} is not a directory", dir.display())));
                }
            }
            let csv = commands::metrics(&args.a_dir, &args.b_dir)?;
            match &args.csv {
                Some(path) => write_atomic(path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Template { name, dataset } => {
            print!("{}", mnist_desk_template(name, Path::new(dataset)));
            Ok(())
        }
    }
}

/// Exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        2
    } else {
        3
    }
}
