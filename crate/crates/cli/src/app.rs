//! Argument parsing and command dispatch for the `dynmri` binary.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::LoadedManifest;
use crate::report::{read_metrics_csv, render_table, summarize};
use crate::series_io::{read_series, write_series};
use crate::simulate::cmd_simulate;
use crate::sweep::{cmd_sweep, Method, SweepOptions};
use crate::train::{cmd_reconstruct, cmd_train, load_net};

/// Synthetic dynamic MRI: simulation, diffusion training and reconstruction
/// benchmarks.
#[derive(Debug, Parser)]
#[command(name = "dynmri", version, about)]
pub struct Cli {
    /// Experiment config file; built-in desk defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Serial execution and reproducible outputs (no wall-clock columns).
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the cohort and write condition/target pairs plus a manifest.
    Simulate,
    /// Train the diffusion denoiser on the training subjects.
    Train {
        /// Manifest file or the directory holding it.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Diffusion reconstruction of one condition series.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Zero-filled condition series file.
        #[arg(long)]
        input: PathBuf,
    },
    /// Zero-filled and compressed-sensing reconstructions of the test subjects.
    Baseline {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score every method on the test subjects at every acceleration.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Required when the diffusion method is requested.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subset of zero-filled, cs, diffusion.
        #[arg(long, value_delimiter = ',', default_value = "zero-filled,cs,diffusion")]
        methods: Vec<String>,
        /// Skip the graymap figures.
        #[arg(long)]
        no_figures: bool,
    },
    /// Render the summary table of a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
    },
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn sweep(cli: &Cli, cfg: &ExperimentConfig, manifest: &Path, checkpoint: Option<&Path>, methods: Vec<Method>, figures: bool) -> CliResult<()> {
    let m = LoadedManifest::load(manifest)?;
    let net = match checkpoint {
        Some(path) => Some(load_net(cfg, path)?),
        None if methods.contains(&Method::Diffusion) => {
            return Err(CliError::Data("missing --checkpoint for the diffusion method".into()));
        }
        None => None,
    };
    create_dir(&cli.out)?;
    let opts = SweepOptions { methods, net: net.as_ref(), deterministic: cli.deterministic, write_figures: figures };
    let outcome = cmd_sweep(cfg, &m, &opts, &cli.out)?;
    print!("{}", outcome.table);
    if !outcome.failures.is_empty() {
        for f in &outcome.failures {
            eprintln!("failed: {f}");
        }
        return Err(CliError::Numeric(format!("{} reconstructions failed; see stderr", outcome.failures.len())));
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate => {
            let m = cmd_simulate(&cfg, &cli.out, cli.deterministic)?;
            println!(
                "{} subjects ({} rejected candidates), {} pairs in {}",
                m.subjects.len(),
                m.rejected.len(),
                m.pairs.len(),
                cli.out.display()
            );
        }
        Command::Train { manifest } => {
            let m = LoadedManifest::load(manifest)?;
            let out = cmd_train(&cfg, &m, &cli.out, |row| {
                if let Some(v) = row.val_loss {
                    eprintln!("iter {:>6}  train {:.5}  val {v:.5}  lr {:.2e}", row.iteration, row.train_loss, row.lr);
                }
            })?;
            println!("best iteration {}, checkpoint {}", out.history.best_iteration, out.checkpoint.display());
        }
        Command::Reconstruct { checkpoint, input } => {
            let net = load_net(&cfg, checkpoint)?;
            let x = read_series(input)?;
            let (y, secs) = cmd_reconstruct(&cfg, &net, &x, cfg.run.seed)?;
            create_dir(&cli.out)?;
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "series".into());
            let path = cli.out.join(format!("{stem}_recon.cirs"));
            write_series(&path, &y)?;
            println!("{} seconds={secs:.3}", path.display());
        }
        Command::Baseline { manifest } => sweep(cli, &cfg, manifest, None, vec![Method::ZeroFilled, Method::Cs], true)?,
        Command::Sweep { manifest, checkpoint, methods, no_figures } => {
            let methods = methods.iter().map(|s| s.parse()).collect::<CliResult<Vec<Method>>>()?;
            sweep(cli, &cfg, manifest, checkpoint.as_deref(), methods, !no_figures)?;
        }
        Command::Report { metrics } => {
            let rows = read_metrics_csv(metrics)?;
            let table = render_table(&summarize(&rows));
            print!("{table}");
        }
    }
    Ok(())
}

/// Parse `args` and run; returns the process exit code. Errors are printed
/// to stderr as one line, `error: <kind>: <reason>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: config: {first}");
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}
