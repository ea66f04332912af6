//! Training and single-series reconstruction commands.

use std::fs;
use std::path::{Path, PathBuf};

use dynmri_core::denoiser::{load_checkpoint, save_checkpoint, UNet};
use dynmri_core::metrics::timed;
use dynmri_core::rng::rng_from_seed;
use dynmri_core::training::{diffusion_reconstruct, split_subjects, train_with_progress, HistoryRow, TrainHistory, TrainPair};
use dynmri_core::ImageSeries;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::LoadedManifest;
use crate::series_io::read_series;
use crate::seeds;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// Train and test subject ids, both sorted.
pub fn subject_split(cfg: &ExperimentConfig, m: &LoadedManifest) -> CliResult<(Vec<String>, Vec<String>)> {
    Ok(split_subjects(&m.manifest.subject_ids(), cfg.train.holdout_fraction, seeds::split(cfg.run.seed))?)
}

/// Normalized pairs of the given subjects, in manifest order.
pub fn load_pairs(m: &LoadedManifest, subjects: &[String]) -> CliResult<Vec<TrainPair>> {
    m.manifest
        .pairs
        .iter()
        .filter(|p| subjects.contains(&p.subject))
        .map(|p| {
            let x = read_series(&m.resolve(&p.x))?;
            let y0 = read_series(&m.resolve(&p.y0))?;
            Ok(TrainPair::new(&x, &y0, p.subject.clone())?)
        })
        .collect()
}

pub fn write_loss_csv(path: &Path, history: &TrainHistory) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["iteration", "train_loss", "val_loss", "lr"]).map_err(|e| CliError::io(path, e))?;
    for r in &history.rows {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.iteration.to_string(), r.train_loss.to_string(), val, r.lr.to_string()])
            .map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub struct TrainOutput {
    pub net: UNet<f32>,
    pub history: TrainHistory,
    pub checkpoint: PathBuf,
    pub train_subjects: Vec<String>,
}

/// Train on the training split of `m`; writes the best checkpoint and the
/// loss history into `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, m: &LoadedManifest, out_dir: &Path, mut progress: impl FnMut(&HistoryRow)) -> CliResult<TrainOutput> {
    m.manifest.check_config(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let (train_ids, _) = subject_split(cfg, m)?;
    let pairs = load_pairs(m, &train_ids)?;
    let (net, history) = train_with_progress(&pairs, &cfg.denoiser_config(), &cfg.schedule()?, &cfg.train_config(), &mut progress)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint, &net)?;
    write_loss_csv(&out_dir.join(LOSS_FILE), &history)?;
    Ok(TrainOutput { net, history, checkpoint, train_subjects: train_ids })
}

pub fn load_net(cfg: &ExperimentConfig, path: &Path) -> CliResult<UNet<f32>> {
    let net = load_checkpoint(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let want = cfg.denoiser_config();
    if *net.config() != want {
        return Err(CliError::Config(format!("{}: checkpoint architecture {:?} differs from config {:?}", path.display(), net.config(), want)));
    }
    Ok(net)
}

/// Diffusion reconstruction of one raw condition series; returns the
/// estimate and the wall-clock seconds spent.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, net: &UNet<f32>, x: &ImageSeries, seed: u64) -> CliResult<(ImageSeries, f64)> {
    let sched = cfg.schedule()?;
    let mut rng = rng_from_seed(seed);
    let (y, secs) = timed(|| diffusion_reconstruct(net, x, &sched, cfg.sampler(), &mut rng));
    Ok((y?, secs))
}
