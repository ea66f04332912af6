//! Training data preparation and the optimization loop.
//!
//! Each pair holds a condition `x` (zero-filled reconstruction of undersampled
//! data) and a target `y0` (reconstruction of the fully sampled data), both
//! z-scored with the statistics of `x`. The condition is the only series
//! available at inference time, so the same transform can be applied then and
//! inverted on the generated output.

use std::collections::BTreeSet;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::denoiser::{DenoiserConfig, UNet};
use crate::diffusion::{draw_training_sample, generate, NoiseSchedule, SamplerOptions};
use crate::error::{ensure, Result};
use crate::rng::{derive_seed, rng_from_seed, stream, Rng};
use crate::ImageSeries;

/// Mean and population standard deviation of a z-score transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub mean: f64,
    pub std: f64,
}

impl ZScore {
    /// Statistics of `series`; fails when all values are equal.
    pub fn of(series: &ImageSeries) -> Result<Self> {
        let n = series.frames().len() as f64;
        let mean = series.frames().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = series.frames().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        ensure!(std > 0.0 && std.is_finite(), Degenerate, "constant series cannot be z-scored");
        Ok(Self { mean, std })
    }

    pub fn apply(&self, frames: &Array3<f32>) -> Array3<f32> {
        frames.mapv(|v| ((f64::from(v) - self.mean) / self.std) as f32)
    }

    pub fn invert(&self, frames: &Array3<f32>) -> Array3<f32> {
        frames.mapv(|v| (f64::from(v) * self.std + self.mean) as f32)
    }
}

/// Z-score `series` with its own statistics.
pub fn normalize_zscore(series: &ImageSeries) -> Result<(ImageSeries, ZScore)> {
    let stats = ZScore::of(series)?;
    Ok((ImageSeries::new(stats.apply(series.frames()))?, stats))
}

/// A normalized condition/target pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub x: ImageSeries,
    pub y0: ImageSeries,
    pub subject_id: String,
    pub norm_stats: ZScore,
}

impl TrainPair {
    /// Normalize raw magnitude series with the condition's statistics.
    pub fn new(x_raw: &ImageSeries, y0_raw: &ImageSeries, subject_id: impl Into<String>) -> Result<Self> {
        ensure!(x_raw.dim() == y0_raw.dim(), ShapeMismatch, "condition {:?} vs target {:?}", x_raw.dim(), y0_raw.dim());
        let (x, norm_stats) = normalize_zscore(x_raw)?;
        let y0 = ImageSeries::new(norm_stats.apply(y0_raw.frames()))?;
        Ok(Self { x, y0, subject_id: subject_id.into(), norm_stats })
    }
}

fn subjects(pairs: &[TrainPair]) -> Vec<String> {
    pairs.iter().map(|p| p.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Number of held-out subjects for `fraction` of `n` subjects, at least one
/// on each side.
pub fn holdout_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Shuffle the subject list with `seed` and hold out the last
/// `holdout_count` subjects.
pub fn split_subjects(ids: &[String], holdout_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let mut ids: Vec<String> = ids.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    ensure!(ids.len() >= 2, InvalidArgument, "need at least two subjects to split, got {}", ids.len());
    ensure!(
        holdout_fraction > 0.0 && holdout_fraction < 1.0,
        InvalidArgument,
        "holdout fraction {holdout_fraction} outside (0, 1)"
    );
    ids.shuffle(&mut rng_from_seed(seed));
    let k = holdout_count(ids.len(), holdout_fraction);
    let test = ids.split_off(ids.len() - k);
    ids.sort();
    let mut test = test;
    test.sort();
    Ok((ids, test))
}

/// Partition pairs so that no subject lands on both sides.
pub fn split_by_subject(pairs: Vec<TrainPair>, holdout_fraction: f64, seed: u64) -> Result<(Vec<TrainPair>, Vec<TrainPair>)> {
    let (_, test_ids) = split_subjects(&subjects(&pairs), holdout_fraction, seed)?;
    Ok(pairs.into_iter().partition(|p| !test_ids.contains(&p.subject_id)))
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_iters: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Fraction of subjects held out for testing.
    pub holdout_fraction: f64,
    /// Fraction of training subjects used for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 4,
            lr_peak: 1e-4,
            warmup_iters: 1_000,
            seed: 0,
            eval_every: 500,
            holdout_fraction: 11.0 / 48.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, InvalidArgument, "iterations must be at least 1");
        ensure!(self.batch_size >= 1, InvalidArgument, "batch_size must be at least 1");
        ensure!(self.warmup_iters <= self.iterations, InvalidArgument, "warmup_iters exceeds iterations");
        ensure!(self.eval_every >= 1, InvalidArgument, "eval_every must be at least 1");
        ensure!(self.lr_peak > 0.0 && self.lr_peak.is_finite(), InvalidArgument, "lr_peak must be positive");
        ensure!(
            self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0,
            InvalidArgument,
            "holdout_fraction {} outside (0, 1)",
            self.holdout_fraction
        );
        ensure!(
            self.val_fraction > 0.0 && self.val_fraction < 1.0,
            InvalidArgument,
            "val_fraction {} outside (0, 1)",
            self.val_fraction
        );
        Ok(())
    }
}

/// Linear warmup to `lr_peak`, constant afterwards.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_iters == 0 {
        return cfg.lr_peak;
    }
    cfg.lr_peak * (iter as f64 / cfg.warmup_iters as f64).min(1.0)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
    t: u32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let (b1f, b2f, c2f, eps) = (b1 as f32, b2 as f32, c2.sqrt() as f32, self.eps as f32);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1f * *m + (1.0 - b1f) * g;
            *v = b2f * *v + (1.0 - b2f) * g * g;
            *p -= step * *m / (v.sqrt() / c2f + eps);
        }
    }
}

/// Keeps the parameters with the lowest validation loss seen so far.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSelector {
    best: Option<(usize, f64, Vec<f32>)>,
}

impl CheckpointSelector {
    /// Record a snapshot; ties keep the earlier one.
    pub fn offer(&mut self, iteration: usize, val_loss: f64, params: &[f32]) {
        let better = match &self.best {
            None => true,
            Some((_, best, _)) => val_loss < *best,
        };
        if better && val_loss.is_finite() {
            self.best = Some((iteration, val_loss, params.to_vec()));
        }
    }

    pub fn best_iteration(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.0)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    pub fn into_best(self) -> Option<Vec<f32>> {
        self.best.map(|b| b.2)
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub best_iteration: usize,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.train_loss).collect()
    }
}

fn validation_loss(net: &UNet<f32>, pairs: &[TrainPair], sched: &NoiseSchedule, seed: u64) -> Result<f64> {
    // same noise draws at every evaluation so snapshots are comparable
    let mut rng = rng_from_seed(seed);
    let mut total = 0.0;
    for p in pairs {
        let s = draw_training_sample(p.y0.frames().view(), sched, &mut rng)?;
        total += net.loss(p.x.frames().view(), s.y_t.view(), s.gamma_used, s.eps.view())?;
    }
    Ok(total / pairs.len() as f64)
}

/// [`train_with_progress`] without a progress callback.
pub fn train(pairs: &[TrainPair], net_cfg: &DenoiserConfig, sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<(UNet<f32>, TrainHistory)> {
    train_with_progress(pairs, net_cfg, sched, cfg, |_| {})
}

/// Fit a denoiser with Adam on the diffusion loss.
///
/// A validation slice of the training subjects is scored every `eval_every`
/// iterations and at the end; the snapshot with the lowest validation loss is
/// returned. With a single subject the training pairs double as validation.
pub fn train_with_progress(
    pairs: &[TrainPair],
    net_cfg: &DenoiserConfig,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&HistoryRow),
) -> Result<(UNet<f32>, TrainHistory)> {
    cfg.validate()?;
    ensure!(!pairs.is_empty(), InvalidArgument, "empty training set");
    let want = (net_cfg.n_bins, net_cfg.height, net_cfg.width);
    ensure!(
        pairs.iter().all(|p| p.x.dim() == want && p.y0.dim() == want),
        ShapeMismatch,
        "training pairs must be {want:?}"
    );
    let ids = subjects(pairs);
    let (fit, val): (Vec<&TrainPair>, Vec<TrainPair>) = if ids.len() >= 2 {
        let (_, val_ids) = split_subjects(&ids, cfg.val_fraction, derive_seed(cfg.seed, "validation-split", 0))?;
        let fit = pairs.iter().filter(|p| !val_ids.contains(&p.subject_id)).collect();
        let val = pairs.iter().filter(|p| val_ids.contains(&p.subject_id)).cloned().collect();
        (fit, val)
    } else {
        (pairs.iter().collect(), pairs.to_vec())
    };

    let mut net = UNet::<f32>::new(net_cfg, derive_seed(cfg.seed, "init", 0))?;
    let mut adam = Adam::new(net.param_count());
    let mut grad = vec![0.0f32; net.param_count()];
    let mut rng: Rng = stream(cfg.seed, "batches", 0);
    let val_seed = derive_seed(cfg.seed, "validation-noise", 0);
    let mut selector = CheckpointSelector::default();
    let mut history = TrainHistory::default();
    let weight = 1.0 / cfg.batch_size as f64;

    for iter in 1..=cfg.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let p = fit[rng.random_range(0..fit.len())];
            let s = draw_training_sample(p.y0.frames().view(), sched, &mut rng)?;
            let (l, _) = net.accumulate_gradient(p.x.frames().view(), s.y_t.view(), s.gamma_used, s.eps.view(), weight, &mut grad)?;
            loss += l * weight;
        }
        ensure!(loss.is_finite(), NonFinite, "training loss diverged at iteration {iter}");
        ensure!(grad.iter().all(|g| g.is_finite()), NonFinite, "gradient diverged at iteration {iter}");
        let lr = lr_at(iter, cfg);
        adam.step(net.params_mut(), &grad, lr);

        let val_loss = if iter % cfg.eval_every == 0 || iter == cfg.iterations {
            let v = validation_loss(&net, &val, sched, val_seed)?;
            ensure!(v.is_finite(), NonFinite, "validation loss diverged at iteration {iter}");
            selector.offer(iter, v, net.params());
            Some(v)
        } else {
            None
        };
        let row = HistoryRow { iteration: iter, train_loss: loss, val_loss, lr };
        progress(&row);
        history.rows.push(row);
    }
    history.best_iteration = selector.best_iteration().expect("final iteration is always evaluated");
    let best = selector.into_best().expect("final iteration is always evaluated");
    let mut out = UNet::from_params(net_cfg, best)?;
    out.skip_scale = net.skip_scale;
    Ok((out, history))
}

/// Reconstruct a raw condition series: normalize it with its own statistics,
/// run the reverse chain and map the result back.
pub fn diffusion_reconstruct(
    net: &UNet<f32>,
    x_raw: &ImageSeries,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    rng: &mut Rng,
) -> Result<ImageSeries> {
    let (x, stats) = normalize_zscore(x_raw)?;
    generate(net, &x, stats, sched, opts, rng)
}
