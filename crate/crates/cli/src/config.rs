//! Experiment configuration: a sectioned key-value file (TOML syntax).
//!
//! Every key is optional; omitted keys take the defaults listed in
//! `configs/desk.toml`, which is also what [`ExperimentConfig::default`]
//! produces.

use std::path::Path;

use dynmri_core::cs::{CsConfig, StepRule};
use dynmri_core::denoiser::DenoiserConfig;
use dynmri_core::diffusion::{make_schedule, NoiseSchedule, SamplerOptions};
use dynmri_core::metrics::SsimWindow;
use dynmri_core::phantom::MotionModel;
use dynmri_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The documented desk configuration.
pub const DESK_CONFIG: &str = include_str!("../configs/desk.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    /// Square matrix size in pixels.
    pub size: usize,
    pub subjects: usize,
    pub slices: usize,
    pub period_s_min: f64,
    pub period_s_max: f64,
    pub amplitude_px_min: f64,
    pub amplitude_px_max: f64,
    /// Drift is drawn uniformly from `[-drift_px_max, drift_px_max]` per cycle.
    pub drift_px_max: f64,
    /// Jitter fraction is drawn uniformly from `[0, jitter_frac_max]`.
    pub jitter_frac_max: f64,
    /// Candidates drawn per subject before giving up on regular breathing.
    pub max_attempts: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            size: 64,
            subjects: 20,
            slices: 4,
            period_s_min: 0.7,
            period_s_max: 0.9,
            amplitude_px_min: 3.0,
            amplitude_px_max: 6.0,
            drift_px_max: 1.5,
            jitter_frac_max: 0.15,
            max_attempts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub full_spokes: usize,
    pub spoke_rate_hz: f64,
    pub samples_per_spoke: usize,
    pub n_bins: usize,
    pub accelerations: Vec<u32>,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            full_spokes: 1200,
            spoke_rate_hz: 1000.0 / 3.0,
            samples_per_spoke: 128,
            n_bins: 8,
            accelerations: vec![3, 6, 10, 20, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Clamp the clean-signal estimate to [-3, 3] at each reverse step.
    pub clip: bool,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { n_steps: 800, beta_start: 1e-6, beta_end: 1e-2, clip: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub base_width: usize,
    pub depth: usize,
    pub blocks_per_level: usize,
    pub embed_dim: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self { base_width: d.base_width, depth: d.depth, blocks_per_level: d.blocks_per_level, embed_dim: d.embed_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_iters: usize,
    pub eval_every: usize,
    pub holdout_fraction: f64,
    pub val_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr_peak: t.lr_peak,
            warmup_iters: t.warmup_iters,
            eval_every: t.eval_every,
            holdout_fraction: t.holdout_fraction,
            val_fraction: t.val_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Backtracking,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsSection {
    pub lambda_t: f64,
    pub lambda_s: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_rule: StepKind,
    /// Fixed step, or the initial step of the backtracking search.
    pub step_size: f64,
    pub inner_iters: usize,
    pub huber_delta: f64,
}

impl Default for CsSection {
    fn default() -> Self {
        let c = CsConfig::default();
        let (step_rule, step_size) = match c.step_rule {
            StepRule::Backtracking(s) => (StepKind::Backtracking, s),
            StepRule::Fixed(s) => (StepKind::Fixed, s),
        };
        Self {
            lambda_t: c.lambda_t,
            lambda_s: c.lambda_s,
            max_iters: c.max_iters,
            tol: c.tol,
            step_rule,
            step_size,
            inner_iters: c.inner_iters,
            huber_delta: c.huber_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Side of the sliding SSIM window.
    pub ssim_window: usize,
    /// Use one global SSIM statistic per frame instead of sliding windows.
    pub global_ssim: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { ssim_window: 8, global_ssim: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub phantom: PhantomSection,
    pub acquisition: AcquisitionSection,
    pub schedule: ScheduleSection,
    pub denoiser: DenoiserSection,
    pub train: TrainSection,
    pub cs: CsSection,
    pub metrics: MetricsSection,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config: "))))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        check(self.run.seed <= i64::MAX as u64, || format!("run.seed must be at most {}", i64::MAX))?;
        let p = &self.phantom;
        check(p.size >= 16 && p.size % 2 == 0, || format!("phantom.size must be even and at least 16, got {}", p.size))?;
        check(p.subjects >= 1 && p.slices >= 1, || "phantom.subjects and phantom.slices must be positive".into())?;
        check(p.period_s_min > 0.0 && p.period_s_min <= p.period_s_max, || "need 0 < period_s_min <= period_s_max".into())?;
        check(p.amplitude_px_min >= 0.0 && p.amplitude_px_min <= p.amplitude_px_max, || {
            "need 0 <= amplitude_px_min <= amplitude_px_max".into()
        })?;
        check(p.drift_px_max >= 0.0 && p.drift_px_max.is_finite(), || "phantom.drift_px_max must be non-negative".into())?;
        check((0.0..1.0).contains(&p.jitter_frac_max), || "phantom.jitter_frac_max must lie in [0, 1)".into())?;
        check(p.max_attempts >= 1, || "phantom.max_attempts must be positive".into())?;

        let a = &self.acquisition;
        check(a.spoke_rate_hz > 0.0 && a.spoke_rate_hz.is_finite(), || "acquisition.spoke_rate_hz must be positive".into())?;
        check(a.samples_per_spoke >= 2, || "acquisition.samples_per_spoke must be at least 2".into())?;
        check(a.n_bins >= 1, || "acquisition.n_bins must be positive".into())?;
        check(!a.accelerations.is_empty(), || "acquisition.accelerations is empty".into())?;
        let duration = a.full_spokes as f64 / a.spoke_rate_hz;
        check(duration >= 2.0 * p.period_s_max, || {
            format!("{} spokes at {} Hz last {duration:.3} s, under two breathing cycles", a.full_spokes, a.spoke_rate_hz)
        })?;
        for (&r, kept) in a.accelerations.iter().zip(self.kept_spokes()) {
            check(r >= 1, || "accelerations must be at least 1".into())?;
            check(kept >= a.n_bins, || format!("acceleration {r} keeps {kept} spokes, fewer than {} bins", a.n_bins))?;
        }
        let mut sorted = a.accelerations.clone();
        sorted.sort_unstable();
        sorted.dedup();
        check(sorted.len() == a.accelerations.len(), || "acquisition.accelerations has duplicates".into())?;

        self.schedule()?;
        self.denoiser_config().validate()?;
        self.train_config().validate()?;
        self.cs_config().validate()?;
        check(self.metrics.ssim_window >= 1 && self.metrics.ssim_window <= p.size, || {
            format!("metrics.ssim_window must lie in [1, {}]", p.size)
        })?;
        Ok(())
    }

    /// Spokes kept at each acceleration: `round(full_spokes / r)`.
    pub fn kept_spokes(&self) -> Vec<usize> {
        let full = self.acquisition.full_spokes as f64;
        self.acquisition.accelerations.iter().map(|&r| (full / f64::from(r.max(1))).round() as usize).collect()
    }

    pub fn schedule(&self) -> CliResult<NoiseSchedule> {
        let s = &self.schedule;
        Ok(make_schedule(s.n_steps, s.beta_start, s.beta_end)?)
    }

    pub fn sampler(&self) -> SamplerOptions {
        SamplerOptions { clip: self.schedule.clip }
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        let d = &self.denoiser;
        DenoiserConfig {
            n_bins: self.acquisition.n_bins,
            height: self.phantom.size,
            width: self.phantom.size,
            base_width: d.base_width,
            depth: d.depth,
            blocks_per_level: d.blocks_per_level,
            embed_dim: d.embed_dim,
        }
    }

    /// Training settings; the training seed is derived from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iterations: t.iterations,
            batch_size: t.batch_size,
            lr_peak: t.lr_peak,
            warmup_iters: t.warmup_iters,
            seed: crate::seeds::train(self.run.seed),
            eval_every: t.eval_every,
            holdout_fraction: t.holdout_fraction,
            val_fraction: t.val_fraction,
        }
    }

    pub fn cs_config(&self) -> CsConfig {
        let c = &self.cs;
        CsConfig {
            lambda_t: c.lambda_t,
            lambda_s: c.lambda_s,
            max_iters: c.max_iters,
            tol: c.tol,
            step_rule: match c.step_rule {
                StepKind::Backtracking => StepRule::Backtracking(c.step_size),
                StepKind::Fixed => StepRule::Fixed(c.step_size),
            },
            inner_iters: c.inner_iters,
            huber_delta: c.huber_delta,
        }
    }

    pub fn ssim_window(&self) -> SsimWindow {
        if self.metrics.global_ssim {
            SsimWindow::Global
        } else {
            SsimWindow::Sliding(self.metrics.ssim_window)
        }
    }

    /// Fingerprint of everything that determines the simulated data set.
    pub fn simulation_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Sim<'a> {
            run: &'a RunSection,
            phantom: &'a PhantomSection,
            acquisition: &'a AcquisitionSection,
        }
        let text = toml::to_string(&Sim { run: &self.run, phantom: &self.phantom, acquisition: &self.acquisition }).expect("config serializes");
        format!("{:08x}", crc32fast::hash(text.as_bytes()))
    }

    /// Motion model drawn for one subject.
    pub fn draw_motion(&self, rng: &mut dynmri_core::rng::Rng, seed: u64) -> MotionModel {
        use rand::Rng as _;
        let p = &self.phantom;
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        MotionModel {
            period_s: uniform(p.period_s_min, p.period_s_max),
            amplitude_px: uniform(p.amplitude_px_min, p.amplitude_px_max),
            drift_px_per_cycle: uniform(-p.drift_px_max, p.drift_px_max),
            jitter_frac: uniform(0.0, p.jitter_frac_max),
            seed,
        }
    }
}
