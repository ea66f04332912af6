use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::index;

use super::{KSpaceData, NufftPlan, RadialTrajectory};
use crate::error::{ensure, Result};
use crate::phantom::{BreathingPhantom, SelfGatingSignal};
use crate::rng::rng_from_seed;

/// Anything that can be imaged continuously while it breathes.
pub trait DynamicSubject {
    /// Matrix size of the rendered images.
    fn matrix_size(&self) -> usize;
    /// Image at time `t_s`.
    fn image_at(&self, t_s: f64) -> Array2<f64>;
    /// Self-gating amplitude at time `t_s`.
    fn gating_at(&self, t_s: f64) -> f64;
    /// Nominal breathing period.
    fn period_s(&self) -> f64;
}

impl DynamicSubject for BreathingPhantom {
    fn matrix_size(&self) -> usize {
        self.height
    }

    fn image_at(&self, t_s: f64) -> Array2<f64> {
        BreathingPhantom::image_at(self, t_s)
    }

    fn gating_at(&self, t_s: f64) -> f64 {
        BreathingPhantom::gating_at(self, t_s)
    }

    fn period_s(&self) -> f64 {
        self.trace.motion().period_s
    }
}

/// A motionless image with a nominal breathing period (for the gating signal).
#[derive(Debug, Clone)]
pub struct StaticSubject {
    pub image: Array2<f64>,
    pub period_s: f64,
}

impl DynamicSubject for StaticSubject {
    fn matrix_size(&self) -> usize {
        self.image.nrows()
    }

    fn image_at(&self, _t_s: f64) -> Array2<f64> {
        self.image.clone()
    }

    fn gating_at(&self, t_s: f64) -> f64 {
        (2.0 * std::f64::consts::PI * t_s / self.period_s).sin()
    }

    fn period_s(&self) -> f64 {
        self.period_s
    }
}

/// Spokes acquired in `duration_s` at `spoke_rate_hz`.
pub fn spokes_for_duration(duration_s: f64, spoke_rate_hz: f64) -> usize {
    (duration_s * spoke_rate_hz).round() as usize
}

/// Full spoke count over kept spoke count.
pub fn acceleration_ratio(full_spokes: usize, kept_spokes: usize) -> f64 {
    full_spokes as f64 / kept_spokes as f64
}

/// Continuous acquisition: spoke `i` samples the subject at `i / spoke_rate_hz`.
///
/// Returns the k-space data and the self-gating signal at the spoke times.
pub fn acquire_dynamic(
    subject: &dyn DynamicSubject,
    traj: &RadialTrajectory,
    spoke_rate_hz: f64,
) -> Result<(KSpaceData, SelfGatingSignal)> {
    ensure!(
        spoke_rate_hz.is_finite() && spoke_rate_hz > 0.0,
        InvalidArgument,
        "spoke rate must be positive, got {spoke_rate_hz}"
    );
    let n = traj.matrix_size();
    ensure!(
        subject.matrix_size() == n,
        ShapeMismatch,
        "subject matrix {} vs trajectory {n}",
        subject.matrix_size()
    );
    let duration = traj.n_spokes() as f64 / spoke_rate_hz;
    ensure!(
        duration >= 2.0 * subject.period_s(),
        InvalidArgument,
        "acquisition of {duration:.3} s covers fewer than 2 breathing cycles of {:.3} s",
        subject.period_s()
    );
    let plan = NufftPlan::new(n, traj.coords())?;
    let s = traj.samples_per_spoke();
    let mut samples = Array2::zeros((traj.n_spokes(), s));
    let mut timestamps = Vec::with_capacity(traj.n_spokes());
    let mut gating = Vec::with_capacity(traj.n_spokes());
    let mut cached: Option<(Array2<f64>, Vec<Complex64>)> = None;
    for spoke in 0..traj.n_spokes() {
        let t = spoke as f64 / spoke_rate_hz;
        let image = subject.image_at(t);
        let grid = match &cached {
            Some((prev, grid)) if *prev == image => grid,
            _ => {
                let grid = plan.forward_grid(&image.mapv(|v| Complex64::new(v, 0.0)))?;
                &cached.insert((image, grid)).1
            }
        };
        let values = plan.interpolate(grid, spoke * s..(spoke + 1) * s);
        samples.row_mut(spoke).assign(&ndarray::ArrayView1::from(&values));
        timestamps.push(t);
        gating.push(subject.gating_at(t));
    }
    let signal = SelfGatingSignal::new(timestamps.clone(), gating)?;
    Ok((KSpaceData::new(samples, timestamps, traj.clone())?, signal))
}

/// Keep a uniformly random subset of `keep` spokes, in acquisition order.
pub fn undersample_spokes(ks: &KSpaceData, keep: usize, seed: u64) -> Result<KSpaceData> {
    let n = ks.n_spokes();
    ensure!(keep >= 1 && keep <= n, InvalidArgument, "cannot keep {keep} of {n} spokes");
    let mut rng = rng_from_seed(seed);
    let mut chosen = index::sample(&mut rng, n, keep).into_vec();
    chosen.sort_unstable();
    Ok(ks.select(&chosen))
}

/// K-space split into respiratory-phase bins.
#[derive(Debug, Clone)]
pub struct BinnedKSpace {
    pub bins: Vec<KSpaceData>,
    /// Indices into the unbinned acquisition, ascending within each bin.
    pub spoke_indices: Vec<Vec<usize>>,
}

impl BinnedKSpace {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }
}

/// Amplitude-quantile binning: spokes are ranked by the gating amplitude at
/// their timestamp (ties broken by acquisition order) and cut into `n_bins`
/// equal-count groups, lowest amplitude first.
pub fn bin_by_phase(ks: &KSpaceData, signal: &SelfGatingSignal, n_bins: usize) -> Result<BinnedKSpace> {
    ensure!(n_bins >= 1, InvalidArgument, "n_bins must be at least 1");
    let n = ks.n_spokes();
    ensure!(n >= n_bins, InvalidArgument, "{n} spokes cannot fill {n_bins} bins");
    let mut keyed = Vec::with_capacity(n);
    for (i, &t) in ks.spoke_timestamps.iter().enumerate() {
        let Some(v) = signal.value_at(t) else {
            return Err(crate::Error::InvalidArgument(format!("spoke time {t} s outside the gating signal")));
        };
        keyed.push((v, t, i));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut spoke_indices = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let mut idx: Vec<usize> = keyed[b * n / n_bins..(b + 1) * n / n_bins].iter().map(|k| k.2).collect();
        idx.sort_unstable();
        spoke_indices.push(idx);
    }
    let bins = spoke_indices.iter().map(|idx| ks.select(idx)).collect();
    Ok(BinnedKSpace { bins, spoke_indices })
}
