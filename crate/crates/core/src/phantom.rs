//! Synthetic breathing phantoms and the self-gating respiratory signal.
//!
//! A phantom is a piecewise-constant abdominal cross-section built from
//! analytic ellipses: body outline, spine, kidney, and a liver carrying a
//! bright lesion, a faint lesion and a dark vessel. The liver group translates
//! cranio-caudally (along the row axis) by the breathing displacement and is
//! mildly squashed as it descends. Pixels are rendered with 2x2 supersampling.

use std::f64::consts::PI;

use ndarray::{Array2, Array3};
use rand::Rng as _;

use crate::error::{ensure, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::ImageSeries;

/// Regularity scores strictly above this are irregular breathers.
pub const IRREGULAR_THRESHOLD: f64 = 0.20;

/// Breathing motion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    /// Seconds per nominal breathing cycle.
    pub period_s: f64,
    /// Peak cranio-caudal displacement in pixels.
    pub amplitude_px: f64,
    /// Baseline drift added per cycle, in pixels.
    pub drift_px_per_cycle: f64,
    /// Fractional cycle-to-cycle variation of period and amplitude.
    pub jitter_frac: f64,
    pub seed: u64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self { period_s: 0.8, amplitude_px: 4.0, drift_px_per_cycle: 0.0, jitter_frac: 0.0, seed: 0 }
    }
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.period_s.is_finite() && self.period_s > 0.0,
            InvalidArgument,
            "period_s must be positive, got {}",
            self.period_s
        );
        ensure!(
            self.amplitude_px.is_finite() && self.amplitude_px >= 0.0,
            InvalidArgument,
            "amplitude_px must be non-negative, got {}",
            self.amplitude_px
        );
        ensure!(
            self.drift_px_per_cycle.is_finite(),
            InvalidArgument,
            "drift_px_per_cycle must be finite"
        );
        ensure!(
            (0.0..1.0).contains(&self.jitter_frac),
            InvalidArgument,
            "jitter_frac must lie in [0, 1), got {}",
            self.jitter_frac
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cycle {
    start: f64,
    period: f64,
    amplitude: f64,
}

/// Displacement waveform of a [`MotionModel`], with the per-cycle jitter
/// realized up to a time horizon.
#[derive(Debug, Clone)]
pub struct BreathingTrace {
    motion: MotionModel,
    cycles: Vec<Cycle>,
}

impl BreathingTrace {
    /// Realize cycles covering `[0, horizon_s]`.
    pub fn new(motion: MotionModel, horizon_s: f64) -> Result<Self> {
        motion.validate()?;
        let mut rng = rng_from_seed(motion.seed);
        let mut cycles = Vec::new();
        let mut start = 0.0;
        loop {
            let (u, v): (f64, f64) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
            let period = motion.period_s * (1.0 + motion.jitter_frac * u);
            let amplitude = motion.amplitude_px * (1.0 + motion.jitter_frac * v);
            cycles.push(Cycle { start, period, amplitude });
            start += period;
            if start > horizon_s {
                break;
            }
        }
        Ok(Self { motion, cycles })
    }

    pub fn motion(&self) -> &MotionModel {
        &self.motion
    }

    /// Displacement in pixels at time `t_s`. Zero displacement is end-exhale.
    pub fn displacement(&self, t_s: f64) -> f64 {
        let idx = self.cycles.partition_point(|c| c.start <= t_s).saturating_sub(1);
        let c = self.cycles[idx];
        let phase = (t_s - c.start) / c.period;
        let breath = if phase <= 1.0 { 0.5 * c.amplitude * (1.0 - (2.0 * PI * phase).cos()) } else { 0.0 };
        self.motion.drift_px_per_cycle * t_s / self.motion.period_s + breath
    }
}

/// Time-stamped surrogate respiratory waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfGatingSignal {
    timestamps: Vec<f64>,
    values: Vec<f64>,
}

impl SelfGatingSignal {
    pub fn new(timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        ensure!(
            timestamps.len() == values.len(),
            ShapeMismatch,
            "{} timestamps vs {} values",
            timestamps.len(),
            values.len()
        );
        ensure!(!timestamps.is_empty(), InvalidArgument, "empty signal");
        ensure!(
            timestamps.windows(2).all(|w| w[1] > w[0]),
            InvalidArgument,
            "timestamps must be strictly increasing"
        );
        ensure!(values.iter().all(|v| v.is_finite()), NonFinite, "signal values");
        Ok(Self { timestamps, values })
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation at `t`; `None` outside the sampled support.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let ts = &self.timestamps;
        if t < ts[0] || t > ts[ts.len() - 1] {
            return None;
        }
        let i = ts.partition_point(|&x| x <= t);
        if i == ts.len() {
            return Some(self.values[ts.len() - 1]);
        }
        let (t0, t1) = (ts[i - 1], ts[i]);
        let f = (t - t0) / (t1 - t0);
        Some(self.values[i - 1] + f * (self.values[i] - self.values[i - 1]))
    }
}

/// Sample the breathing waveform every `dt_s` seconds for `duration_s`.
pub fn respiratory_signal(motion: &MotionModel, duration_s: f64, dt_s: f64) -> Result<SelfGatingSignal> {
    motion.validate()?;
    ensure!(dt_s.is_finite() && dt_s > 0.0, InvalidArgument, "dt_s must be positive, got {dt_s}");
    ensure!(
        duration_s > motion.period_s,
        InvalidArgument,
        "duration {duration_s} s must exceed the breathing period {} s",
        motion.period_s
    );
    let n = (duration_s / dt_s + 1e-9).floor() as usize;
    let trace = BreathingTrace::new(*motion, duration_s)?;
    let timestamps: Vec<f64> = (0..n).map(|i| i as f64 * dt_s).collect();
    let values = timestamps.iter().map(|&t| trace.displacement(t)).collect();
    SelfGatingSignal::new(timestamps, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        u * u + v * v <= 1.0
    }

    fn shifted(mut self, dy: f64) -> Self {
        self.cy += dy;
        self
    }
}

/// Static anatomy of one phantom slice, in normalized field-of-view
/// coordinates (`[-1, 1]` across both axes, rows increasing caudally).
#[derive(Debug, Clone, PartialEq)]
pub struct Anatomy {
    body: Ellipse,
    spine: Ellipse,
    kidney: Ellipse,
    liver: Ellipse,
    vessel: Ellipse,
    lesion_low: Ellipse,
    lesion_high: Ellipse,
}

impl Default for Anatomy {
    fn default() -> Self {
        let e = |cx, cy, rx, ry, angle, value| Ellipse { cx, cy, rx, ry, angle, value };
        Self {
            body: e(0.0, 0.0, 0.88, 0.72, 0.0, 0.25),
            spine: e(0.05, 0.48, 0.14, 0.14, 0.0, 0.8),
            kidney: e(0.42, 0.3, 0.16, 0.24, 0.3, 0.45),
            liver: e(-0.28, -0.12, 0.46, 0.36, -0.2, 0.6),
            vessel: e(-0.12, -0.02, 0.05, 0.1, 0.5, 0.1),
            lesion_high: e(-0.42, -0.18, 0.11, 0.11, 0.0, 0.95),
            lesion_low: e(-0.2, -0.32, 0.09, 0.07, 0.0, 0.5),
        }
    }
}

impl Anatomy {
    /// Randomly perturbed anatomy, one per (subject, slice).
    pub fn random(rng: &mut Rng) -> Self {
        let mut a = Self::default();
        let mut j = |v: &mut f64, s: f64| *v += rng.random_range(-s..=s);
        j(&mut a.body.rx, 0.04);
        j(&mut a.body.ry, 0.04);
        j(&mut a.liver.cx, 0.04);
        j(&mut a.liver.cy, 0.03);
        j(&mut a.liver.rx, 0.04);
        j(&mut a.liver.ry, 0.03);
        j(&mut a.liver.angle, 0.15);
        j(&mut a.kidney.cy, 0.05);
        j(&mut a.vessel.cx, 0.05);
        j(&mut a.vessel.angle, 0.4);
        j(&mut a.lesion_high.cx, 0.06);
        j(&mut a.lesion_high.cy, 0.04);
        j(&mut a.lesion_high.rx, 0.03);
        j(&mut a.lesion_low.cx, 0.06);
        j(&mut a.lesion_low.rx, 0.02);
        j(&mut a.liver.value, 0.05);
        j(&mut a.lesion_low.value, 0.04);
        a.lesion_high.ry = a.lesion_high.rx;
        a
    }

    /// Render one frame with the liver group displaced by `displacement_px`.
    pub fn render(&self, height: usize, width: usize, displacement_px: f64) -> Array2<f64> {
        let dy = 2.0 * displacement_px / height as f64;
        // mild diaphragm squash: wider and shorter as the liver descends
        let squash = 0.004 * displacement_px;
        let mut liver = self.liver.shifted(dy);
        liver.rx *= 1.0 + squash;
        liver.ry *= 1.0 - squash;
        let layers = [
            self.body,
            self.spine,
            self.kidney,
            liver,
            self.vessel.shifted(dy),
            self.lesion_low.shifted(dy),
            self.lesion_high.shifted(dy),
        ];
        const SUB: [f64; 2] = [0.25, 0.75];
        Array2::from_shape_fn((height, width), |(r, c)| {
            let mut acc = 0.0;
            for sy in SUB {
                for sx in SUB {
                    let x = 2.0 * (c as f64 + sx) / width as f64 - 1.0;
                    let y = 2.0 * (r as f64 + sy) / height as f64 - 1.0;
                    acc += layers.iter().rev().find(|e| e.contains(x, y)).map_or(0.0, |e| e.value);
                }
            }
            acc / 4.0
        })
    }
}

/// A breathing subject: anatomy plus its realized motion trace.
#[derive(Debug, Clone)]
pub struct BreathingPhantom {
    pub anatomy: Anatomy,
    pub trace: BreathingTrace,
    pub height: usize,
    pub width: usize,
}

impl BreathingPhantom {
    pub fn new(anatomy: Anatomy, motion: MotionModel, height: usize, width: usize, horizon_s: f64) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self { anatomy, trace: BreathingTrace::new(motion, horizon_s)?, height, width })
    }

    pub fn image_at(&self, t_s: f64) -> Array2<f64> {
        self.anatomy.render(self.height, self.width, self.trace.displacement(t_s))
    }

    pub fn gating_at(&self, t_s: f64) -> f64 {
        self.trace.displacement(t_s)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    ensure!(height >= 16 && width >= 16, InvalidArgument, "phantom must be at least 16x16, got {height}x{width}");
    Ok(())
}

/// Render `n_bins` frames of the default anatomy, frame `b` at the center of
/// phase bin `b` of the first breathing cycle.
pub fn generate_phantom(motion: &MotionModel, height: usize, width: usize, n_bins: usize) -> Result<ImageSeries> {
    generate_phantom_with(&Anatomy::default(), motion, height, width, n_bins)
}

pub fn generate_phantom_with(
    anatomy: &Anatomy,
    motion: &MotionModel,
    height: usize,
    width: usize,
    n_bins: usize,
) -> Result<ImageSeries> {
    check_dims(height, width)?;
    ensure!(n_bins >= 1, InvalidArgument, "n_bins must be at least 1");
    let trace = BreathingTrace::new(*motion, motion.period_s * 2.0)?;
    let first = trace.cycles[0];
    let mut frames = Array3::zeros((n_bins, height, width));
    for b in 0..n_bins {
        let t = first.start + (b as f64 + 0.5) / n_bins as f64 * first.period;
        let img = anatomy.render(height, width, trace.displacement(t));
        frames.index_axis_mut(ndarray::Axis(0), b).assign(&img.mapv(|v| v as f32));
    }
    ImageSeries::new(frames)
}

/// Breathing regularity: mean absolute deviation of per-cycle mid-levels from
/// their average, divided by the mean peak-to-trough range.
///
/// Cycles are (trough, following peak) pairs of the waveform's alternating
/// extrema. Extrema are located on a moving average over a tenth of the
/// nominal period (estimated from the raw waveform) and their values read
/// back from the raw samples.
pub fn regularity_score(signal: &SelfGatingSignal) -> Result<f64> {
    let v = signal.values();
    let ts = signal.timestamps();
    let n = v.len();
    ensure!(n >= 8, Degenerate, "signal too short for cycle detection ({n} samples)");
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let spread = sorted[(0.95 * (n - 1) as f64) as usize] - sorted[(0.05 * (n - 1) as f64) as usize];
    ensure!(spread > 0.0, Degenerate, "flat signal has no breathing cycles");
    let hysteresis = 0.25 * spread;

    let coarse = zigzag(v, hysteresis);
    let peaks: Vec<f64> = coarse.iter().filter(|e| e.is_peak).map(|e| ts[e.index]).collect();
    ensure!(peaks.len() >= 2, Degenerate, "fewer than 2 breathing cycles detected");
    let mut spacing: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    spacing.sort_by(f64::total_cmp);
    let period = spacing[spacing.len() / 2];
    let dt = (ts[n - 1] - ts[0]) / (n - 1) as f64;
    let window = ((0.1 * period / dt).round() as usize).max(1);

    let smooth = moving_average(v, window);
    let extrema = zigzag(&smooth, hysteresis);
    let half = window / 2 + 1;
    let refined: Vec<(bool, f64)> = extrema
        .iter()
        .map(|e| {
            let lo = e.index.saturating_sub(half);
            let hi = (e.index + half).min(n - 1);
            let it = v[lo..=hi].iter().copied();
            let val = if e.is_peak { it.fold(f64::NEG_INFINITY, f64::max) } else { it.fold(f64::INFINITY, f64::min) };
            (e.is_peak, val)
        })
        .collect();

    let mut mids = Vec::new();
    let mut ranges = Vec::new();
    let mut i = 0;
    while i + 1 < refined.len() {
        let (p0, trough) = refined[i];
        let (p1, peak) = refined[i + 1];
        if !p0 && p1 {
            mids.push(0.5 * (peak + trough));
            ranges.push(peak - trough);
            i += 2;
        } else {
            i += 1;
        }
    }
    ensure!(mids.len() >= 2, Degenerate, "fewer than 2 breathing cycles detected");
    let k = mids.len() as f64;
    let mean_mid = mids.iter().sum::<f64>() / k;
    let mean_dev = mids.iter().map(|a| (a - mean_mid).abs()).sum::<f64>() / k;
    let mean_range = ranges.iter().sum::<f64>() / k;
    ensure!(mean_range > 0.0, Degenerate, "zero peak-to-trough range");
    Ok(mean_dev / mean_range)
}

/// `score > 0.20` marks an irregular breather; the boundary itself is regular.
pub fn is_irregular(score: f64) -> bool {
    score > IRREGULAR_THRESHOLD
}

#[derive(Debug, Clone, Copy)]
struct Extremum {
    index: usize,
    is_peak: bool,
}

/// Alternating extrema, each confirmed by a reversal of at least `h`.
/// Unconfirmed candidates at either end of the record are dropped.
fn zigzag(v: &[f64], h: f64) -> Vec<Extremum> {
    let mut out = Vec::new();
    let (mut hi, mut lo) = (0usize, 0usize);
    let mut dir: Option<bool> = None; // Some(true): looking for a peak
    for i in 1..v.len() {
        match dir {
            None => {
                if v[i] > v[hi] {
                    hi = i;
                }
                if v[i] < v[lo] {
                    lo = i;
                }
                if v[hi] - v[i] >= h && hi > lo {
                    if hi > 0 {
                        out.push(Extremum { index: hi, is_peak: true });
                    }
                    dir = Some(false);
                    lo = i;
                } else if v[i] - v[lo] >= h && lo > hi {
                    if lo > 0 {
                        out.push(Extremum { index: lo, is_peak: false });
                    }
                    dir = Some(true);
                    hi = i;
                }
            }
            Some(true) => {
                if v[i] > v[hi] {
                    hi = i;
                } else if v[hi] - v[i] >= h {
                    out.push(Extremum { index: hi, is_peak: true });
                    dir = Some(false);
                    lo = i;
                }
            }
            Some(false) => {
                if v[i] < v[lo] {
                    lo = i;
                } else if v[i] - v[lo] >= h {
                    out.push(Extremum { index: lo, is_peak: false });
                    dir = Some(true);
                    hi = i;
                }
            }
        }
    }
    out
}

/// Centered moving average of `window` samples, shrinking at the edges.
fn moving_average(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let mut prefix = Vec::with_capacity(v.len() + 1);
    prefix.push(0.0);
    for &x in v {
        prefix.push(prefix.last().unwrap() + x);
    }
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(amplitude: f64) -> MotionModel {
        MotionModel { period_s: 1.0, amplitude_px: amplitude, drift_px_per_cycle: 0.0, jitter_frac: 0.0, seed: 3 }
    }

    /// Half-cosine interpolation through (time, value) knots, sampled every `dt`.
    pub(crate) fn knot_signal(knots: &[(f64, f64)], dt: f64) -> SelfGatingSignal {
        let end = knots.last().unwrap().0;
        let n = (end / dt).floor() as usize + 1;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let vs = ts
            .iter()
            .map(|&t| {
                let j = knots.partition_point(|k| k.0 <= t).clamp(1, knots.len() - 1);
                let (t0, v0) = knots[j - 1];
                let (t1, v1) = knots[j];
                let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                v0 + (v1 - v0) * 0.5 * (1.0 - (PI * f).cos())
            })
            .collect();
        SelfGatingSignal::new(ts, vs).unwrap()
    }

    #[test]
    fn zero_motion_frames_identical() {
        let s = generate_phantom(&still(0.0), 32, 32, 8).unwrap();
        for b in 1..8 {
            assert_eq!(s.frame(b), s.frame(0));
        }
    }

    #[test]
    fn phantom_is_deterministic_and_bounded() {
        let m = MotionModel { jitter_frac: 0.2, seed: 11, ..still(5.0) };
        let a = generate_phantom(&m, 48, 40, 8).unwrap();
        let b = generate_phantom(&m, 48, 40, 8).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = a.value_range();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn lesion_centroid_tracks_amplitude() {
        let s = generate_phantom(&still(8.0), 64, 64, 8).unwrap();
        let centroid = |b: usize| {
            let (mut m, mut r) = (0.0, 0.0);
            for ((row, _), &v) in s.frame(b).indexed_iter() {
                if v > 0.85 {
                    m += 1.0;
                    r += row as f64;
                }
            }
            r / m
        };
        let shift = centroid(4) - centroid(0);
        assert!((shift - 8.0).abs() <= 1.0, "lesion shift {shift}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(generate_phantom(&still(1.0), 8, 32, 8).is_err());
        assert!(generate_phantom(&still(1.0), 32, 32, 0).is_err());
        assert!(generate_phantom(&MotionModel { period_s: 0.0, ..still(1.0) }, 32, 32, 8).is_err());
        assert!(generate_phantom(&MotionModel { jitter_frac: 1.0, ..still(1.0) }, 32, 32, 8).is_err());
        assert!(respiratory_signal(&still(1.0), 10.0, 0.0).is_err());
        assert!(respiratory_signal(&still(1.0), 0.5, 0.1).is_err());
    }

    #[test]
    fn signal_length_and_periodicity() {
        let m = MotionModel { period_s: 2.0, ..still(3.0) };
        let s = respiratory_signal(&m, 10.0, 0.1).unwrap();
        assert_eq!(s.len(), 100);
        // 2 s period at 0.1 s spacing: sample i and i + 20 are one period apart
        for i in 0..80 {
            assert!((s.values()[i] - s.values()[i + 20]).abs() < 1e-9);
        }
    }

    #[test]
    fn drift_accumulates_per_cycle() {
        let m = MotionModel { drift_px_per_cycle: 0.5, ..still(4.0) };
        let s = respiratory_signal(&m, 10.0, 0.01).unwrap();
        let mean = |c: usize| s.values()[c * 100..(c + 1) * 100].iter().sum::<f64>() / 100.0;
        let diff = mean(9) - mean(0);
        assert!((4.5 - 1e-9..=5.0).contains(&diff), "drift difference {diff}");
    }

    #[test]
    fn pure_sinusoid_scores_zero() {
        let ts: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        let vs = ts.iter().map(|t| (2.0 * PI * t / 2.5).sin()).collect();
        let score = regularity_score(&SelfGatingSignal::new(ts, vs).unwrap()).unwrap();
        assert!(score < 1e-6, "score {score}");
        assert!(!is_irregular(score));
    }

    #[test]
    fn breathing_trace_scores_zero() {
        let s = respiratory_signal(&still(6.0), 8.0, 0.004).unwrap();
        assert!(regularity_score(&s).unwrap() < 1e-6);
    }

    #[test]
    fn alternating_midlevels_score_quarter() {
        // range R = 2; mid-levels alternate 0 and 0.5 R = 1 over four cycles
        let mids = [0.0, 1.0, 0.0, 1.0];
        let mut knots = vec![(0.0, 0.0)];
        for (c, a) in mids.iter().enumerate() {
            let t = 1.0 + 2.0 * c as f64;
            knots.push((t, a - 1.0));
            knots.push((t + 1.0, a + 1.0));
        }
        knots.push((9.5, 0.5));
        let s = knot_signal(&knots, 0.01);
        let score = regularity_score(&s).unwrap();
        assert!((score - 0.25).abs() < 1e-9, "score {score}");
        assert!(is_irregular(score));
    }

    #[test]
    fn threshold_is_strict() {
        assert!(!is_irregular(0.20));
        assert!(is_irregular(0.2000001));
    }

    #[test]
    fn too_few_cycles_is_an_error() {
        let ts: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let vs = ts.iter().map(|t| (2.0 * PI * t / 2.0).sin()).collect();
        assert!(regularity_score(&SelfGatingSignal::new(ts, vs).unwrap()).is_err());
    }

    #[test]
    fn interpolates_within_support() {
        let s = SelfGatingSignal::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(s.value_at(0.5), Some(1.0));
        assert_eq!(s.value_at(2.0), Some(0.0));
        assert_eq!(s.value_at(2.1), None);
        assert!(SelfGatingSignal::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn score_is_scale_invariant(scale in 0.01f64..100.0, jitter in 0.0f64..0.3, seed in 0u64..1000) {
                let m = MotionModel { period_s: 1.0, amplitude_px: 5.0, drift_px_per_cycle: 0.3, jitter_frac: jitter, seed };
                let s = respiratory_signal(&m, 8.0, 0.005).unwrap();
                let scaled = SelfGatingSignal::new(
                    s.timestamps().to_vec(),
                    s.values().iter().map(|v| v * scale).collect(),
                ).unwrap();
                let a = regularity_score(&s).unwrap();
                let b = regularity_score(&scaled).unwrap();
                prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            }

            #[test]
            fn signal_is_deterministic(seed in 0u64..1000, jitter in 0.0f64..0.5) {
                let m = MotionModel { jitter_frac: jitter, seed, ..MotionModel::default() };
                prop_assert_eq!(respiratory_signal(&m, 5.0, 0.01).unwrap(), respiratory_signal(&m, 5.0, 0.01).unwrap());
            }
        }
    }
}
