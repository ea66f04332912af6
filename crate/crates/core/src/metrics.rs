//! Image-quality metrics: RMSE, PSNR and SSIM, plus test-set aggregation.
//!
//! Series are scored after a joint affine rescale of prediction and ground
//! truth to `[0, 1]` (shared min/max), so every number shares one scale.

use std::time::Instant;

use ndarray::{Array2, ArrayView, ArrayView2, Dimension};

use crate::error::{ensure, Result};
use crate::ImageSeries;

pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DEFAULT_SSIM_WINDOW: usize = 8;

/// Root of the mean squared elementwise difference.
pub fn rmse<D: Dimension>(pred: ArrayView<'_, f32, D>, gt: ArrayView<'_, f32, D>) -> Result<f64> {
    ensure!(pred.shape() == gt.shape(), ShapeMismatch, "{:?} vs {:?}", pred.shape(), gt.shape());
    ensure!(!pred.is_empty(), InvalidArgument, "rmse of an empty array");
    let sse: f64 = pred.iter().zip(gt.iter()).map(|(&p, &g)| (f64::from(p) - f64::from(g)).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// `20 log10(max_i / rmse)`; a perfect match yields `f64::INFINITY`.
pub fn psnr_from_rmse(rmse: f64, max_i: f64) -> Result<f64> {
    ensure!(max_i > 0.0, InvalidArgument, "max_i must be positive, got {max_i}");
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (max_i / rmse).log10())
}

pub fn psnr<D: Dimension>(pred: ArrayView<'_, f32, D>, gt: ArrayView<'_, f32, D>, max_i: f64) -> Result<f64> {
    psnr_from_rmse(rmse(pred, gt)?, max_i)
}

/// Region over which SSIM statistics are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsimWindow {
    /// Square window of this side, slid with stride 1; scores are averaged.
    Sliding(usize),
    /// One window covering the whole frame.
    Global,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow::Sliding(DEFAULT_SSIM_WINDOW)
    }
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// SSIM of one frame with `c1 = (0.01 L)²`, `c2 = (0.03 L)²` and population
/// window statistics.
pub fn ssim(pred: ArrayView2<'_, f32>, gt: ArrayView2<'_, f32>, dynamic_range: f64, window: SsimWindow) -> Result<f64> {
    ensure!(pred.dim() == gt.dim(), ShapeMismatch, "{:?} vs {:?}", pred.dim(), gt.dim());
    ensure!(dynamic_range > 0.0, InvalidArgument, "dynamic range must be positive");
    let (h, w) = pred.dim();
    let side = match window {
        SsimWindow::Sliding(s) => s,
        SsimWindow::Global => {
            ensure!(h >= 1 && w >= 1, InvalidArgument, "empty frame");
            return Ok(ssim_windowed(pred, gt, dynamic_range, h, w));
        }
    };
    ensure!(side >= 1, InvalidArgument, "window must be at least 1 pixel");
    ensure!(side <= h && side <= w, InvalidArgument, "{side}x{side} window larger than {h}x{w} frame");
    Ok(ssim_windowed(pred, gt, dynamic_range, side, side))
}

fn ssim_windowed(pred: ArrayView2<'_, f32>, gt: ArrayView2<'_, f32>, l: f64, wh: usize, ww: usize) -> f64 {
    let (h, w) = pred.dim();
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    // summed-area tables of x, y, x², y², xy
    let mut sat = Array2::<[f64; 5]>::from_elem((h + 1, w + 1), [0.0; 5]);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (f64::from(pred[[r, c]]), f64::from(gt[[r, c]]));
            let v = [x, y, x * x, y * y, x * y];
            let (up, left, diag) = (sat[[r, c + 1]], sat[[r + 1, c]], sat[[r, c]]);
            let mut cell = [0.0; 5];
            for k in 0..5 {
                cell[k] = v[k] + up[k] + left[k] - diag[k];
            }
            sat[[r + 1, c + 1]] = cell;
        }
    }
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - wh {
        for c in 0..=w - ww {
            let (a, b, cc, d) = (sat[[r + wh, c + ww]], sat[[r, c + ww]], sat[[r + wh, c]], sat[[r, c]]);
            let mut s = [0.0; 5];
            for k in 0..5 {
                s[k] = (a[k] - b[k] - cc[k] + d[k]) / n;
            }
            let (mx, my) = (s[0], s[1]);
            let vx = (s[2] - mx * mx).max(0.0);
            let vy = (s[3] - my * my).max(0.0);
            let cxy = s[4] - mx * my;
            total += ssim_from_moments(mx, my, vx, vy, cxy, c1, c2);
            count += 1;
        }
    }
    total / count as f64
}

/// Mean per-frame SSIM of two series.
pub fn ssim_series(pred: &ImageSeries, gt: &ImageSeries, dynamic_range: f64, window: SsimWindow) -> Result<f64> {
    ensure!(pred.dim() == gt.dim(), ShapeMismatch, "{:?} vs {:?}", pred.dim(), gt.dim());
    let mut acc = 0.0;
    for b in 0..pred.n_bins() {
        acc += ssim(pred.frame(b), gt.frame(b), dynamic_range, window)?;
    }
    Ok(acc / pred.n_bins() as f64)
}

/// Map both series to `[0, 1]` with their joint min and max.
pub fn joint_rescale(pred: &ImageSeries, gt: &ImageSeries) -> Result<(ImageSeries, ImageSeries)> {
    ensure!(pred.dim() == gt.dim(), ShapeMismatch, "{:?} vs {:?}", pred.dim(), gt.dim());
    let (plo, phi) = pred.value_range();
    let (glo, ghi) = gt.value_range();
    let (lo, hi) = (f64::from(plo.min(glo)), f64::from(phi.max(ghi)));
    let span = hi - lo;
    let map = |s: &ImageSeries| {
        let f = s.frames().mapv(|v| if span > 0.0 { ((f64::from(v) - lo) / span) as f32 } else { 0.0 });
        ImageSeries::new(f)
    };
    Ok((map(pred)?, map(gt)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub rmse: f64,
    pub psnr_db: f64,
    pub one_minus_ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesScore {
    pub rmse: f64,
    pub psnr_db: f64,
    pub one_minus_ssim: f64,
    pub seconds: f64,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if mean.is_infinite() {
            // perfect reconstructions: PSNR sentinel propagates
            let std = if values.iter().all(|v| *v == mean) { 0.0 } else { f64::NAN };
            return Self { mean, std };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_frame: Vec<Vec<FrameScore>>,
    pub per_series: Vec<SeriesScore>,
    pub rmse: Aggregate,
    pub psnr_db: Aggregate,
    pub one_minus_ssim: Aggregate,
    pub seconds: Aggregate,
}

/// Score aligned prediction/ground-truth series, each pair rescaled jointly
/// to `[0, 1]` first.
pub fn evaluate_series(
    preds: &[ImageSeries],
    gts: &[ImageSeries],
    seconds: &[f64],
    window: SsimWindow,
) -> Result<MetricReport> {
    ensure!(
        preds.len() == gts.len() && preds.len() == seconds.len(),
        ShapeMismatch,
        "{} predictions, {} references, {} timings",
        preds.len(),
        gts.len(),
        seconds.len()
    );
    let mut per_frame = Vec::with_capacity(preds.len());
    let mut per_series = Vec::with_capacity(preds.len());
    for ((p, g), &secs) in preds.iter().zip(gts).zip(seconds) {
        let (p, g) = joint_rescale(p, g)?;
        let mut frames = Vec::with_capacity(p.n_bins());
        for b in 0..p.n_bins() {
            let e = rmse(p.frame(b), g.frame(b))?;
            frames.push(FrameScore {
                rmse: e,
                psnr_db: psnr_from_rmse(e, 1.0)?,
                one_minus_ssim: 1.0 - ssim(p.frame(b), g.frame(b), 1.0, window)?,
            });
        }
        let e = rmse(p.frames().view(), g.frames().view())?;
        per_series.push(SeriesScore {
            rmse: e,
            psnr_db: psnr_from_rmse(e, 1.0)?,
            one_minus_ssim: frames.iter().map(|f| f.one_minus_ssim).sum::<f64>() / frames.len() as f64,
            seconds: secs,
        });
        per_frame.push(frames);
    }
    let col = |f: fn(&SeriesScore) -> f64| Aggregate::of(&per_series.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        rmse: col(|s| s.rmse),
        psnr_db: col(|s| s.psnr_db),
        one_minus_ssim: col(|s| s.one_minus_ssim),
        seconds: col(|s| s.seconds),
        per_frame,
        per_series,
    })
}

/// Run `f` and return its result with the elapsed wall-clock seconds.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
