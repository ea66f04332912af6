//! Conditional denoising diffusion: noise schedule, forward noising, the
//! ε-prediction loss and the ancestral reverse sampler.
//!
//! Step indices run over `1..=n_steps`; `γ_0 = 1` by convention.

use ndarray::{Array3, ArrayView3, Zip};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::training::ZScore;
use crate::ImageSeries;

pub const DEFAULT_STEPS: usize = 800;
pub const DEFAULT_BETA_START: f64 = 1e-6;
pub const DEFAULT_BETA_END: f64 = 1e-2;
/// Bound applied to the implied clean image when clipping is enabled.
pub const CLIP_BOUND: f64 = 3.0;

/// Per-step retention factors `α_t` and their running products `γ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    gamma: Vec<f64>,
}

impl NoiseSchedule {
    /// Build a schedule from explicit retention factors in `(0, 1]`.
    ///
    /// `α_t = 1` is accepted so degenerate identity steps can be expressed;
    /// [`make_schedule`] never produces one.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self> {
        ensure!(!alpha.is_empty(), InvalidArgument, "schedule needs at least one step");
        ensure!(
            alpha.iter().all(|&a| a > 0.0 && a <= 1.0),
            InvalidArgument,
            "retention factors must lie in (0, 1]"
        );
        let mut gamma = Vec::with_capacity(alpha.len());
        let mut g = 1.0;
        for &a in &alpha {
            g *= a;
            gamma.push(g);
        }
        Ok(Self { alpha, gamma })
    }

    pub fn n_steps(&self) -> usize {
        self.alpha.len()
    }

    /// `α_t` for `t` in `1..=n_steps`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `γ_t` for `t` in `0..=n_steps`.
    pub fn gamma(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.gamma[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }
}

/// Linear-β schedule: `β_t` evenly spaced on `[beta_start, beta_end]`.
pub fn make_schedule(n_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ensure!(n_steps >= 1, InvalidArgument, "n_steps must be at least 1");
    ensure!(
        beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
        InvalidArgument,
        "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
    );
    let alpha = (0..n_steps)
        .map(|i| {
            let f = if n_steps == 1 { 0.0 } else { i as f64 / (n_steps - 1) as f64 };
            1.0 - (beta_start + f * (beta_end - beta_start))
        })
        .collect();
    NoiseSchedule::from_alphas(alpha)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }
}

/// Draw `t` uniformly from `1..=n_steps`, then `γ` uniformly on `(γ_t, γ_{t-1})`.
pub fn sample_timestep_gamma(sched: &NoiseSchedule, rng: &mut Rng) -> (usize, f64) {
    let t = rng.random_range(1..=sched.n_steps());
    let (lo, hi) = (sched.gamma(t), sched.gamma(t - 1));
    if lo >= hi {
        return (t, hi);
    }
    loop {
        let g = lo + (hi - lo) * rng.random::<f64>();
        if g > lo && g < hi {
            return (t, g);
        }
    }
}

/// Standard normal array.
pub fn gaussian(dim: (usize, usize, usize), rng: &mut Rng) -> Array3<f32> {
    Array3::from_shape_simple_fn(dim, || rng.sample::<f32, _>(StandardNormal))
}

/// A noised target together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub y_t: Array3<f32>,
    pub gamma_used: f64,
    pub eps: Array3<f32>,
}

/// `y_t = √γ·y0 + √(1−γ)·ε`.
pub fn forward_diffuse(y0: ArrayView3<'_, f32>, gamma: f64, eps: Array3<f32>) -> Result<DiffusionSample> {
    ensure!(y0.dim() == eps.dim(), ShapeMismatch, "y0 {:?} vs eps {:?}", y0.dim(), eps.dim());
    ensure!((0.0..=1.0).contains(&gamma), InvalidArgument, "gamma {gamma} outside [0, 1]");
    let (a, b) = (gamma.sqrt(), (1.0 - gamma).sqrt());
    let y_t = Zip::from(&y0).and(&eps).map_collect(|&y, &e| (a * f64::from(y) + b * f64::from(e)) as f32);
    Ok(DiffusionSample { y_t, gamma_used: gamma, eps })
}

/// Draw `(t, γ)` and `ε`, then noise `y0`.
pub fn draw_training_sample(y0: ArrayView3<'_, f32>, sched: &NoiseSchedule, rng: &mut Rng) -> Result<DiffusionSample> {
    let (_, gamma) = sample_timestep_gamma(sched, rng);
    let eps = gaussian(y0.dim(), rng);
    forward_diffuse(y0, gamma, eps)
}

/// Anything that predicts the injected noise `ε` from `(x, y_t, γ)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x: ArrayView3<'_, f32>, y_t: ArrayView3<'_, f32>, gamma: f64) -> Result<Array3<f32>>;
}

/// Mean squared error between drawn noise and its prediction.
pub fn diffusion_loss<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: &ImageSeries,
    y0: &ImageSeries,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<f64> {
    ensure!(x.dim() == y0.dim(), ShapeMismatch, "condition {:?} vs target {:?}", x.dim(), y0.dim());
    let s = draw_training_sample(y0.frames().view(), sched, rng)?;
    let eps_hat = predictor.predict_noise(x.frames().view(), s.y_t.view(), s.gamma_used)?;
    ensure!(eps_hat.dim() == s.eps.dim(), ShapeMismatch, "prediction {:?}", eps_hat.dim());
    let sse: f64 = Zip::from(&s.eps).and(&eps_hat).fold(0.0, |acc, &e, &p| acc + (f64::from(e) - f64::from(p)).powi(2));
    Ok(sse / s.eps.len() as f64)
}

/// One ancestral step `y_t → y_{t−1}`. No noise is added at `t = 1`.
///
/// With `clip`, the implied clean image is clamped to `±CLIP_BOUND` and the
/// noise estimate is re-derived from it before the update.
pub fn reverse_step<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: ArrayView3<'_, f32>,
    y_t: ArrayView3<'_, f32>,
    t: usize,
    sched: &NoiseSchedule,
    clip: bool,
    rng: &mut Rng,
) -> Result<Array3<f32>> {
    ensure!(t >= 1 && t <= sched.n_steps(), InvalidArgument, "step {t} outside 1..={}", sched.n_steps());
    ensure!(x.dim() == y_t.dim(), ShapeMismatch, "condition {:?} vs y_t {:?}", x.dim(), y_t.dim());
    let (alpha, gamma) = (sched.alpha(t), sched.gamma(t));
    let eps = predictor.predict_noise(x, y_t, gamma)?;
    ensure!(eps.dim() == y_t.dim(), ShapeMismatch, "prediction {:?}", eps.dim());
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let one_minus_gamma = 1.0 - gamma;
    let coef = if alpha == 1.0 { 0.0 } else { (1.0 - alpha) / one_minus_gamma.sqrt() };
    let sigma = (1.0 - alpha).sqrt();
    let noise = (t > 1 && sigma > 0.0).then(|| gaussian(y_t.dim(), rng));
    let mut out = Zip::from(&y_t).and(&eps).map_collect(|&y, &e| {
        let (y, mut e) = (f64::from(y), f64::from(e));
        if clip && gamma < 1.0 {
            let y0 = ((y - one_minus_gamma.sqrt() * e) / gamma.sqrt()).clamp(-CLIP_BOUND, CLIP_BOUND);
            e = (y - gamma.sqrt() * y0) / one_minus_gamma.sqrt();
        }
        (inv_sqrt_alpha * (y - coef * e)) as f32
    });
    if let Some(z) = noise {
        Zip::from(&mut out).and(&z).for_each(|o, &z| *o = (f64::from(*o) + sigma * f64::from(z)) as f32);
    }
    ensure!(out.iter().all(|v| v.is_finite()), NonFinite, "reverse step {t} diverged");
    Ok(out)
}

/// Sampler switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerOptions {
    pub clip: bool,
}

/// Run the full reverse chain from `y_T ~ N(0, I)` conditioned on the
/// normalized series `x`, returning the estimate mapped back through `stats`.
pub fn generate<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: &ImageSeries,
    stats: ZScore,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    rng: &mut Rng,
) -> Result<ImageSeries> {
    let y = generate_normalized(predictor, x, sched, opts, rng)?;
    ImageSeries::new(stats.invert(&y))
}

/// [`generate`] without the final de-normalization.
pub fn generate_normalized<P: NoisePredictor + ?Sized>(
    predictor: &P,
    x: &ImageSeries,
    sched: &NoiseSchedule,
    opts: SamplerOptions,
    rng: &mut Rng,
) -> Result<Array3<f32>> {
    let mut y = gaussian(x.dim(), rng);
    for t in (1..=sched.n_steps()).rev() {
        y = reverse_step(predictor, x.frames().view(), y.view(), t, sched, opts.clip, rng)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use std::cell::Cell;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict_noise(&self, _: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, _: f64) -> Result<Array3<f32>> {
            Ok(Array3::zeros(y.dim()))
        }
    }

    struct Counting(Cell<usize>);
    impl NoisePredictor for Counting {
        fn predict_noise(&self, _: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, _: f64) -> Result<Array3<f32>> {
            self.0.set(self.0.get() + 1);
            Ok(y.mapv(|v| 0.1 * v))
        }
    }

    #[test]
    fn schedule_examples() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.gammas(), &[0.5]);
        let s = make_schedule(3, 0.1, 0.1).unwrap();
        for (g, e) in s.gammas().iter().zip([0.9, 0.81, 0.729]) {
            assert!((g - e).abs() < 1e-15);
        }
        let s = NoiseSchedule::default();
        assert_eq!(s.n_steps(), 800);
        assert!(s.gamma(800) < 0.05);
        for t in 1..=800 {
            assert!(s.gamma(t) < s.gamma(t - 1));
            assert_eq!(s.gamma(t), s.gamma(t - 1) * s.alpha(t));
        }
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn timestep_draws_stay_in_their_piece() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        let mut rng = rng_from_seed(1);
        for _ in 0..1000 {
            let (t, g) = sample_timestep_gamma(&s, &mut rng);
            assert_eq!(t, 1);
            assert!(g > 0.7 && g < 1.0);
        }
        let s = make_schedule(50, 1e-3, 0.05).unwrap();
        for _ in 0..1000 {
            let (t, g) = sample_timestep_gamma(&s, &mut rng);
            assert!(g > s.gamma(t) && g < s.gamma(t - 1));
            assert!(g > s.gamma(50) && g < 1.0);
        }
    }

    #[test]
    fn timestep_histogram_is_uniform() {
        let s = make_schedule(10, 1e-3, 0.05).unwrap();
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[sample_timestep_gamma(&s, &mut rng).0 - 1] += 1;
        }
        let e = n as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 9 degrees of freedom
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn forward_diffuse_endpoints_and_linearity() {
        let mut rng = rng_from_seed(3);
        let y0 = gaussian((2, 4, 4), &mut rng);
        let eps = gaussian((2, 4, 4), &mut rng);
        assert_eq!(forward_diffuse(y0.view(), 1.0, eps.clone()).unwrap().y_t, y0);
        assert_eq!(forward_diffuse(y0.view(), 0.0, eps.clone()).unwrap().y_t, eps);
        assert!(forward_diffuse(y0.view(), 1.5, eps.clone()).is_err());
        assert!(forward_diffuse(y0.view(), 0.5, Array3::zeros((1, 4, 4))).is_err());
        let a = forward_diffuse(y0.view(), 0.3, eps.clone()).unwrap().y_t;
        let b = forward_diffuse((&y0 * 2.0).view(), 0.3, &eps * 2.0).unwrap().y_t;
        assert!(Zip::from(&a).and(&b).all(|&a, &b| (2.0 * a - b).abs() < 1e-5));
    }

    #[test]
    fn loss_with_trivial_predictors() {
        let mut rng = rng_from_seed(4);
        let x = ImageSeries::new(gaussian((2, 8, 8), &mut rng)).unwrap();
        let y0 = ImageSeries::new(gaussian((2, 8, 8), &mut rng)).unwrap();
        let s = NoiseSchedule::default();
        let mean: f64 = (0..1000).map(|_| diffusion_loss(&Zero, &x, &y0, &s, &mut rng).unwrap()).sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
        let other = ImageSeries::new(gaussian((2, 8, 8), &mut rng)).unwrap();
        let l1 = diffusion_loss(&Zero, &x, &y0, &s, &mut rng_from_seed(9)).unwrap();
        let l2 = diffusion_loss(&Zero, &other, &y0, &s, &mut rng_from_seed(9)).unwrap();
        assert_eq!(l1, l2);
        assert!(diffusion_loss(&Zero, &ImageSeries::zeros(1, 8, 8), &y0, &s, &mut rng).is_err());
    }

    #[test]
    fn reverse_step_rules() {
        let mut rng = rng_from_seed(5);
        let y = gaussian((1, 4, 4), &mut rng);
        let s = NoiseSchedule::from_alphas(vec![1.0, 1.0, 1.0]).unwrap();
        let p = Counting(Cell::new(0));
        assert_eq!(reverse_step(&p, y.view(), y.view(), 2, &s, false, &mut rng).unwrap(), y);
        assert!(reverse_step(&p, y.view(), y.view(), 0, &s, false, &mut rng).is_err());
        assert!(reverse_step(&p, y.view(), y.view(), 4, &s, false, &mut rng).is_err());

        let s = make_schedule(5, 0.01, 0.1).unwrap();
        let a = reverse_step(&p, y.view(), y.view(), 1, &s, false, &mut rng_from_seed(1)).unwrap();
        let b = reverse_step(&p, y.view(), y.view(), 1, &s, false, &mut rng_from_seed(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generate_is_deterministic_and_counts_steps() {
        let s = make_schedule(25, 1e-4, 0.2).unwrap();
        let x = ImageSeries::new(gaussian((3, 8, 8), &mut rng_from_seed(6))).unwrap();
        let p = Counting(Cell::new(0));
        let stats = ZScore { mean: 0.5, std: 2.0 };
        let a = generate(&p, &x, stats, &s, SamplerOptions::default(), &mut rng_from_seed(7)).unwrap();
        assert_eq!(p.0.get(), 25);
        let b = generate(&p, &x, stats, &s, SamplerOptions::default(), &mut rng_from_seed(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), x.dim());
    }

    #[test]
    fn clipping_bounds_the_implied_clean_image() {
        struct Oracle;
        impl NoisePredictor for Oracle {
            // implies a clean image of 10 everywhere
            fn predict_noise(&self, _: ArrayView3<'_, f32>, y: ArrayView3<'_, f32>, g: f64) -> Result<Array3<f32>> {
                Ok(y.mapv(|v| ((f64::from(v) - g.sqrt() * 10.0) / (1.0 - g).sqrt()) as f32))
            }
        }
        let s = make_schedule(4, 0.05, 0.2).unwrap();
        let y = gaussian((1, 4, 4), &mut rng_from_seed(8));
        let free = reverse_step(&Oracle, y.view(), y.view(), 1, &s, false, &mut rng_from_seed(0)).unwrap();
        let clipped = reverse_step(&Oracle, y.view(), y.view(), 1, &s, true, &mut rng_from_seed(0)).unwrap();
        assert!(free.iter().all(|v| (v - 10.0).abs() < 1e-3));
        assert!(clipped.iter().all(|v| (v - 3.0).abs() < 1e-3));
    }
}
