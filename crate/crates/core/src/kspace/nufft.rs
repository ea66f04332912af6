//! Kaiser-Bessel gridding NUFFT.
//!
//! The forward (type-2) transform divides the image by the kernel's Fourier
//! transform, zero-pads it onto a 2x oversampled grid, takes an FFT and
//! interpolates the grid at each sample with a separable Kaiser-Bessel kernel
//! of width 6. The adjoint applies the transposes of those steps in reverse
//! order, so the pair is adjoint to machine precision.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{ensure, Result};

pub const OVERSAMPLING: f64 = 2.0;
pub const KERNEL_WIDTH: usize = 6;

/// Beatty et al.'s shape parameter for a Kaiser-Bessel kernel of `width`
/// grid cells at oversampling `sigma`.
pub fn kaiser_bessel_beta(width: usize, sigma: f64) -> f64 {
    let w = width as f64;
    PI * ((w / sigma).powi(2) * (sigma - 0.5).powi(2) - 0.8).sqrt()
}

/// Modified Bessel function of the first kind, order zero.
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// A NUFFT bound to one matrix size and one set of sample coordinates.
pub struct NufftPlan {
    n: usize,
    m: usize,
    /// Reciprocal of the kernel transform at each image row/column.
    deapod: Vec<f64>,
    /// Per-sample grid indices and kernel weights along x and y.
    ix: Vec<usize>,
    wx: Vec<f64>,
    iy: Vec<usize>,
    wy: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NufftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NufftPlan").field("n", &self.n).field("m", &self.m).field("samples", &self.n_samples()).finish()
    }
}

impl NufftPlan {
    /// Plan for an `n×n` image sampled at `coords` (cycles per FOV).
    pub fn new(n: usize, coords: &[[f64; 2]]) -> Result<Self> {
        ensure!(n >= 2, InvalidArgument, "matrix size must be at least 2");
        let m = (OVERSAMPLING * n as f64).round() as usize;
        let width = KERNEL_WIDTH;
        let beta = kaiser_bessel_beta(width, OVERSAMPLING);
        let half_w = width as f64 / 2.0;
        let kernel = |d: f64| {
            let r = 2.0 * d / width as f64;
            if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(beta * (1.0 - r * r).sqrt())
            }
        };
        let kernel_ft = |nu: f64| {
            let a = (PI * width as f64 * nu).powi(2);
            let w = width as f64;
            if beta * beta > a {
                let s = (beta * beta - a).sqrt();
                w * s.sinh() / s
            } else if beta * beta < a {
                let s = (a - beta * beta).sqrt();
                w * s.sin() / s
            } else {
                w
            }
        };
        let deapod =
            (0..n).map(|i| 1.0 / kernel_ft((i as f64 - (n / 2) as f64) / m as f64)).collect();

        let mi = m as i64;
        let mut ix = Vec::with_capacity(coords.len() * width);
        let mut wx = Vec::with_capacity(coords.len() * width);
        let mut iy = Vec::with_capacity(coords.len() * width);
        let mut wy = Vec::with_capacity(coords.len() * width);
        for &[kx, ky] in coords {
            ensure!(kx.is_finite() && ky.is_finite(), NonFinite, "trajectory coordinate");
            for (k, idx, wts) in [(kx, &mut ix, &mut wx), (ky, &mut iy, &mut wy)] {
                let u = OVERSAMPLING * k;
                let m0 = (u - half_w).floor() as i64 + 1;
                for a in 0..width as i64 {
                    let g = m0 + a;
                    idx.push(g.rem_euclid(mi) as usize);
                    wts.push(kernel(u - g as f64));
                }
            }
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            m,
            deapod,
            ix,
            wx,
            iy,
            wy,
            fft: planner.plan_fft_forward(m),
            ifft: planner.plan_fft_inverse(m),
        })
    }

    pub fn matrix_size(&self) -> usize {
        self.n
    }

    pub fn n_samples(&self) -> usize {
        self.ix.len() / KERNEL_WIDTH
    }

    fn grid_index(&self, p: usize) -> usize {
        (p + self.m - self.n / 2) % self.m
    }

    fn fft2(&self, grid: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.ifft } else { &self.fft };
        fft.process(grid);
        transpose_square(grid, self.m);
        fft.process(grid);
        transpose_square(grid, self.m);
    }

    /// Deapodize, zero-pad and transform `image` onto the oversampled grid.
    pub fn forward_grid(&self, image: &Array2<Complex64>) -> Result<Vec<Complex64>> {
        ensure!(
            image.dim() == (self.n, self.n),
            ShapeMismatch,
            "image {:?} vs plan {}x{}",
            image.dim(),
            self.n,
            self.n
        );
        let m = self.m;
        let mut grid = vec![Complex64::new(0.0, 0.0); m * m];
        for ((y, x), v) in image.indexed_iter() {
            grid[self.grid_index(y) * m + self.grid_index(x)] = v * (self.deapod[y] * self.deapod[x]);
        }
        self.fft2(&mut grid, false);
        Ok(grid)
    }

    /// Interpolate samples `range` from a grid produced by [`Self::forward_grid`].
    pub fn interpolate(&self, grid: &[Complex64], range: std::ops::Range<usize>) -> Vec<Complex64> {
        const W: usize = KERNEL_WIDTH;
        let m = self.m;
        range
            .map(|i| {
                let (ix, wx) = (&self.ix[i * W..(i + 1) * W], &self.wx[i * W..(i + 1) * W]);
                let (iy, wy) = (&self.iy[i * W..(i + 1) * W], &self.wy[i * W..(i + 1) * W]);
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..W {
                    let row = &grid[iy[a] * m..(iy[a] + 1) * m];
                    let mut line = Complex64::new(0.0, 0.0);
                    for b in 0..W {
                        line += row[ix[b]] * wx[b];
                    }
                    acc += line * wy[a];
                }
                acc
            })
            .collect()
    }

    /// Type-2 transform: `F(k) = Σ_r image[r] exp(-2πi k·r / N)`.
    pub fn forward(&self, image: &Array2<Complex64>) -> Result<Vec<Complex64>> {
        let grid = self.forward_grid(image)?;
        Ok(self.interpolate(&grid, 0..self.n_samples()))
    }

    /// Adjoint of [`Self::forward`]: `f(r) = Σ_i v_i exp(+2πi k_i·r / N)`.
    pub fn adjoint(&self, values: &[Complex64]) -> Result<Array2<Complex64>> {
        const W: usize = KERNEL_WIDTH;
        ensure!(
            values.len() == self.n_samples(),
            ShapeMismatch,
            "{} values for {} samples",
            values.len(),
            self.n_samples()
        );
        let m = self.m;
        let mut grid = vec![Complex64::new(0.0, 0.0); m * m];
        for (i, &v) in values.iter().enumerate() {
            let (ix, wx) = (&self.ix[i * W..(i + 1) * W], &self.wx[i * W..(i + 1) * W]);
            let (iy, wy) = (&self.iy[i * W..(i + 1) * W], &self.wy[i * W..(i + 1) * W]);
            for a in 0..W {
                let va = v * wy[a];
                let row = &mut grid[iy[a] * m..(iy[a] + 1) * m];
                for b in 0..W {
                    row[ix[b]] += va * wx[b];
                }
            }
        }
        self.fft2(&mut grid, true);
        Ok(Array2::from_shape_fn((self.n, self.n), |(y, x)| {
            grid[self.grid_index(y) * m + self.grid_index(x)] * (self.deapod[y] * self.deapod[x])
        }))
    }
}

fn transpose_square(a: &mut [Complex64], m: usize) {
    for r in 0..m {
        for c in r + 1..m {
            a.swap(r * m + c, c * m + r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(9.0) - 1093.588_354_511_374_5).abs() < 1e-9);
    }

    #[test]
    fn beta_for_default_kernel() {
        assert!((kaiser_bessel_beta(4, 2.0) - PI * 8.2f64.sqrt()).abs() < 1e-12);
    }
}
