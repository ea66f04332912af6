//! Golden-angle radial sampling and the non-uniform Fourier operators.
//!
//! Coordinates are in cycles per field of view: a matrix of `N` pixels spans
//! `k ∈ [-N/2, N/2]`, and pixel `(row, col)` sits at position
//! `(row - N/2, col - N/2)` relative to the array center, so a unit impulse
//! at `(N/2, N/2)` has a flat, zero-phase spectrum.

mod acquisition;
mod nufft;

pub use acquisition::{
    acceleration_ratio, acquire_dynamic, bin_by_phase, spokes_for_duration, undersample_spokes, BinnedKSpace,
    DynamicSubject, StaticSubject,
};
pub use nufft::{kaiser_bessel_beta, NufftPlan, KERNEL_WIDTH, OVERSAMPLING};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{ensure, Result};

/// The golden angle `π/φ` (≈ 111.246°) between consecutive spokes.
pub fn golden_angle() -> f64 {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    std::f64::consts::PI / phi
}

/// Radial spokes through the k-space origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTrajectory {
    matrix_size: usize,
    samples_per_spoke: usize,
    angles: Vec<f64>,
    coords: Vec<[f64; 2]>,
}

impl RadialTrajectory {
    /// Spokes at arbitrary angles, each with `samples_per_spoke` samples
    /// uniformly spaced over `[-matrix_size/2, matrix_size/2]`.
    pub fn from_angles(angles: Vec<f64>, samples_per_spoke: usize, matrix_size: usize) -> Result<Self> {
        ensure!(!angles.is_empty(), InvalidArgument, "trajectory needs at least one spoke");
        ensure!(samples_per_spoke >= 2, InvalidArgument, "need at least 2 samples per spoke");
        ensure!(matrix_size >= 2, InvalidArgument, "matrix size must be at least 2");
        let k_max = matrix_size as f64 / 2.0;
        let step = 2.0 * k_max / (samples_per_spoke - 1) as f64;
        let mut coords = Vec::with_capacity(angles.len() * samples_per_spoke);
        for &a in &angles {
            let (s, c) = a.sin_cos();
            for j in 0..samples_per_spoke {
                let k = -k_max + j as f64 * step;
                coords.push([k * c, k * s]);
            }
        }
        Ok(Self { matrix_size, samples_per_spoke, angles, coords })
    }

    pub fn matrix_size(&self) -> usize {
        self.matrix_size
    }

    pub fn samples_per_spoke(&self) -> usize {
        self.samples_per_spoke
    }

    pub fn n_spokes(&self) -> usize {
        self.angles.len()
    }

    pub fn n_samples(&self) -> usize {
        self.coords.len()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// `(kx, ky)` of every sample, spoke-major.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn spoke_coords(&self, spoke: usize) -> &[[f64; 2]] {
        let s = self.samples_per_spoke;
        &self.coords[spoke * s..(spoke + 1) * s]
    }

    /// Signed radial position of sample `j` along any spoke.
    pub fn radial_position(&self, j: usize) -> f64 {
        let k_max = self.matrix_size as f64 / 2.0;
        -k_max + j as f64 * 2.0 * k_max / (self.samples_per_spoke - 1) as f64
    }

    /// Spacing between samples along a spoke.
    pub fn sample_spacing(&self) -> f64 {
        self.matrix_size as f64 / (self.samples_per_spoke - 1) as f64
    }

    /// The trajectory restricted to `spokes`, in the given order.
    pub fn select(&self, spokes: &[usize]) -> Self {
        let s = self.samples_per_spoke;
        Self {
            matrix_size: self.matrix_size,
            samples_per_spoke: s,
            angles: spokes.iter().map(|&i| self.angles[i]).collect(),
            coords: spokes.iter().flat_map(|&i| self.coords[i * s..(i + 1) * s].iter().copied()).collect(),
        }
    }
}

/// Spoke `i` at angle `(i · π/φ) mod π`.
pub fn golden_angle_trajectory(n_spokes: usize, samples_per_spoke: usize, matrix_size: usize) -> Result<RadialTrajectory> {
    ensure!(n_spokes >= 1, InvalidArgument, "n_spokes must be at least 1");
    let ga = golden_angle();
    let angles = (0..n_spokes).map(|i| (i as f64 * ga).rem_euclid(std::f64::consts::PI)).collect();
    RadialTrajectory::from_angles(angles, samples_per_spoke, matrix_size)
}

/// Spokes needed for Nyquist-rate radial sampling: `N · π/2`, rounded to the
/// nearest integer (288 → 452).
pub fn nyquist_spokes(matrix_size: usize) -> Result<usize> {
    ensure!(matrix_size >= 2, InvalidArgument, "matrix size must be at least 2");
    Ok((matrix_size as f64 * std::f64::consts::FRAC_PI_2).round() as usize)
}

/// Complex samples of a radial acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    /// `n_spokes × samples_per_spoke`.
    pub samples: Array2<Complex64>,
    /// Acquisition time of each spoke, non-decreasing.
    pub spoke_timestamps: Vec<f64>,
    pub trajectory: RadialTrajectory,
}

impl KSpaceData {
    pub fn new(samples: Array2<Complex64>, spoke_timestamps: Vec<f64>, trajectory: RadialTrajectory) -> Result<Self> {
        ensure!(
            samples.dim() == (trajectory.n_spokes(), trajectory.samples_per_spoke()),
            ShapeMismatch,
            "samples {:?} vs trajectory {}x{}",
            samples.dim(),
            trajectory.n_spokes(),
            trajectory.samples_per_spoke()
        );
        ensure!(
            spoke_timestamps.len() == trajectory.n_spokes(),
            ShapeMismatch,
            "{} timestamps for {} spokes",
            spoke_timestamps.len(),
            trajectory.n_spokes()
        );
        ensure!(
            spoke_timestamps.windows(2).all(|w| w[1] >= w[0]),
            InvalidArgument,
            "spoke timestamps must be non-decreasing"
        );
        Ok(Self { samples, spoke_timestamps, trajectory })
    }

    pub fn n_spokes(&self) -> usize {
        self.trajectory.n_spokes()
    }

    /// Keep `spokes` (indices into this acquisition), in the given order.
    pub fn select(&self, spokes: &[usize]) -> Self {
        let s = self.trajectory.samples_per_spoke();
        let mut samples = Array2::zeros((spokes.len(), s));
        for (row, &i) in spokes.iter().enumerate() {
            samples.row_mut(row).assign(&self.samples.row(i));
        }
        Self {
            samples,
            spoke_timestamps: spokes.iter().map(|&i| self.spoke_timestamps[i]).collect(),
            trajectory: self.trajectory.select(spokes),
        }
    }

    pub fn flat_samples(&self) -> &[Complex64] {
        self.samples.as_slice().expect("k-space samples are contiguous")
    }
}

/// Ramp density compensation: `w ∝ |k|`, with a sample at the origin given
/// half the weight of the first ring.
///
/// The scale is fixed in closed form so that the weighted adjoint of the
/// forward transform of a constant image reproduces its mean: with `D(k)` the
/// spectrum of an all-ones `N×N` image, `Σ w_i |D(k_i)|² / N² = 1`.
pub fn density_weights(traj: &RadialTrajectory) -> Vec<f64> {
    let n = traj.matrix_size() as f64;
    let dk = traj.sample_spacing();
    let ramp: Vec<f64> = traj
        .coords()
        .iter()
        .map(|[kx, ky]| {
            let r = kx.hypot(*ky);
            if r < 1e-9 * dk {
                0.5 * dk
            } else {
                r
            }
        })
        .collect();
    let dirichlet = |k: f64| {
        let den = (std::f64::consts::PI * k / n).sin();
        if den.abs() < 1e-12 {
            n
        } else {
            (std::f64::consts::PI * k).sin() / den
        }
    };
    let energy: f64 = traj
        .coords()
        .iter()
        .zip(&ramp)
        .map(|([kx, ky], w)| w * (dirichlet(*kx) * dirichlet(*ky)).powi(2))
        .sum::<f64>()
        / (n * n);
    ramp.iter().map(|w| w / energy).collect()
}

/// Density-compensated adjoint (gridding) reconstruction of one acquisition.
pub fn adjoint_reconstruct(ks: &KSpaceData) -> Result<Array2<Complex64>> {
    let weights = density_weights(&ks.trajectory);
    nufft_adjoint(ks, &weights, ks.trajectory.matrix_size())
}

/// Type-2 NUFFT: uniform image to the trajectory's samples. Timestamps are zero.
pub fn nufft_forward(image: &Array2<Complex64>, traj: &RadialTrajectory) -> Result<KSpaceData> {
    let n = traj.matrix_size();
    ensure!(image.dim() == (n, n), ShapeMismatch, "image {:?} vs matrix size {n}", image.dim());
    let plan = NufftPlan::new(n, traj.coords())?;
    let flat = plan.forward(image)?;
    let samples = Array2::from_shape_vec((traj.n_spokes(), traj.samples_per_spoke()), flat)
        .expect("sample count matches trajectory");
    KSpaceData::new(samples, vec![0.0; traj.n_spokes()], traj.clone())
}

/// Type-1 NUFFT of density-weighted samples back onto the image grid.
pub fn nufft_adjoint(ks: &KSpaceData, weights: &[f64], matrix_size: usize) -> Result<Array2<Complex64>> {
    ensure!(
        weights.len() == ks.trajectory.n_samples(),
        ShapeMismatch,
        "{} weights for {} samples",
        weights.len(),
        ks.trajectory.n_samples()
    );
    ensure!(
        matrix_size == ks.trajectory.matrix_size(),
        ShapeMismatch,
        "matrix size {matrix_size} vs trajectory {}",
        ks.trajectory.matrix_size()
    );
    let plan = NufftPlan::new(matrix_size, ks.trajectory.coords())?;
    let weighted: Vec<Complex64> = ks.flat_samples().iter().zip(weights).map(|(d, w)| d * *w).collect();
    plan.adjoint(&weighted)
}
