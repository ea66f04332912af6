//! Simulation and reconstruction toolkit for respiratory-binned radial MRI.
//!
//! The crate covers the whole chain from a synthetic breathing phantom to
//! scored reconstructions:
//!
//! * [`phantom`] renders 2D+t abdominal phantoms and their self-gating signal,
//! * [`kspace`] simulates golden-angle radial acquisition with a Kaiser-Bessel
//!   NUFFT, retrospective undersampling and respiratory-phase binning,
//! * [`cs`] is the spatiotemporal total-variation compressed-sensing baseline,
//! * [`diffusion`], [`denoiser`] and [`training`] implement the conditional
//!   denoising-diffusion reconstruction and its U-Net noise predictor,
//! * [`metrics`] scores reconstructions with RMSE, PSNR and SSIM.

pub mod cs;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod kspace;
pub mod metrics;
pub mod phantom;
pub mod rng;
mod series;
pub mod training;

pub use error::{Error, Result};
pub use series::{ComplexSeries, ImageSeries};
