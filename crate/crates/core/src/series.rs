use ndarray::{Array3, ArrayView2};
use num_complex::Complex32;

use crate::error::{ensure, Result};

/// A 2D+t stack of real frames, shaped `(n_bins, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    frames: Array3<f32>,
}

impl ImageSeries {
    /// Wrap a frame stack. Fails on an empty stack or non-finite pixels.
    pub fn new(frames: Array3<f32>) -> Result<Self> {
        let (n, h, w) = frames.dim();
        ensure!(n >= 1 && h >= 1 && w >= 1, InvalidArgument, "empty series {n}x{h}x{w}");
        ensure!(
            frames.iter().all(|v| v.is_finite()),
            NonFinite,
            "series contains non-finite pixels"
        );
        Ok(Self { frames })
    }

    pub fn zeros(n_bins: usize, height: usize, width: usize) -> Self {
        Self { frames: Array3::zeros((n_bins, height, width)) }
    }

    pub fn n_bins(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.frames.dim()
    }

    /// Minimum and maximum pixel value.
    pub fn value_range(&self) -> (f32, f32) {
        self.frames
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn frame(&self, bin: usize) -> ArrayView2<'_, f32> {
        self.frames.index_axis(ndarray::Axis(0), bin)
    }

    pub fn frames(&self) -> &Array3<f32> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<f32> {
        self.frames
    }
}

/// Complex-valued counterpart of [`ImageSeries`], used for raw reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSeries {
    pub frames: Array3<Complex32>,
}

impl ComplexSeries {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.frames.dim()
    }

    /// Pixelwise magnitude.
    pub fn magnitude(&self) -> ImageSeries {
        ImageSeries { frames: self.frames.mapv(|z| z.norm()) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let mut a = Array3::zeros((2, 4, 4));
        a[[1, 2, 3]] = f32::NAN;
        assert!(ImageSeries::new(a).is_err());
    }

    #[test]
    fn value_range_and_dims() {
        let mut a = Array3::zeros((8, 4, 5));
        a[[0, 0, 0]] = -1.0;
        a[[7, 3, 4]] = 2.5;
        let s = ImageSeries::new(a).unwrap();
        assert_eq!(s.dim(), (8, 4, 5));
        assert_eq!(s.value_range(), (-1.0, 2.5));
    }
}
