//! Splitting a centered spectrum into a low-frequency center block and the
//! high-frequency remainder.
//!
//! For an axis of length `S` and ratio `theta`, the low block covers the
//! half-open index range `[round(S(1-θ)/2), round(S(1+θ)/2))`. The same
//! ratio is applied on every axis. The block is a contiguous
//! hyper-rectangle because spectra are stored centered.

use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{dft_inverse, element_count, strides, unravel, Spectrum, Volume};

pub const DEFAULT_THETA: f64 = 0.1;

/// Ratio controlling the size of the low-frequency block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    theta: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
        }
    }
}

impl SplitConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidTheta(theta));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Per-axis crop ranges for `shape`.
    pub fn crop(&self, shape: &[usize]) -> Result<Vec<Range<usize>>> {
        crop_bounds(shape, self.theta)
    }
}

/// Crop range along one axis of length `len`.
pub fn axis_bounds(len: usize, theta: f64) -> Range<usize> {
    let s = len as f64;
    let start = (s * (1.0 - theta) / 2.0).round() as usize;
    let end = (s * (1.0 + theta) / 2.0).round() as usize;
    start..end.min(len)
}

/// Crop ranges on every axis; fails when any axis would get an empty block.
pub fn crop_bounds(shape: &[usize], theta: f64) -> Result<Vec<Range<usize>>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidTheta(theta));
    }
    let bounds: Vec<_> = shape.iter().map(|&s| axis_bounds(s, theta)).collect();
    if bounds.iter().any(|r| r.is_empty()) {
        return Err(Error::ThetaTooSmall {
            shape: shape.to_vec(),
            theta,
        });
    }
    Ok(bounds)
}

/// Shape of the crop block.
pub fn crop_shape(shape: &[usize], theta: f64) -> Result<Vec<usize>> {
    Ok(crop_bounds(shape, theta)?.iter().map(|r| r.len()).collect())
}

/// Calls `f(full_offset, block_offset)` for every position of the block.
pub(crate) fn for_each_in_block(
    shape: &[usize],
    bounds: &[Range<usize>],
    mut f: impl FnMut(usize, usize),
) {
    let block_shape: Vec<usize> = bounds.iter().map(|r| r.len()).collect();
    let st = strides(shape);
    let mut idx = vec![0; shape.len()];
    for block_flat in 0..element_count(&block_shape) {
        unravel(block_flat, &block_shape, &mut idx);
        let full: usize = idx
            .iter()
            .zip(bounds)
            .zip(&st)
            .map(|((&i, r), &stride)| (r.start + i) * stride)
            .sum();
        f(full, block_flat);
    }
}

/// A spectrum separated into its low-frequency block and the remainder.
#[derive(Clone, Debug)]
pub struct FrequencySplit {
    pub low_block: Spectrum,
    pub high_spectrum: Spectrum,
    pub config: SplitConfig,
    pub bounds: Vec<Range<usize>>,
}

impl FrequencySplit {
    pub fn source_shape(&self) -> &[usize] {
        self.high_spectrum.shape()
    }

    pub fn crop_shape(&self) -> &[usize] {
        self.low_block.shape()
    }

    /// Writes the low block back into the high spectrum.
    pub fn reassemble(&self) -> Spectrum {
        let mut full = self.high_spectrum.clone();
        let low = self.low_block.data();
        let shape = full.shape().to_vec();
        let data = full.data_mut();
        for_each_in_block(&shape, &self.bounds, |f, b| data[f] += low[b]);
        full
    }

    /// Low block zero-padded back to the source shape at its original offsets.
    pub fn padded_low(&self) -> Spectrum {
        let shape = self.source_shape().to_vec();
        let mut data = vec![Complex64::new(0.0, 0.0); element_count(&shape)];
        let low = self.low_block.data();
        for_each_in_block(&shape, &self.bounds, |f, b| data[f] = low[b]);
        Spectrum::new(shape, data).expect("shape is valid")
    }
}

pub fn split(s: &Spectrum, cfg: SplitConfig) -> Result<FrequencySplit> {
    let bounds = cfg.crop(s.shape())?;
    let block_shape: Vec<usize> = bounds.iter().map(|r| r.len()).collect();
    let mut high = s.clone();
    let mut low = vec![Complex64::new(0.0, 0.0); element_count(&block_shape)];
    let shape = s.shape().to_vec();
    let high_data = high.data_mut();
    for_each_in_block(&shape, &bounds, |f, b| {
        low[b] = high_data[f];
        high_data[f] = Complex64::new(0.0, 0.0);
    });
    Ok(FrequencySplit {
        low_block: Spectrum::new(block_shape, low)?,
        high_spectrum: high,
        config: cfg,
        bounds,
    })
}

/// Image-space high-frequency part at full shape.
pub fn high_image(fs: &FrequencySplit) -> Volume {
    dft_inverse(&fs.high_spectrum).volume
}

/// Image-space low-frequency part at crop shape.
///
/// The block is inverted as a standalone centered spectrum and rescaled by
/// `crop_len / source_len`, which makes it a band-limited downsampling of
/// the source: a constant image keeps its value.
pub fn low_image(fs: &FrequencySplit) -> Volume {
    let scale = fs.low_block.len() as f64 / element_count(fs.source_shape()) as f64;
    let v = dft_inverse(&fs.low_block).volume;
    let shape = v.shape().to_vec();
    Volume::new(shape, v.into_data().into_iter().map(|x| x * scale).collect())
        .expect("finite input gives finite output")
}

/// Low block zero-padded to the source shape and inverted; the blurred
/// counterpart of [`high_image`].
pub fn pad_and_invert(fs: &FrequencySplit) -> Volume {
    dft_inverse(&fs.padded_low()).volume
}

/// Convenience: normalized-domain split of a volume.
pub fn disentangle(v: &Volume, cfg: SplitConfig) -> Result<FrequencySplit> {
    split(&crate::volume::dft_forward(v), cfg)
}
