//! Real volumes, binary masks and centered complex spectra.
//!
//! All grids are stored row-major (last axis fastest). Spectra use the
//! centered convention: the zero frequency of an axis of length `S` sits at
//! index `S / 2`, so a low-frequency band is a plain hyper-rectangle around
//! the middle of the array.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{Error, Result};

/// Number of elements implied by a shape.
pub fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

/// Multi-index of a flat row-major offset.
pub fn unravel(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for axis in (0..shape.len()).rev() {
        out[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::InvalidVolume(format!(
            "expected 1 to 3 axes, got {}",
            shape.len()
        )));
    }
    if shape.iter().any(|&s| s == 0) {
        return Err(Error::InvalidVolume(format!("zero-length axis in {shape:?}")));
    }
    Ok(())
}

/// A real-valued image grid with per-axis spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: Vec<usize>,
    data: Vec<f64>,
    spacing: Vec<f64>,
}

impl Volume {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if data.len() != element_count(&shape) {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite value".into()));
        }
        let spacing = vec![1.0; shape.len()];
        Ok(Self {
            shape,
            data,
            spacing,
        })
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = element_count(&shape);
        Self::new(shape, vec![value; n])
    }

    /// Builds a volume by evaluating `f` at every multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(&shape)?;
        let n = element_count(&shape);
        let mut idx = vec![0; shape.len()];
        let data = (0..n)
            .map(|flat| {
                unravel(flat, &shape, &mut idx);
                f(&idx)
            })
            .collect();
        Self::new(shape, data)
    }

    pub fn with_spacing(mut self, spacing: Vec<f64>) -> Result<Self> {
        if spacing.len() != self.shape.len() || spacing.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidVolume(format!("invalid spacing {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Elementwise sum of two same-shape volumes.
    pub fn add(&self, other: &Volume) -> Result<Volume> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Volume {
            shape: self.shape.clone(),
            data,
            spacing: self.spacing.clone(),
        })
    }

    /// Relative L2 distance `||self - reference|| / ||reference||`.
    pub fn relative_l2(&self, reference: &Volume) -> f64 {
        let (num, den) = self
            .data
            .iter()
            .zip(&reference.data)
            .fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + b * b));
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}

/// A binary annotation grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        check_shape(&shape)?;
        if data.len() != element_count(&shape) {
            return Err(Error::InvalidVolume(format!(
                "mask length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidVolume("mask values must be 0 or 1".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn empty(shape: Vec<usize>) -> Result<Self> {
        let n = element_count(&shape);
        Self::new(shape, vec![0; n])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> bool) -> Result<Self> {
        check_shape(&shape)?;
        let mut idx = vec![0; shape.len()];
        let data = (0..element_count(&shape))
            .map(|flat| {
                unravel(flat, &shape, &mut idx);
                f(&idx) as u8
            })
            .collect();
        Self::new(shape, data)
    }

    /// Foreground where `values[i] > threshold`.
    pub fn threshold(shape: Vec<usize>, values: &[f64], threshold: f64) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| (v > threshold) as u8).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// Centered complex spectrum of a volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    shape: Vec<usize>,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        check_shape(&shape)?;
        if data.len() != element_count(&shape) {
            return Err(Error::InvalidVolume(format!(
                "spectrum length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Result of an inverse transform: the real part plus the largest imaginary
/// magnitude that was discarded.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub volume: Volume,
    pub max_imag: f64,
}

fn fft_all_axes(shape: &[usize], data: &mut [Complex64], direction: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let st = strides(shape);
    let n = data.len();
    for axis in 0..shape.len() {
        let len = shape[axis];
        if len == 1 {
            continue;
        }
        let fft = planner.plan_fft(len, direction);
        let stride = st[axis];
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // every line start: offsets whose index along `axis` is zero
        for start in 0..n {
            if (start / stride) % len != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, value) in line.iter().enumerate() {
                data[start + k * stride] = *value;
            }
        }
    }
}

/// Circularly shifts every axis by `shift(axis_len)` positions.
fn roll<T: Copy>(shape: &[usize], data: &[T], shift: impl Fn(usize) -> usize) -> Vec<T> {
    let st = strides(shape);
    let mut out = data.to_vec();
    let mut idx = vec![0; shape.len()];
    for (flat, value) in data.iter().enumerate() {
        unravel(flat, shape, &mut idx);
        let dest: usize = idx
            .iter()
            .zip(shape)
            .zip(&st)
            .map(|((&i, &s), &stride)| ((i + shift(s)) % s) * stride)
            .sum();
        out[dest] = *value;
    }
    out
}

/// Moves the zero frequency from index 0 to index `S / 2` on every axis.
pub fn fftshift<T: Copy>(shape: &[usize], data: &[T]) -> Vec<T> {
    roll(shape, data, |s| s / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Copy>(shape: &[usize], data: &[T]) -> Vec<T> {
    roll(shape, data, |s| s - s / 2)
}

/// Unnormalized forward DFT with the spectrum centered.
pub fn dft_forward(v: &Volume) -> Spectrum {
    let mut data: Vec<Complex64> = v.data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_all_axes(&v.shape, &mut data, FftDirection::Forward);
    Spectrum {
        shape: v.shape.clone(),
        data: fftshift(&v.shape, &data),
    }
}

/// Inverse DFT (scaled by `1/N`) of a centered spectrum.
pub fn dft_inverse(s: &Spectrum) -> Inversion {
    let mut data = ifftshift(&s.shape, &s.data);
    fft_all_axes(&s.shape, &mut data, FftDirection::Inverse);
    let scale = 1.0 / data.len() as f64;
    let mut max_imag = 0.0f64;
    let real = data
        .iter()
        .map(|c| {
            max_imag = max_imag.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    Inversion {
        volume: Volume {
            shape: s.shape.clone(),
            data: real,
            spacing: vec![1.0; s.shape.len()],
        },
        max_imag,
    }
}

/// Affine rescale so the minimum maps to 0 and the maximum to 1.
pub fn minmax_normalize(v: &Volume) -> Result<Volume> {
    let (lo, hi) = v.min_max();
    if !(hi > lo) {
        return Err(Error::DegenerateRange);
    }
    let span = hi - lo;
    let data = v
        .data
        .iter()
        .map(|&x| (x - lo) / span)
        .collect();
    Ok(Volume {
        shape: v.shape.clone(),
        data,
        spacing: v.spacing.clone(),
    })
}

/// Multilinear resampling with half-pixel-center alignment. Spacing is
/// scaled so the physical extent is preserved.
pub fn resize(v: &Volume, target_shape: &[usize]) -> Result<Volume> {
    check_shape(target_shape)?;
    if target_shape.len() != v.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "cannot resize {:?} to {:?}",
            v.shape, target_shape
        )));
    }
    if target_shape == v.shape.as_slice() {
        return Ok(v.clone());
    }
    let mut shape = v.shape.clone();
    let mut data = v.data.clone();
    for axis in 0..shape.len() {
        let (src_len, dst_len) = (shape[axis], target_shape[axis]);
        if src_len == dst_len {
            continue;
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = dst_len;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; element_count(&out_shape)];
        let scale = src_len as f64 / dst_len as f64;
        for j in 0..dst_len {
            let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
            let i0 = x.floor() as usize;
            let i1 = (i0 + 1).min(src_len - 1);
            let t = x - i0 as f64;
            for o in 0..outer {
                let src0 = (o * src_len + i0) * inner;
                let src1 = (o * src_len + i1) * inner;
                let dst = (o * dst_len + j) * inner;
                for k in 0..inner {
                    out[dst + k] = (1.0 - t) * data[src0 + k] + t * data[src1 + k];
                }
            }
        }
        shape = out_shape;
        data = out;
    }
    let spacing = v
        .spacing
        .iter()
        .zip(v.shape.iter().zip(target_shape))
        .map(|(sp, (&from, &to))| sp * from as f64 / to as f64)
        .collect();
    Ok(Volume {
        shape,
        data,
        spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(shape: Vec<usize>, seed: u64) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Volume::from_fn(shape, |_| rng.gen_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn constant_volume_has_only_dc() {
        let v = Volume::filled(vec![8, 8], 2.5).unwrap();
        let s = dft_forward(&v);
        for (i, c) in s.data().iter().enumerate() {
            if i == 4 * 8 + 4 {
                assert!((c.re - 64.0 * 2.5).abs() < 1e-12 && c.im.abs() < 1e-12);
            } else {
                assert!(c.norm() < 1e-12, "bin {i} = {c}");
            }
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let mut data = vec![Complex64::new(0.0, 0.0); 36];
        data[3 * 6 + 3] = Complex64::new(36.0, 0.0);
        let inv = dft_inverse(&Spectrum::new(vec![6, 6], data).unwrap());
        assert!(inv.volume.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn round_trip_16x16() {
        let v = random_volume(vec![16, 16], 1);
        let inv = dft_inverse(&dft_forward(&v));
        assert!(inv.volume.relative_l2(&v) < 1e-6);
        assert!(inv.max_imag <= 1e-9);
    }

    #[test]
    fn parseval_8x8x8() {
        let v = random_volume(vec![8, 8, 8], 2);
        let s = dft_forward(&v);
        let direct: f64 = v.data().iter().map(|x| x * x).sum();
        let spectral = s.energy() / v.len() as f64;
        assert!((direct - spectral).abs() / direct < 1e-6);
    }

    #[test]
    fn odd_lengths_round_trip() {
        let v = random_volume(vec![7, 5, 3], 3);
        assert!(dft_inverse(&dft_forward(&v)).volume.relative_l2(&v) < 1e-12);
    }

    #[test]
    fn shift_pairs_invert() {
        let shape = [5, 4];
        let data: Vec<usize> = (0..20).collect();
        assert_eq!(ifftshift(&shape, &fftshift(&shape, &data)), data);
    }

    #[test]
    fn minmax_examples() {
        let v = Volume::new(vec![3], vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&v).unwrap().data(), &[0.0, 0.5, 1.0]);
        let unit = Volume::new(vec![4], vec![0.0, 0.25, 1.0, 0.5]).unwrap();
        let again = minmax_normalize(&unit).unwrap();
        for (a, b) in again.data().iter().zip(unit.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = minmax_normalize(&random_volume(vec![9, 9], 4)).unwrap();
        assert_eq!(r.min_max(), (0.0, 1.0));
    }

    #[test]
    fn minmax_rejects_constant() {
        let v = Volume::filled(vec![4, 4], 3.0).unwrap();
        assert!(matches!(minmax_normalize(&v), Err(Error::DegenerateRange)));
    }

    #[test]
    fn resize_identity_and_constants() {
        let v = random_volume(vec![6, 5], 5);
        assert_eq!(resize(&v, &[6, 5]).unwrap(), v);
        let c = Volume::filled(vec![4, 4, 4], 0.7).unwrap();
        let r = resize(&c, &[7, 3, 9]).unwrap();
        assert!(r.data().iter().all(|x| (x - 0.7).abs() < 1e-12));
    }

    #[test]
    fn resize_checkerboard_matches_hand_weights() {
        // [[1,0],[0,1]] -> 4x4; source coordinates per output index are
        // clamp(-0.25)=0, 0.25, 0.75, clamp(1.25)=1, giving 1-D weights
        // row r: [1, 0.75, 0.25, 0] of the first sample.
        let v = Volume::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let r = resize(&v, &[4, 4]).unwrap();
        let w = [1.0, 0.75, 0.25, 0.0];
        for i in 0..4 {
            for j in 0..4 {
                let expected = w[i] * w[j] + (1.0 - w[i]) * (1.0 - w[j]);
                assert!((r.data()[i * 4 + j] - expected).abs() < 1e-12);
            }
        }
        assert_eq!(r.spacing(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Volume::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Volume::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Mask::new(vec![2], vec![0, 2]).is_err());
    }
}
