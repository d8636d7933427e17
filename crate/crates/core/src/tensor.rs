//! Dense row-major `f64` tensors and the grayscale image type built on them.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor must have at least one dimension")]
    NoDims,
    #[error("tensor dims must be positive, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("dims {dims:?} need {expected} values, got {got}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("expected a rank-{expected} tensor, got dims {dims:?}")]
    Rank { expected: usize, dims: Vec<usize> },
    #[error("negative value {value} at flat index {index}")]
    Negative { index: usize, value: f64 },
    #[error("all-zero tensor cannot be normalized to a distribution")]
    ZeroMass,
    #[error("pixel value {value} at flat index {index} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("image must be non-empty")]
    EmptyImage,
}

/// Dense n-dimensional array of finite `f64` values stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = TensorError;
    fn try_from(raw: RawTensor) -> Result<Self, Self::Error> {
        Tensor::new(raw.dims, raw.values)
    }
}

impl From<Tensor> for RawTensor {
    fn from(t: Tensor) -> Self {
        RawTensor {
            dims: t.dims,
            values: t.values,
        }
    }
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self, TensorError> {
        if dims.is_empty() {
            return Err(TensorError::NoDims);
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroExtent(dims));
        }
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { dims, values })
    }

    /// Builds a tensor whose shape and finiteness the caller already guarantees.
    pub(crate) fn from_parts(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { dims, values }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        assert!(!dims.is_empty() && dims.iter().all(|&d| d > 0));
        let n = dims.iter().product();
        Self::from_parts(dims.to_vec(), vec![value; n])
    }

    pub fn from_fn2(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(vec![height, width], values).expect("from_fn2 produced an invalid tensor")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(height, width)` of a rank-2 tensor.
    pub fn hw(&self) -> Result<(usize, usize), TensorError> {
        match self.dims.as_slice() {
            &[h, w] => Ok((h, w)),
            _ => Err(TensorError::Rank {
                expected: 2,
                dims: self.dims.clone(),
            }),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dims[1] + j]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Applies `f` elementwise. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        assert!(values.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self::from_parts(self.dims.clone(), values)
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(dims, self.values)
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch {
                left: self.dims.clone(),
                right: other.dims.clone(),
            });
        }
        Ok(())
    }
}

/// Corner-aligned bilinear resampling of a rank-2 tensor.
///
/// Output pixel `(i, j)` samples the input at
/// `(i * (H - 1) / (outH - 1), j * (W - 1) / (outW - 1))`; a target extent of
/// one samples row/column zero. Each interpolated value is clamped to the
/// range of the pixels it was blended from, so the output never leaves
/// `[min(t), max(t)]`.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (h, w) = t.hw()?;
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::ZeroExtent(vec![out_h, out_w]));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(t.clone());
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<(usize, usize, f64)> = (0..out_w).map(|j| coord(j, w, out_w)).collect();
    let mut values = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = coord(i, h, out_h);
        for &(x0, x1, fx) in &cols {
            let top = lerp(t.at2(y0, x0), t.at2(y0, x1), fx);
            let bottom = lerp(t.at2(y1, x0), t.at2(y1, x1), fx);
            values.push(lerp(top, bottom, fy));
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w], values))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        return a;
    }
    let v = a + (b - a) * t;
    v.clamp(a.min(b), a.max(b))
}

/// Scales values to `[0, 1]` via `(x - min) / (max - min)`; a constant
/// tensor maps to all zeros.
pub fn min_max_normalize(t: &Tensor) -> Tensor {
    let lo = t.min();
    let hi = t.max();
    let range = hi - lo;
    if range <= 0.0 {
        return Tensor::zeros(t.dims());
    }
    let values = t.values.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect();
    Tensor::from_parts(t.dims.clone(), values)
}

/// Divides a non-negative tensor by its sum.
pub fn to_distribution(t: &Tensor) -> Result<Tensor, TensorError> {
    if let Some((index, &value)) = t.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(TensorError::Negative { index, value });
    }
    let total = t.sum();
    if total <= 0.0 {
        return Err(TensorError::ZeroMass);
    }
    let values = t.values.iter().map(|&v| v / total).collect();
    Ok(Tensor::from_parts(t.dims.clone(), values))
}

/// Uniform distribution over a tensor of the given shape.
pub fn uniform_distribution(dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::filled(dims, 1.0 / n as f64)
}

/// Rotates a rank-2 tensor counter-clockwise about its centre using
/// nearest-neighbour sampling; pixels that map outside the source are zero.
pub fn rotate_nearest(t: &Tensor, degrees: f64) -> Result<Tensor, TensorError> {
    let (h, w) = t.hw()?;
    let theta = degrees.to_radians();
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    Ok(Tensor::from_fn2(h, w, |i, j| {
        let dy = i as f64 - cy;
        let dx = j as f64 - cx;
        // Inverse map: rotate the output coordinate clockwise back into the source.
        let sy = libm::round(c * dy - s * dx + cy);
        let sx = libm::round(s * dy + c * dx + cx);
        if sy < 0.0 || sx < 0.0 || sy > (h - 1) as f64 || sx > (w - 1) as f64 {
            0.0
        } else {
            t.at2(sy as usize, sx as usize)
        }
    }))
}

/// A single-channel image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pixels: Tensor,
}

impl Image {
    pub fn new(pixels: Tensor) -> Result<Self, TensorError> {
        pixels.hw()?;
        if let Some((index, &value)) = pixels
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TensorError::PixelRange { index, value });
        }
        Ok(Self { pixels })
    }

    /// Linearly maps integer sample levels `0..=max_level` to `[0, 1]`.
    pub fn from_levels(
        height: usize,
        width: usize,
        levels: &[u32],
        max_level: u32,
    ) -> Result<Self, TensorError> {
        if height == 0 || width == 0 || max_level == 0 {
            return Err(TensorError::EmptyImage);
        }
        let scale = max_level as f64;
        let values = levels.iter().map(|&l| (l.min(max_level)) as f64 / scale).collect();
        Self::new(Tensor::new(vec![height, width], values)?)
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[1]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    /// Quantizes to 8-bit levels (round half up).
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .values()
            .iter()
            .map(|&v| libm::round(v * 255.0) as u8)
            .collect()
    }

    pub fn rotated(&self, degrees: f64) -> Image {
        let rotated = rotate_nearest(&self.pixels, degrees).expect("image is rank 2");
        Image { pixels: rotated }
    }

    pub fn resized(&self, size_h: usize, size_w: usize) -> Image {
        let pixels = resize_bilinear(&self.pixels, size_h, size_w).expect("image is rank 2");
        Image { pixels }
    }
}
