//! Grad-CAM attention maps, median-binarized masks, early-layer feature
//! response maps and averaged reference maps.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{self, Image, Tensor, TensorError};
use crate::tinynet::{ForwardTrace, NetError, Network};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CamError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("cannot average an empty list of maps")]
    EmptyAverage,
    #[error("maps come from different layers ({0} vs {1})")]
    LayerMismatch(usize, usize),
}

/// Which class score Grad-CAM differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSelect {
    /// The network's predicted class.
    Auto,
    Index(usize),
}

/// A normalized Grad-CAM heatmap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub map: Tensor,
    pub source_layer: usize,
    pub target_class: usize,
    pub normalized: bool,
}

impl AttentionMap {
    /// `true` when every value is zero ("attends nowhere").
    pub fn is_zero(&self) -> bool {
        self.map.values().iter().all(|&v| v == 0.0)
    }

    pub fn resized(&self, size: usize) -> AttentionMap {
        let (h, w) = self.map.hw().expect("attention maps are rank 2");
        if (h, w) == (size, size) {
            return self.clone();
        }
        let map = tensor::resize_bilinear(&self.map, size, size).expect("rank 2");
        AttentionMap {
            map: if self.normalized { tensor::min_max_normalize(&map) } else { map },
            ..self.clone()
        }
    }
}

/// `mask(i, j) = 1` iff the map value is strictly above the median.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub mask: Tensor,
    pub threshold: f64,
}

impl BinaryMask {
    pub fn ones(&self) -> usize {
        self.mask.values().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn from_bits(h: usize, w: usize, bits: &[bool]) -> Self {
        let values = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self {
            mask: Tensor::new(vec![h, w], values).expect("valid mask shape"),
            threshold: 0.5,
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.mask.values().iter().map(|&v| v == 1.0)
    }
}

/// `S(k, l) = sum_i |f_i(k, l)|` over one conv layer's post-ReLU filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureResponseMap {
    pub map: Tensor,
    pub source_layer: usize,
    pub as_distribution: bool,
}

/// Grad-CAM of `class` at conv layer `layer`, resampled to
/// `working_size x working_size` and min-max normalized.
///
/// Channel weights are the spatial means of the class-score gradient; the map
/// is `ReLU(sum_k alpha_k A_k)`. An all-zero map is returned as-is.
pub fn compute_gradcam(
    net: &Network,
    image: &Image,
    class: ClassSelect,
    layer: usize,
    working_size: usize,
) -> Result<AttentionMap, CamError> {
    let trace = net.forward(image)?;
    gradcam_from_trace(net, &trace, class, layer, working_size)
}

/// Grad-CAM from an existing forward trace of `net`.
pub fn gradcam_from_trace(
    net: &Network,
    trace: &ForwardTrace,
    class: ClassSelect,
    layer: usize,
    working_size: usize,
) -> Result<AttentionMap, CamError> {
    let target = match class {
        ClassSelect::Auto => trace.predicted_class(),
        ClassSelect::Index(c) => c,
    };
    let grads = net.class_score_gradients(trace, target, layer)?;
    let acts = &trace.conv[layer].post;
    let dims = acts.dims();
    let (filters, h, w) = (dims[0], dims[1], dims[2]);
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for k in 0..filters {
        let g = &grads.values()[k * plane..(k + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        let a = &acts.values()[k * plane..(k + 1) * plane];
        for (c, &v) in cam.iter_mut().zip(a) {
            *c += alpha * v;
        }
    }
    for c in &mut cam {
        if !(*c > 0.0) {
            *c = 0.0;
        }
    }
    let cam = Tensor::new(vec![h, w], cam)?;
    let resized = tensor::resize_bilinear(&cam, working_size, working_size)?;
    Ok(AttentionMap {
        map: tensor::min_max_normalize(&resized),
        source_layer: layer,
        target_class: target,
        normalized: true,
    })
}

/// Median of the values; an even count averages the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn binarize_median(map: &Tensor) -> BinaryMask {
    let threshold = median(map.values());
    BinaryMask {
        mask: map.map(|v| if v > threshold { 1.0 } else { 0.0 }),
        threshold,
    }
}

/// Feature response of conv layer `layer`, at the layer's own resolution.
pub fn feature_response(
    net: &Network,
    image: &Image,
    layer: usize,
    as_distribution: bool,
) -> Result<FeatureResponseMap, CamError> {
    if layer >= net.num_conv_layers() {
        return Err(NetError::InvalidLayer {
            index: layer,
            num_layers: net.num_conv_layers(),
        }
        .into());
    }
    let trace = net.forward(image)?;
    let map = sum_abs_filters(&trace.conv[layer].post)?;
    let map = if as_distribution {
        tensor::to_distribution(&map)?
    } else {
        map
    };
    Ok(FeatureResponseMap {
        map,
        source_layer: layer,
        as_distribution,
    })
}

/// Sums `|f_i|` over the leading (filter) axis of a `[filters, h, w]` tensor.
pub fn sum_abs_filters(acts: &Tensor) -> Result<Tensor, TensorError> {
    let dims = acts.dims();
    if dims.len() != 3 {
        return Err(TensorError::Rank {
            expected: 3,
            dims: dims.to_vec(),
        });
    }
    let plane = dims[1] * dims[2];
    let mut s = vec![0.0; plane];
    for f in acts.values().chunks(plane) {
        for (acc, &v) in s.iter_mut().zip(f) {
            *acc += v.abs();
        }
    }
    Tensor::new(vec![dims[1], dims[2]], s)
}

/// Elementwise mean of normalized maps, re-normalized to `[0, 1]`.
pub fn average_attention(maps: &[AttentionMap]) -> Result<AttentionMap, CamError> {
    let first = maps.first().ok_or(CamError::EmptyAverage)?;
    for m in &maps[1..] {
        first.map.ensure_same_shape(&m.map)?;
        if m.source_layer != first.source_layer {
            return Err(CamError::LayerMismatch(first.source_layer, m.source_layer));
        }
    }
    let mean = mean_maps(maps.iter().map(|m| &m.map))?;
    Ok(AttentionMap {
        map: tensor::min_max_normalize(&mean),
        source_layer: first.source_layer,
        target_class: first.target_class,
        normalized: true,
    })
}

pub(crate) fn mean_maps<'a>(maps: impl Iterator<Item = &'a Tensor>) -> Result<Tensor, CamError> {
    let mut acc: Option<(Vec<usize>, Vec<f64>)> = None;
    let mut n = 0usize;
    for m in maps {
        match acc.as_mut() {
            None => acc = Some((m.dims().to_vec(), m.values().to_vec())),
            Some((dims, sum)) => {
                if dims.as_slice() != m.dims() {
                    return Err(TensorError::ShapeMismatch {
                        left: dims.clone(),
                        right: m.dims().to_vec(),
                    }
                    .into());
                }
                for (s, &v) in sum.iter_mut().zip(m.values()) {
                    *s += v;
                }
            }
        }
        n += 1;
    }
    let (dims, sum) = acc.ok_or(CamError::EmptyAverage)?;
    Ok(Tensor::new(dims, sum.into_iter().map(|v| v / n as f64).collect())?)
}

/// Five-stop linear colormap (dark blue, cyan, green, yellow, red) for `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 128.0],
        [0.0, 255.0, 255.0],
        [0.0, 255.0, 0.0],
        [255.0, 255.0, 0.0],
        [255.0, 0.0, 0.0],
    ];
    let t = t.clamp(0.0, 1.0) * 4.0;
    let i = (libm::floor(t) as usize).min(3);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v = STOPS[i][c] + (STOPS[i + 1][c] - STOPS[i][c]) * f;
        *o = libm::round(v) as u8;
    }
    out
}

/// RGB overlay (row-major, 3 bytes per pixel) blending the grayscale image
/// 50/50 with the color-mapped attention. The map is resampled to the image
/// size when shapes differ.
pub fn overlay_rgb(image: &Image, att: &AttentionMap) -> Result<Vec<u8>, CamError> {
    let (h, w) = (image.height(), image.width());
    let map = if att.map.dims() == [h, w] {
        att.map.clone()
    } else {
        tensor::resize_bilinear(&att.map, h, w)?
    };
    let mut out = Vec::with_capacity(h * w * 3);
    for (&p, &a) in image.pixels().values().iter().zip(map.values()) {
        let gray = p * 255.0;
        let color = colormap(a);
        for c in color {
            out.push(libm::round(0.5 * gray + 0.5 * c as f64) as u8);
        }
    }
    Ok(out)
}
