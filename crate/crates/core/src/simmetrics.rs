//! Similarity metrics between a candidate map and a reference map, and the
//! seven-feature vector the verifier learns from.

use alloc::vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradcam::{binarize_median, BinaryMask};
use crate::tensor::{self, Tensor, TensorError};

/// Feature names in vector order.
pub const FEATURE_NAMES: [&str; 7] = ["iou", "dice", "ssim", "cosine", "pearson", "kl", "wasserstein"];

/// SSIM stabilizers for dynamic range `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Tolerance on `sum(p) == 1` for distribution inputs.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("zero-norm map (degenerate): cosine similarity is undefined")]
    ZeroNorm,
    #[error("constant map (degenerate): Pearson correlation is undefined")]
    ZeroVariance,
    #[error("input is not a distribution: sums to {0}")]
    NotNormalized(f64),
    #[error("wasserstein distance needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("epsilon must be positive, got {0}")]
    Epsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricConfig {
    /// KL guard added to the reference probabilities.
    pub epsilon: f64,
    /// Number of uniform intensity bins over `[0, 1]` for Wasserstein.
    pub histogram_bins: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            histogram_bins: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub iou: f64,
    pub dice: f64,
    pub ssim: f64,
    pub cosine: f64,
    pub pearson: f64,
    pub kl: f64,
    pub wasserstein: f64,
}

impl SimilarityVector {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.iou,
            self.dice,
            self.ssim,
            self.cosine,
            self.pearson,
            self.kl,
            self.wasserstein,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            iou: a[0],
            dice: a[1],
            ssim: a[2],
            cosine: a[3],
            pearson: a[4],
            kl: a[5],
            wasserstein: a[6],
        }
    }
}

/// Result of comparing one map pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub vector: SimilarityVector,
    /// Set when a documented fallback replaced an undefined metric.
    pub degenerate: bool,
}

fn mask_counts(a: &BinaryMask, b: &BinaryMask) -> Result<(usize, usize, usize), MetricError> {
    a.mask.ensure_same_shape(&b.mask)?;
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for (x, y) in a.bits().zip(b.bits()) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    Ok((inter, na, nb))
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    let (inter, na, nb) = mask_counts(a, b)?;
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2 |a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricError> {
    let (inter, na, nb) = mask_counts(a, b)?;
    let total = na + nb;
    Ok(if total == 0 { 1.0 } else { (2 * inter) as f64 / total as f64 })
}

struct Moments {
    mean_a: f64,
    mean_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn moments(a: &[f64], b: &[f64]) -> Moments {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mean_a,
        mean_b,
        var_a: var_a / n,
        var_b: var_b / n,
        cov: cov / n,
    }
}

/// Single-window SSIM from global means, (population) variances and covariance.
pub fn ssim_global(a: &Tensor, b: &Tensor) -> Result<f64, MetricError> {
    a.ensure_same_shape(b)?;
    let m = moments(a.values(), b.values());
    let num = (2.0 * m.mean_a * m.mean_b + SSIM_C1) * (2.0 * m.cov + SSIM_C2);
    let den = (m.mean_a * m.mean_a + m.mean_b * m.mean_b + SSIM_C1) * (m.var_a + m.var_b + SSIM_C2);
    Ok(num / den)
}

pub fn cosine(a: &Tensor, b: &Tensor) -> Result<f64, MetricError> {
    a.ensure_same_shape(b)?;
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    Ok((dot / (libm::sqrt(na) * libm::sqrt(nb))).clamp(-1.0, 1.0))
}

pub fn pearson(a: &Tensor, b: &Tensor) -> Result<f64, MetricError> {
    a.ensure_same_shape(b)?;
    let m = moments(a.values(), b.values());
    if m.var_a == 0.0 || m.var_b == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((m.cov / (libm::sqrt(m.var_a) * libm::sqrt(m.var_b))).clamp(-1.0, 1.0))
}

fn check_distribution(p: &Tensor) -> Result<(), MetricError> {
    let s = p.sum();
    if (s - 1.0).abs() > DISTRIBUTION_TOLERANCE || p.values().iter().any(|&v| v < 0.0) {
        return Err(MetricError::NotNormalized(s));
    }
    Ok(())
}

/// `sum_i p(i) ln(p(i) / (q(i) + epsilon))` in nats; zero-probability terms
/// of `p` contribute nothing.
pub fn kl_divergence(p: &Tensor, q: &Tensor, epsilon: f64) -> Result<f64, MetricError> {
    p.ensure_same_shape(q)?;
    if !(epsilon > 0.0) {
        return Err(MetricError::Epsilon(epsilon));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(p.values()
        .iter()
        .zip(q.values())
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * libm::log(pi / (qi + epsilon)))
        .sum())
}

/// 1-D earth mover's distance between two distributions over `B` bins at
/// positions `i / (B - 1)`: `sum_{i < B-1} |CDF_p(i) - CDF_q(i)| / (B - 1)`.
pub fn wasserstein_1d(p: &Tensor, q: &Tensor) -> Result<f64, MetricError> {
    p.ensure_same_shape(q)?;
    let bins = p.len();
    if bins < 2 {
        return Err(MetricError::TooFewBins(bins));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    let (mut cp, mut cq, mut total) = (0.0, 0.0, 0.0);
    for (&pi, &qi) in p.values()[..bins - 1].iter().zip(&q.values()[..bins - 1]) {
        cp += pi;
        cq += qi;
        total += (cp - cq).abs();
    }
    Ok(total / (bins - 1) as f64)
}

/// Normalized intensity histogram of `[0, 1]` values over `bins` uniform bins;
/// the value 1 falls in the last bin.
pub fn intensity_histogram(map: &Tensor, bins: usize) -> Result<Tensor, MetricError> {
    if bins < 2 {
        return Err(MetricError::TooFewBins(bins));
    }
    let mut counts = vec![0.0; bins];
    for &v in map.values() {
        let b = (libm::floor(v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let n = map.len() as f64;
    Ok(Tensor::new(vec![bins], counts.into_iter().map(|c| c / n).collect())?)
}

/// Spatial distribution of a non-negative map; an all-zero map becomes uniform.
pub fn spatial_distribution(map: &Tensor) -> Result<(Tensor, bool), MetricError> {
    match tensor::to_distribution(map) {
        Ok(d) => Ok((d, false)),
        Err(TensorError::ZeroMass) => Ok((tensor::uniform_distribution(map.dims()), true)),
        Err(e) => Err(e.into()),
    }
}

/// All seven metrics of a normalized candidate map against a normalized
/// reference map of the same shape.
///
/// Masks come from median binarization. KL and Wasserstein treat the
/// candidate as `p` and the reference as `q`: KL over the per-pixel spatial
/// distributions, Wasserstein over intensity histograms. Undefined metrics
/// fall back (zero-norm cosine -> 0, constant-map Pearson -> 0, all-zero map
/// -> uniform spatial distribution) and mark the comparison degenerate.
pub fn compute_all(candidate: &Tensor, reference: &Tensor, config: &MetricConfig) -> Result<Comparison, MetricError> {
    candidate.ensure_same_shape(reference)?;
    let mut degenerate = false;
    let mc = binarize_median(candidate);
    let mr = binarize_median(reference);
    let iou = iou(&mc, &mr)?;
    let dice = dice(&mc, &mr)?;
    let ssim = ssim_global(candidate, reference)?;
    let cosine = match cosine(candidate, reference) {
        Ok(v) => v,
        Err(MetricError::ZeroNorm) => {
            degenerate = true;
            0.0
        }
        Err(e) => return Err(e),
    };
    let pearson = match pearson(candidate, reference) {
        Ok(v) => v,
        Err(MetricError::ZeroVariance) => {
            degenerate = true;
            0.0
        }
        Err(e) => return Err(e),
    };
    let (pc, dc) = spatial_distribution(candidate)?;
    let (pr, dr) = spatial_distribution(reference)?;
    degenerate |= dc | dr;
    let kl = kl_divergence(&pc, &pr, config.epsilon)?;
    let hc = intensity_histogram(candidate, config.histogram_bins)?;
    let hr = intensity_histogram(reference, config.histogram_bins)?;
    let wasserstein = wasserstein_1d(&hc, &hr)?;
    Ok(Comparison {
        vector: SimilarityVector {
            iou,
            dice,
            ssim,
            cosine,
            pearson,
            kl,
            wasserstein,
        },
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, ones: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; h * w];
        for &(i, j) in ones {
            bits[i * w + j] = true;
        }
        BinaryMask::from_bits(h, w, &bits)
    }

    #[test]
    fn overlap_examples() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        assert_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = mask(2, 2, &[(1, 0)]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        let empty = mask(2, 2, &[]);
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert!(iou(&a, &mask(1, 4, &[])).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = v(&[0.1, 0.5, 0.9, 0.3]);
        assert!((ssim_global(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let s = ssim_global(&Tensor::zeros(&[4]), &Tensor::filled(&[4], 1.0)).unwrap();
        let expected = SSIM_C1 * SSIM_C2 / ((1.0 + SSIM_C1) * SSIM_C2);
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 9.999e-5).abs() < 1e-8);
        let inv = a.map(|x| 1.0 - x);
        assert!(ssim_global(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.2, 0.4, 0.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &a),
            Err(MetricError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
    }

    #[test]
    fn cosine_zero_norm_is_degenerate() {
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(MetricError::ZeroNorm));
    }

    #[test]
    fn pearson_examples() {
        let a = v(&[0.1, 0.7, 0.3, 0.9]);
        let b = a.map(|x| 2.0 * x + 0.1);
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = a.map(|x| 1.0 - x);
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&v(&[0.0, 1.0, 2.0]), &v(&[0.0, 0.0, 1.0])).unwrap();
        // cov = 1/3, var_a = 2/3, var_b = 2/9 -> r = sqrt(3)/2
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &Tensor::filled(&[4], 0.2)), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn kl_examples() {
        let p = v(&[0.2, 0.3, 0.5]);
        assert!(kl_divergence(&p, &p, 1e-10).unwrap() <= 1e-9);
        let k = kl_divergence(&v(&[1.0, 0.0]), &v(&[0.5, 0.5]), 1e-10).unwrap();
        assert!((k - core::f64::consts::LN_2).abs() < 1e-9);
        let k = kl_divergence(&v(&[0.5, 0.5]), &v(&[0.25, 0.75]), 1e-10).unwrap();
        let expected = 0.5 * libm::log(2.0) + 0.5 * libm::log(2.0 / 3.0);
        assert!((k - expected).abs() < 1e-9);
        assert!((k - 0.143841).abs() < 1e-6);
        assert!(matches!(
            kl_divergence(&v(&[0.5, 0.6]), &p.clone().reshape(vec![3]).unwrap(), 1e-10),
            Err(MetricError::Tensor(_))
        ));
        assert!(matches!(
            kl_divergence(&v(&[0.5, 0.6]), &v(&[0.5, 0.5]), 1e-10),
            Err(MetricError::NotNormalized(_))
        ));
        assert_eq!(kl_divergence(&p, &p, 0.0), Err(MetricError::Epsilon(0.0)));
    }

    #[test]
    fn wasserstein_examples() {
        let p = v(&[0.2, 0.3, 0.5]);
        assert_eq!(wasserstein_1d(&p, &p).unwrap(), 0.0);
        let mut first = vec![0.0; 10];
        first[0] = 1.0;
        let mut last = vec![0.0; 10];
        last[9] = 1.0;
        assert!((wasserstein_1d(&v(&first), &v(&last)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(wasserstein_1d(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 0.0, 1.0])).unwrap(), 1.0);
        assert_eq!(wasserstein_1d(&v(&[1.0, 0.0, 0.0]), &v(&[0.0, 1.0, 0.0])).unwrap(), 0.5);
        assert_eq!(wasserstein_1d(&v(&[1.0]), &v(&[1.0])), Err(MetricError::TooFewBins(1)));
    }

    #[test]
    fn histogram_places_one_in_last_bin() {
        let h = intensity_histogram(&v(&[0.0, 0.5, 1.0, 0.99]), 4).unwrap();
        assert_eq!(h.values(), &[0.25, 0.0, 0.25, 0.5]);
    }

    #[test]
    fn compute_all_identity() {
        let m = Tensor::from_fn2(4, 4, |i, j| ((i * 4 + j) as f64) / 15.0);
        let c = compute_all(&m, &m, &MetricConfig::default()).unwrap();
        let s = c.vector;
        assert!(!c.degenerate);
        assert_eq!((s.iou, s.dice), (1.0, 1.0));
        assert!((s.ssim - 1.0).abs() < 1e-12);
        assert!((s.cosine - 1.0).abs() < 1e-12);
        assert!((s.pearson - 1.0).abs() < 1e-12);
        assert!(s.kl <= 0.0 && s.kl >= -1e-10 * 16.0);
        assert_eq!(s.wasserstein, 0.0);
    }

    #[test]
    fn compute_all_zero_candidate_uses_fallbacks() {
        let r = Tensor::from_fn2(4, 4, |i, j| ((i + j) as f64) / 6.0);
        let c = compute_all(&Tensor::zeros(&[4, 4]), &r, &MetricConfig::default()).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.vector.iou, 0.0);
        assert_eq!(c.vector.cosine, 0.0);
        assert_eq!(c.vector.pearson, 0.0);
        let (pr, _) = spatial_distribution(&r).unwrap();
        let expected = kl_divergence(&tensor::uniform_distribution(&[4, 4]), &pr, 1e-10).unwrap();
        assert_eq!(c.vector.kl, expected);
        assert!(c.vector.to_array().iter().all(|x| x.is_finite()));
    }

    fn dist(n: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(0.001f64..1.0, n).prop_map(|w| {
            let s: f64 = w.iter().sum();
            v(&w.iter().map(|x| x / s).collect::<Vec<_>>())
        })
    }

    fn bits(n: usize) -> impl Strategy<Value = BinaryMask> {
        proptest::collection::vec(any::<bool>(), n).prop_map(move |b| BinaryMask::from_bits(1, n, &b))
    }

    fn unit_map(n: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(0.0f64..=1.0, n).prop_map(|w| v(&w))
    }

    proptest! {
        #[test]
        fn set_metrics_symmetric_and_related(a in bits(24), b in bits(24)) {
            let (i1, i2) = (iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            let (d1, d2) = (dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            prop_assert_eq!(i1, i2);
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&i1) && (0.0..=1.0).contains(&d1));
            prop_assert!(d1 >= i1);
            // 2 iou / (1 + iou) = 2I / (U + I) as a rational; dice = 2I / (|a| + |b|).
            let (inter, na, nb) = mask_counts(&a, &b).unwrap();
            let union = na + nb - inter;
            if union > 0 {
                prop_assert_eq!(2 * inter * (na + nb), 2 * inter * (union + inter));
                prop_assert!((d1 - 2.0 * i1 / (1.0 + i1)).abs() <= 1e-15);
            }
        }

        #[test]
        fn real_metrics_symmetric_and_bounded(a in unit_map(16), b in unit_map(16)) {
            let s1 = ssim_global(&a, &b).unwrap();
            prop_assert!((s1 - ssim_global(&b, &a).unwrap()).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s1));
            if let (Ok(c1), Ok(c2)) = (cosine(&a, &b), cosine(&b, &a)) {
                prop_assert!((c1 - c2).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&c1));
            }
            if let (Ok(r1), Ok(r2)) = (pearson(&a, &b), pearson(&b, &a)) {
                prop_assert!((r1 - r2).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r1));
            }
        }

        #[test]
        fn pearson_positive_affine_invariance(a in unit_map(12), b in unit_map(12), s in 0.1f64..10.0, t in -5.0f64..5.0) {
            if let Ok(r) = pearson(&a, &b) {
                let r2 = pearson(&a.map(|x| s * x + t), &b).unwrap();
                prop_assert!((r - r2).abs() <= 1e-12);
            }
        }

        #[test]
        fn divergence_properties(p in dist(10), q in dist(10), r in dist(10)) {
            let k = kl_divergence(&p, &q, 1e-10).unwrap();
            prop_assert!(k >= -1e-10 * 10.0);
            let w = wasserstein_1d(&p, &q).unwrap();
            prop_assert!(w >= 0.0 && w <= 1.0 + 1e-12);
            prop_assert!((w - wasserstein_1d(&q, &p).unwrap()).abs() <= 1e-12);
            let (wpr, wrq) = (wasserstein_1d(&p, &r).unwrap(), wasserstein_1d(&r, &q).unwrap());
            prop_assert!(w <= wpr + wrq + 1e-12);
        }
    }

    #[test]
    fn kl_is_asymmetric_somewhere() {
        let p = v(&[0.7, 0.2, 0.1]);
        let q = v(&[0.2, 0.2, 0.6]);
        let (a, b) = (kl_divergence(&p, &q, 1e-10).unwrap(), kl_divergence(&q, &p, 1e-10).unwrap());
        assert!((a - b).abs() > 1e-3);
    }
}
