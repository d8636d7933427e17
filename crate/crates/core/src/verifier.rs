//! End-to-end verification: reference building, record extraction, verifier
//! fitting, verdicts, the rotation probe and garbage-class evaluation.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec::ParallelMap;
use crate::forest::{
    self, classification_report, ClassificationReport, EvalReport, FeatureDataset, ForestConfig, ForestError,
    ForestModel,
};
use crate::gradcam::{self, mean_maps, CamError, ClassSelect};
use crate::simmetrics::{self, MetricConfig, MetricError, SimilarityVector};
use crate::tensor::{self, Image, Tensor, TensorError};
use crate::tinynet::{self, ForwardTrace, NetError, Network, NetworkConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Cam(#[from] CamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("class {0} has no qualifying reference samples")]
    EmptyClass(usize),
    #[error("reference dataset is empty")]
    EmptyDataset,
    #[error("{side} record list is empty")]
    EmptySide { side: &'static str },
    #[error("sample id '{0}' appears more than once")]
    DuplicateId(String),
    #[error("method {method} needs conv layer {layer}, which the reference bundle does not hold")]
    MissingLayer { method: Method, layer: usize },
    #[error("method {0} does not produce similarity records")]
    NotSimilarity(Method),
    #[error("no images to verify")]
    NoImages,
    #[error("no garbage samples supplied")]
    NoGarbage,
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// How a candidate is compared against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    GradCam,
    /// Feature-response maps of conv layer `layer` (0-based; displayed 1-based).
    FeatureMap { layer: usize },
    /// Garbage-class posterior of a `k + 1`-class network.
    Garbage,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::GradCam => f.write_str("gradcam"),
            Method::FeatureMap { layer } => write!(f, "featuremap-L{}", layer + 1),
            Method::Garbage => f.write_str("garbage"),
        }
    }
}

impl FromStr for Method {
    type Err = VerifyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradcam" => Ok(Method::GradCam),
            "garbage" => Ok(Method::Garbage),
            _ => s
                .strip_prefix("featuremap-L")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| Method::FeatureMap { layer: n - 1 })
                .ok_or_else(|| VerifyError::Invalid(format!("unknown method '{s}'"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = VerifyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    PerClass,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReferenceOptions {
    pub working_size: usize,
    pub averaging: Averaging,
    /// Only average samples the reference model classifies correctly.
    pub correct_only: bool,
    /// Grad-CAM layer; `None` selects the last conv layer.
    pub gradcam_layer: Option<usize>,
    /// Conv layers (0-based) whose feature responses are stored.
    pub feature_layers: Vec<usize>,
    pub metric: MetricConfig,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            working_size: 224,
            averaging: Averaging::PerClass,
            correct_only: true,
            gradcam_layer: None,
            feature_layers: vec![0, 1],
            metric: MetricConfig::default(),
        }
    }
}

/// Averaged feature-response references for one conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LayerReference {
    pub layer: usize,
    /// One map per class (per-class averaging) or a single map.
    pub maps: Vec<Tensor>,
    pub global: Tensor,
}

/// Reference maps of a trusted model plus everything needed to reproduce
/// a comparison against them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReferenceBundle {
    /// One normalized GAM per class (per-class averaging) or a single map.
    pub gams: Vec<Tensor>,
    /// Average over every qualifying sample regardless of class.
    pub global_gam: Tensor,
    pub layer_refs: Vec<LayerReference>,
    pub working_size: usize,
    pub metric: MetricConfig,
    pub averaging: Averaging,
    pub correct_only: bool,
    pub gradcam_layer: usize,
    pub num_classes: usize,
    pub samples_per_class: Vec<usize>,
    pub model_fingerprint: String,
}

impl ReferenceBundle {
    fn pick<'a>(per_class: &'a [Tensor], global: &'a Tensor, averaging: Averaging, class: usize) -> (&'a Tensor, bool) {
        match averaging {
            Averaging::Global => (global, false),
            Averaging::PerClass => match per_class.get(class) {
                Some(m) => (m, false),
                None => (global, true),
            },
        }
    }

    /// Reference GAM for a predicted class; `true` when the class is unknown
    /// to the reference and the global map was used instead.
    pub fn gam_for(&self, class: usize) -> (&Tensor, bool) {
        Self::pick(&self.gams, &self.global_gam, self.averaging, class)
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerReference> {
        self.layer_refs.iter().find(|l| l.layer == layer)
    }

    pub fn layer_map_for(&self, layer: usize, class: usize) -> Option<(&Tensor, bool)> {
        self.layer(layer)
            .map(|l| Self::pick(&l.maps, &l.global, self.averaging, class))
    }
}

/// Hex SHA-256 of the network config's geometry and every parameter (little-endian).
pub fn model_fingerprint(net: &Network) -> String {
    let mut h = Sha256::new();
    h.update((net.config.input_size as u64).to_le_bytes());
    for l in &net.config.conv_layers {
        for v in [l.filters, l.kernel, l.stride, l.pool_after as usize] {
            h.update((v as u64).to_le_bytes());
        }
    }
    h.update((net.config.hidden_units as u64).to_le_bytes());
    h.update((net.config.num_classes as u64).to_le_bytes());
    for v in net.params.flatten() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn fit_image(net: &Network, image: &Image) -> Image {
    let s = net.config.input_size;
    if image.height() == s && image.width() == s {
        image.clone()
    } else {
        image.resized(s, s)
    }
}

/// Feature response of `layer` from a trace, resampled to the working size and min-max normalized.
pub fn response_map(trace: &ForwardTrace, layer: usize, working_size: usize) -> Result<Tensor, VerifyError> {
    let conv = trace.conv.get(layer).ok_or(NetError::InvalidLayer {
        index: layer,
        num_layers: trace.conv.len(),
    })?;
    let s = gradcam::sum_abs_filters(&conv.post)?;
    let s = tensor::resize_bilinear(&s, working_size, working_size)?;
    Ok(tensor::min_max_normalize(&s))
}

struct SampleMaps {
    predicted: usize,
    gam: Tensor,
    layers: Vec<Tensor>,
}

impl SampleMaps {
    /// `None` selects the GAM, `Some(k)` the k-th stored feature layer.
    fn get(&self, select: Option<usize>) -> &Tensor {
        match select {
            None => &self.gam,
            Some(k) => &self.layers[k],
        }
    }
}

/// Averages GAMs and feature responses of `refnet` over `dataset`.
pub fn build_reference<E: ParallelMap>(
    exec: &E,
    refnet: &Network,
    dataset: &[(Image, usize)],
    options: &ReferenceOptions,
) -> Result<ReferenceBundle, VerifyError> {
    if dataset.is_empty() {
        return Err(VerifyError::EmptyDataset);
    }
    if options.working_size == 0 {
        return Err(VerifyError::Invalid("working size must be at least 1".into()));
    }
    let num_classes = refnet.num_classes();
    let gradcam_layer = options.gradcam_layer.unwrap_or(refnet.config.last_conv_layer());
    for &l in options.feature_layers.iter().chain(core::iter::once(&gradcam_layer)) {
        if l >= refnet.num_conv_layers() {
            return Err(NetError::InvalidLayer {
                index: l,
                num_layers: refnet.num_conv_layers(),
            }
            .into());
        }
    }
    if let Some((_, l)) = dataset.iter().find(|(_, l)| *l >= num_classes) {
        return Err(NetError::InvalidClass {
            index: *l,
            num_classes,
        }
        .into());
    }
    let size = options.working_size;
    let per_sample: Vec<Result<SampleMaps, VerifyError>> = exec.map_indexed(dataset.len(), |i| {
        let (image, label) = &dataset[i];
        let trace = refnet.forward(&fit_image(refnet, image))?;
        let gam = gradcam::gradcam_from_trace(refnet, &trace, ClassSelect::Index(*label), gradcam_layer, size)?;
        let layers = options
            .feature_layers
            .iter()
            .map(|&l| response_map(&trace, l, size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SampleMaps {
            predicted: trace.predicted_class(),
            gam: gam.map,
            layers,
        })
    });
    let mut samples = Vec::with_capacity(dataset.len());
    for (r, (_, label)) in per_sample.into_iter().zip(dataset) {
        let m = r?;
        if !options.correct_only || m.predicted == *label {
            samples.push((*label, m));
        }
    }

    let mut samples_per_class = vec![0usize; num_classes];
    for (label, _) in &samples {
        samples_per_class[*label] += 1;
    }
    if samples.is_empty() {
        return Err(VerifyError::EmptyClass(0));
    }
    if options.averaging == Averaging::PerClass {
        if let Some(c) = samples_per_class.iter().position(|&n| n == 0) {
            return Err(VerifyError::EmptyClass(c));
        }
    }
    let average = |select: Option<usize>, class: Option<usize>| -> Result<Tensor, VerifyError> {
        let maps = samples
            .iter()
            .filter(|(l, _)| class.is_none_or(|c| c == *l))
            .map(|(_, m)| m.get(select));
        Ok(tensor::min_max_normalize(&mean_maps(maps)?))
    };
    let per_class_maps = |select: Option<usize>| -> Result<Vec<Tensor>, VerifyError> {
        match options.averaging {
            Averaging::PerClass => (0..num_classes).map(|c| average(select, Some(c))).collect(),
            Averaging::Global => Ok(vec![average(select, None)?]),
        }
    };
    let gams = per_class_maps(None)?;
    let global_gam = average(None, None)?;
    let mut layer_refs = Vec::with_capacity(options.feature_layers.len());
    for (k, &layer) in options.feature_layers.iter().enumerate() {
        layer_refs.push(LayerReference {
            layer,
            maps: per_class_maps(Some(k))?,
            global: average(Some(k), None)?,
        });
    }
    Ok(ReferenceBundle {
        gams,
        global_gam,
        layer_refs,
        working_size: size,
        metric: options.metric,
        averaging: options.averaging,
        correct_only: options.correct_only,
        gradcam_layer,
        num_classes,
        samples_per_class,
        model_fingerprint: model_fingerprint(refnet),
    })
}

/// Similarity features of one candidate/image pair. `label` is 1 for
/// "tested on a model trained on similar data", 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationRecord {
    pub sample_id: String,
    pub features: SimilarityVector,
    pub degenerate: bool,
    pub label: Option<u8>,
    pub predicted_class: usize,
}

/// Compares `candidate`'s map for `image` against the reference map of the
/// candidate's predicted class. Degenerate maps are flagged, never fatal.
pub fn extract_record(
    candidate: &Network,
    image: &Image,
    reference: &ReferenceBundle,
    method: Method,
    sample_id: &str,
) -> Result<VerificationRecord, VerifyError> {
    let trace = candidate.forward(&fit_image(candidate, image))?;
    let predicted = trace.predicted_class();
    let size = reference.working_size;
    let (cand_map, (ref_map, fallback)) = match method {
        Method::GradCam => {
            let layer = candidate.config.last_conv_layer();
            let att = gradcam::gradcam_from_trace(candidate, &trace, ClassSelect::Auto, layer, size)?;
            (att.map, reference.gam_for(predicted))
        }
        Method::FeatureMap { layer } => {
            let r = reference
                .layer_map_for(layer, predicted)
                .ok_or(VerifyError::MissingLayer { method, layer })?;
            (response_map(&trace, layer, size)?, r)
        }
        Method::Garbage => return Err(VerifyError::NotSimilarity(method)),
    };
    let cmp = simmetrics::compute_all(&cand_map, ref_map, &reference.metric)?;
    Ok(VerificationRecord {
        sample_id: sample_id.to_string(),
        features: cmp.vector,
        degenerate: cmp.degenerate || fallback,
        label: None,
        predicted_class: predicted,
    })
}

/// Extracts records for many images through `exec`; ids pair with images.
pub fn extract_records<E: ParallelMap>(
    exec: &E,
    candidate: &Network,
    images: &[(String, Image)],
    reference: &ReferenceBundle,
    method: Method,
    label: Option<u8>,
) -> Result<Vec<VerificationRecord>, VerifyError> {
    exec.map_indexed(images.len(), |i| {
        let (id, image) = &images[i];
        extract_record(candidate, image, reference, method, id).map(|mut r| {
            r.label = label;
            r
        })
    })
    .into_iter()
    .collect()
}

/// Labels aligned records 1 and misaligned records 0, ordered by sample id.
pub fn assemble_dataset(
    aligned: &[VerificationRecord],
    misaligned: &[VerificationRecord],
) -> Result<(Vec<VerificationRecord>, FeatureDataset), VerifyError> {
    if aligned.is_empty() {
        return Err(VerifyError::EmptySide { side: "aligned" });
    }
    if misaligned.is_empty() {
        return Err(VerifyError::EmptySide { side: "misaligned" });
    }
    let mut rows: Vec<VerificationRecord> = aligned
        .iter()
        .map(|r| VerificationRecord {
            label: Some(1),
            ..r.clone()
        })
        .chain(misaligned.iter().map(|r| VerificationRecord {
            label: Some(0),
            ..r.clone()
        }))
        .collect();
    let mut seen = BTreeSet::new();
    for r in &rows {
        if !seen.insert(r.sample_id.as_str()) {
            return Err(VerifyError::DuplicateId(r.sample_id.clone()));
        }
    }
    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let data = records_to_dataset(&rows)?;
    Ok((rows, data))
}

/// Dataset from already-labeled records (unlabeled records are rejected).
pub fn records_to_dataset(rows: &[VerificationRecord]) -> Result<FeatureDataset, VerifyError> {
    let pairs = rows
        .iter()
        .map(|r| {
            r.label
                .map(|l| (r.features, l))
                .ok_or_else(|| VerifyError::Invalid(format!("record '{}' has no label", r.sample_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureDataset::from_similarity(&pairs)?)
}

/// Cross-validated report over `folds` stratified folds plus a final model
/// refit on all data.
pub fn fit_verifier<E: ParallelMap>(
    exec: &E,
    data: &FeatureDataset,
    config: &ForestConfig,
    folds: usize,
    threshold: f64,
) -> Result<(ForestModel, EvalReport), VerifyError> {
    let (_, report) = forest::cross_validate(exec, config, data, folds, threshold)?;
    let model = ForestModel::fit_with(exec, config, data)?;
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum VerdictDetails {
    Similarity { features: SimilarityVector, degenerate: bool },
    Posterior { probabilities: Vec<f64>, predicted_class: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub sample_id: String,
    pub accept: bool,
    pub probability: f64,
    pub method: Method,
    pub details: VerdictDetails,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetVerdict {
    pub verdicts: Vec<Verdict>,
    pub accepted_fraction: f64,
    pub quorum: f64,
    pub accept: bool,
}

/// What a verdict is computed from.
pub enum Judge<'a> {
    /// Similarity features scored by a fitted verifier.
    Forest {
        reference: &'a ReferenceBundle,
        model: &'a ForestModel,
    },
    /// The last class of the candidate is the garbage class.
    GarbageClass,
}

/// Per-image verdicts and the dataset verdict (`accepted fraction >= quorum`).
pub fn verify<E: ParallelMap>(
    exec: &E,
    candidate: &Network,
    images: &[(String, Image)],
    judge: &Judge<'_>,
    method: Method,
    threshold: f64,
    quorum: f64,
) -> Result<DatasetVerdict, VerifyError> {
    if images.is_empty() {
        return Err(VerifyError::NoImages);
    }
    let verdicts: Vec<Verdict> = exec
        .map_indexed(images.len(), |i| {
            let (id, image) = &images[i];
            verdict_for(candidate, id, image, judge, method, threshold)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let accepted = verdicts.iter().filter(|v| v.accept).count();
    let accepted_fraction = accepted as f64 / verdicts.len() as f64;
    Ok(DatasetVerdict {
        verdicts,
        accepted_fraction,
        quorum,
        accept: accepted_fraction >= quorum,
    })
}

fn verdict_for(
    candidate: &Network,
    id: &str,
    image: &Image,
    judge: &Judge<'_>,
    method: Method,
    threshold: f64,
) -> Result<Verdict, VerifyError> {
    match (method, judge) {
        (Method::Garbage, _) => {
            let (predicted, probs) = candidate.predict(&fit_image(candidate, image))?;
            let garbage = candidate.num_classes() - 1;
            Ok(Verdict {
                sample_id: id.to_string(),
                accept: predicted != garbage,
                probability: 1.0 - probs[garbage],
                method,
                details: VerdictDetails::Posterior {
                    probabilities: probs,
                    predicted_class: predicted,
                },
            })
        }
        (_, Judge::Forest { reference, model }) => {
            let rec = extract_record(candidate, image, reference, method, id)?;
            let p = model.predict_vector(&rec.features);
            Ok(Verdict {
                sample_id: id.to_string(),
                accept: p >= threshold,
                probability: p,
                method,
                details: VerdictDetails::Similarity {
                    features: rec.features,
                    degenerate: rec.degenerate,
                },
            })
        }
        (_, Judge::GarbageClass) => Err(VerifyError::Invalid(format!(
            "method {method} needs a fitted verifier and reference bundle"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RotationReport {
    pub angle_degrees: f64,
    pub method: Method,
    pub images: usize,
    pub report: EvalReport,
}

/// Discriminates original (label 1) from rotated (label 0) images by the
/// reference model's feature-response similarity. Folds are grouped by
/// source image so an image and its rotation never straddle train and test.
#[allow(clippy::too_many_arguments)]
pub fn rotation_probe<E: ParallelMap>(
    exec: &E,
    reference: &ReferenceBundle,
    refnet: &Network,
    images: &[Image],
    angle_degrees: f64,
    method: Method,
    forest_config: &ForestConfig,
    folds: usize,
) -> Result<RotationReport, VerifyError> {
    if !(0.0..360.0).contains(&angle_degrees) {
        return Err(VerifyError::Invalid(format!("angle {angle_degrees} outside [0, 360)")));
    }
    if images.is_empty() {
        return Err(VerifyError::NoImages);
    }
    let n = images.len();
    let features: Vec<(SimilarityVector, SimilarityVector)> = exec
        .map_indexed(n, |i| -> Result<_, VerifyError> {
            let id = format!("{i}");
            let orig = extract_record(refnet, &images[i], reference, method, &id)?;
            let rot = extract_record(refnet, &images[i].rotated(angle_degrees), reference, method, &id)?;
            Ok((orig.features, rot.features))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(2 * n);
    for (o, _) in &features {
        rows.push((*o, 1u8));
    }
    for (_, r) in &features {
        rows.push((*r, 0u8));
    }
    let data = FeatureDataset::from_similarity(&rows)?;
    let group_fold = forest::group_kfold(n, folds, forest_config.seed)?;
    let assignment: Vec<usize> = (0..2 * n).map(|i| group_fold[i % n]).collect();
    let fold_list = forest::folds_from_assignment(&assignment, folds);
    let scores = forest::out_of_fold_scores(exec, forest_config, &data, &fold_list)?;
    let report = forest::evaluate_scores(&scores, &data.labels, 0.5)?;
    Ok(RotationReport {
        angle_degrees,
        method,
        images: n,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BaselineComparison {
    /// Accuracy of the `k + 1`-class model on in-domain test samples
    /// (a garbage prediction counts as wrong).
    pub garbage_model_in_domain_accuracy: f64,
    /// Accuracy of the same architecture trained on `k` classes only.
    pub baseline_in_domain_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GarbageReport {
    pub garbage_class: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub report: ClassificationReport,
    pub baseline: Option<BaselineComparison>,
    pub epoch_loss: Vec<f64>,
}

/// Per-class split: `round(test_fraction * n_c)` samples of each class go to
/// the test set, chosen by a seeded shuffle. Returns `(train, test)` indices.
pub fn stratified_holdout(labels: &[usize], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = libm::round(test_fraction * members.len() as f64) as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Trains a `k + 1`-class network where label `k` is the garbage class and
/// returns it with per-class metrics on a stratified held-out split. With
/// `with_baseline` a `k`-class network of the same architecture is trained on
/// the in-domain part of the training split for comparison.
pub fn garbage_train_eval(
    config: &NetworkConfig,
    in_domain: &[(Image, usize)],
    garbage: &[Image],
    test_fraction: f64,
    options: TrainOptions,
    with_baseline: bool,
) -> Result<(Network, GarbageReport), VerifyError> {
    if garbage.is_empty() {
        return Err(VerifyError::NoGarbage);
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(VerifyError::Invalid(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    if config.num_classes < 2 || (with_baseline && config.num_classes < 3) {
        return Err(VerifyError::Invalid(format!(
            "{} classes leave too few in-domain classes",
            config.num_classes
        )));
    }
    let k = config.num_classes - 1;
    if let Some((_, l)) = in_domain.iter().find(|(_, l)| *l >= k) {
        return Err(NetError::LabelOutOfRange {
            sample: 0,
            label: *l,
            num_classes: k,
        }
        .into());
    }
    let all: Vec<(Image, usize)> = in_domain
        .iter()
        .cloned()
        .chain(garbage.iter().map(|g| (g.clone(), k)))
        .collect();
    let labels: Vec<usize> = all.iter().map(|(_, l)| *l).collect();
    let (train_idx, test_idx) = stratified_holdout(&labels, test_fraction, config.seed);
    let train: Vec<(Image, usize)> = train_idx.iter().map(|&i| all[i].clone()).collect();
    let (net, history) = tinynet::train(config.clone(), &train, options)?;

    let mut truth = Vec::with_capacity(test_idx.len());
    let mut pred = Vec::with_capacity(test_idx.len());
    for &i in &test_idx {
        truth.push(all[i].1);
        pred.push(net.predict(&fit_image(&net, &all[i].0))?.0);
    }
    let report = classification_report(&truth, &pred, config.num_classes);

    let baseline = if with_baseline {
        let base_config = NetworkConfig {
            num_classes: k,
            ..config.clone()
        };
        let base_train: Vec<(Image, usize)> = train.iter().filter(|(_, l)| *l < k).cloned().collect();
        let (base, _) = tinynet::train(base_config, &base_train, options)?;
        let in_test: Vec<usize> = test_idx.iter().copied().filter(|&i| all[i].1 < k).collect();
        let accuracy = |net: &Network| -> Result<f64, VerifyError> {
            let mut correct = 0usize;
            for &i in &in_test {
                if net.predict(&fit_image(net, &all[i].0))?.0 == all[i].1 {
                    correct += 1;
                }
            }
            Ok(correct as f64 / in_test.len().max(1) as f64)
        };
        Some(BaselineComparison {
            garbage_model_in_domain_accuracy: accuracy(&net)?,
            baseline_in_domain_accuracy: accuracy(&base)?,
        })
    } else {
        None
    };
    let report = GarbageReport {
        garbage_class: k,
        train_size: train_idx.len(),
        test_size: test_idx.len(),
        report,
        baseline,
        epoch_loss: history.epoch_loss,
    };
    Ok((net, report))
}
