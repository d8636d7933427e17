//! Command implementations. Each writes its artifacts and `report.json`
//! under `--out` and prints a short table to standard output.

use std::path::{Path, PathBuf};

use gamver_core::forest::{self, EvalReport, ForestConfig};
use gamver_core::gradcam::{self, ClassSelect};
use gamver_core::simmetrics::MetricConfig;
use gamver_core::synth::{self, Domain, SyntheticSpec};
use gamver_core::tinynet::{self, NetworkConfig, TrainOptions};
use gamver_core::verifier::{
    self, Averaging, DatasetVerdict, GarbageReport, Judge, Method, ReferenceOptions, RotationReport,
    VerdictDetails,
};
use gamver_core::{ForestModel, Image, Network};
use log::{info, warn};
use serde::Serialize;

use crate::cli::*;
use crate::config::{pick, Arch, ConfigFile};
use crate::error::{CliError, Context};
use crate::exec::{with_jobs, Rayon};
use crate::report::{self, format_classification, format_eval, format_label_stats, label_stats, LabelStats};
use crate::store::{self, create_dir, fmt_f64};
use crate::{gamv, imageio};

pub fn run(cli: Cli) -> Result<(), CliError> {
    if cli.command.common().jobs == Some(0) {
        return Err(CliError::param("jobs", "must be at least 1"));
    }
    match cli.command {
        Command::Synthgen(a) => synthgen(a),
        Command::Train(a) => train(a),
        Command::BuildRef(a) => build_ref(a),
        Command::Extract(a) => extract(a),
        Command::FitVerify(a) => fit_verify(a),
        Command::Verify(a) => verify(a),
        Command::Fmverify(a) => fmverify(a),
        Command::Garbage(a) => garbage(a),
        Command::Report(a) => records_report(a),
        Command::Overlay(a) => overlay(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// A bundle directory, or a directory containing `ref/`.
fn bundle_dir(p: &Path) -> PathBuf {
    if p.join("meta.json").is_file() {
        p.to_path_buf()
    } else {
        p.join("ref")
    }
}

fn fit_to(image: Image, size: usize) -> Image {
    if image.height() == size && image.width() == size {
        image
    } else {
        image.resized(size, size)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
struct FileError {
    file: String,
    error: String,
}

/// Loads every listed image, collecting per-file failures instead of aborting.
fn load_images(data: &Path, id_prefix: &str) -> Result<(Vec<(String, Image)>, Vec<FileError>), CliError> {
    let entries = store::list_dataset(data)?;
    if entries.is_empty() {
        return Err(CliError::format(data, "no .pgm or .png images found"));
    }
    let mut images = Vec::new();
    let mut errors = Vec::new();
    for e in entries {
        match imageio::load_image(&e.path) {
            Ok(img) => images.push((format!("{id_prefix}{}", e.id), img)),
            Err(err) => {
                warn!("skipping {}: {err}", e.path.display());
                errors.push(FileError {
                    file: path_str(&e.path),
                    error: err.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Err(CliError::format(data, "none of the images could be read"));
    }
    Ok((images, errors))
}

fn check_unit(name: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::param(name, format!("{v} is outside [0, 1]")))
    }
}

fn forest_config(flags: &ForestFlags, file: &ConfigFile, seed: Option<u64>) -> (ForestConfig, usize, f64) {
    let d = ForestConfig::default();
    let cfg = ForestConfig {
        num_trees: pick(flags.trees, file.trees, d.num_trees),
        max_depth: pick(flags.max_depth, file.max_depth, d.max_depth),
        min_samples_leaf: pick(flags.min_samples_leaf, file.min_samples_leaf, d.min_samples_leaf),
        features_per_split: pick(flags.features_per_split, file.features_per_split, d.features_per_split),
        seed: pick(seed, file.seed, d.seed),
    };
    (cfg, pick(flags.folds, file.folds, 5), pick(flags.threshold, file.threshold, 0.5))
}

#[derive(Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainEcho {
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
}

impl From<TrainEcho> for TrainOptions {
    fn from(t: TrainEcho) -> Self {
        TrainOptions {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
        }
    }
}

fn train_options(flags: &TrainFlags, file: &ConfigFile) -> TrainEcho {
    let d = TrainOptions::default();
    TrainEcho {
        epochs: pick(flags.epochs, file.epochs, d.epochs),
        learning_rate: pick(flags.learning_rate, file.learning_rate, d.learning_rate),
        batch_size: pick(flags.batch_size, file.batch_size, d.batch_size),
    }
}

/// Network from the config file's `network` entry, else from the architecture preset.
fn network_config(
    flags: &TrainFlags,
    file: &ConfigFile,
    seed: Option<u64>,
    input_size: usize,
    num_classes: usize,
) -> Result<NetworkConfig, CliError> {
    let seed = pick(seed, file.seed, 0);
    let cfg = match &file.network {
        Some(n) => {
            if n.num_classes != num_classes {
                return Err(CliError::param(
                    "config",
                    format!("network.numClasses is {} but the data needs {num_classes}", n.num_classes),
                ));
            }
            NetworkConfig { seed, ..n.clone() }
        }
        None => pick(flags.arch, file.arch, Arch::Wide).config(input_size, num_classes, seed),
    };
    cfg.geometry().context(|| "network config".into())?;
    Ok(cfg)
}

fn accuracy(net: &Network, data: &[(Image, usize)]) -> Result<f64, CliError> {
    let mut correct = 0;
    for (img, label) in data {
        if net.predict(img).context(|| "prediction".into())?.0 == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SynthResult {
    files: usize,
    per_class: Vec<usize>,
    manifest: String,
}

fn synthgen(a: SynthgenArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let spec = SyntheticSpec {
        domain: pick(a.domain, file.domain, Domain::Rings),
        classes: pick(a.classes, file.classes, 5),
        samples_per_class: pick(a.samples_per_class, file.samples_per_class, 100),
        noise_sigma: pick(a.noise_sigma, file.noise_sigma, 0.05),
        size: pick(a.size, file.size, 32),
        seed: pick(a.common.seed, file.seed, 0),
    };
    let samples = synth::generate(&spec).context(|| "synthgen".into())?;
    let out = &a.common.out;
    create_dir(out)?;
    let manifest = out.join(store::LABELS_FILE);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| CliError::format(&manifest, e.to_string()))?;
    w.write_record(["file", "label"]).map_err(|e| CliError::format(&manifest, e.to_string()))?;
    for s in &samples {
        let name = format!("c{}_{:05}.pgm", s.label, s.index);
        imageio::save_pgm(&out.join(&name), &s.image)?;
        w.write_record([name, s.label.to_string()])
            .map_err(|e| CliError::format(&manifest, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(&manifest, e))?;
    let result = SynthResult {
        files: samples.len(),
        per_class: vec![spec.samples_per_class; spec.classes],
        manifest: store::LABELS_FILE.into(),
    };
    report::write_report(out, "synthgen", &spec, &result)?;
    println!(
        "wrote {} {} images ({} classes x {}) to {}",
        result.files,
        spec.domain,
        spec.classes,
        spec.samples_per_class,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainConfigEcho {
    data: String,
    network: NetworkConfig,
    training: TrainEcho,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TrainResult {
    samples: usize,
    epoch_loss: Vec<f64>,
    train_accuracy: f64,
    parameters: usize,
}

fn labeled_pairs(path: &Path) -> Result<(Vec<(Image, usize)>, usize), CliError> {
    let data = store::load_labeled(path)?;
    let size = data[0].1.height();
    let pairs: Vec<(Image, usize)> = data.into_iter().map(|(_, img, l)| (img, l)).collect();
    Ok((pairs, size))
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let (pairs, size) = labeled_pairs(&a.data)?;
    let num_classes = pairs.iter().map(|(_, l)| *l).max().unwrap_or(0) + 1;
    let network = network_config(&a.train, &file, a.common.seed, file.network.as_ref().map_or(size, |n| n.input_size), num_classes.max(2))?;
    let pairs: Vec<(Image, usize)> = pairs.into_iter().map(|(i, l)| (fit_to(i, network.input_size), l)).collect();
    let training = train_options(&a.train, &file);
    info!("training {} samples, {} classes", pairs.len(), network.num_classes);
    let (net, history) = tinynet::train(network.clone(), &pairs, training.into())
        .context(|| format!("training on {}", a.data.display()))?;
    let out = &a.common.out;
    store::save_model(out, &net)?;
    let result = TrainResult {
        samples: pairs.len(),
        epoch_loss: history.epoch_loss,
        train_accuracy: accuracy(&net, &pairs)?,
        parameters: net.params.num_values(),
    };
    let echo = TrainConfigEcho {
        data: path_str(&a.data),
        network,
        training,
    };
    report::write_report(out, "train", &echo, &result)?;
    println!(
        "trained {} parameters on {} samples: final loss {:.5}, train accuracy {:.4}",
        result.parameters,
        result.samples,
        result.epoch_loss.last().copied().unwrap_or(f64::NAN),
        result.train_accuracy
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BuildRefEcho {
    model: String,
    data: String,
    options: ReferenceOptions,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BuildRefResult {
    bundle: String,
    num_classes: usize,
    samples_per_class: Vec<usize>,
    model_fingerprint: String,
}

fn build_ref(a: BuildRefArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let net = store::load_model(&a.model)?;
    let (pairs, _) = labeled_pairs(&a.data)?;
    let pairs: Vec<(Image, usize)> = pairs.into_iter().map(|(i, l)| (fit_to(i, net.config.input_size), l)).collect();
    let layers = pick(a.layers, file.layers.clone(), vec![1, 2]);
    let feature_layers = layers
        .iter()
        .map(|&j| j.checked_sub(1).ok_or_else(|| CliError::param("layers", "layers are 1-based")))
        .collect::<Result<Vec<_>, _>>()?;
    let d = MetricConfig::default();
    let options = ReferenceOptions {
        working_size: pick(a.working_size, file.working_size, 224),
        averaging: a.averaging.map(Averaging::from).or(file.averaging).unwrap_or(Averaging::PerClass),
        correct_only: if a.all_samples { false } else { file.correct_only.unwrap_or(true) },
        gradcam_layer: None,
        feature_layers,
        metric: MetricConfig {
            epsilon: pick(a.epsilon, file.epsilon, d.epsilon),
            histogram_bins: pick(a.bins, file.bins, d.histogram_bins),
        },
    };
    let bundle = with_jobs(jobs(a.common.jobs, &file), || {
        verifier::build_reference(&Rayon, &net, &pairs, &options)
    })?
    .context(|| format!("building reference from {}", a.data.display()))?;
    let out = &a.common.out;
    let dir = out.join("ref");
    store::save_bundle(&dir, &bundle)?;
    let result = BuildRefResult {
        bundle: "ref".into(),
        num_classes: bundle.num_classes,
        samples_per_class: bundle.samples_per_class.clone(),
        model_fingerprint: bundle.model_fingerprint.clone(),
    };
    let echo = BuildRefEcho {
        model: path_str(&a.model),
        data: path_str(&a.data),
        options,
    };
    report::write_report(out, "build-ref", &echo, &result)?;
    println!(
        "reference bundle {} built from {:?} samples per class (model {})",
        dir.display(),
        result.samples_per_class,
        &result.model_fingerprint[..12]
    );
    Ok(())
}

fn jobs(flag: Option<usize>, file: &ConfigFile) -> Option<usize> {
    flag.or(file.jobs)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ExtractEcho {
    model: String,
    reference: String,
    data: String,
    method: Method,
    label: Option<u8>,
    id_prefix: String,
    working_size: usize,
    metric: MetricConfig,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ExtractResult {
    records_file: String,
    records: usize,
    degenerate: usize,
    skipped: Vec<FileError>,
    statistics: Vec<LabelStats>,
}

fn metric_method(method: Method, name: &str) -> Result<Method, CliError> {
    match method {
        Method::Garbage => Err(CliError::param(name, "garbage does not produce similarity records")),
        m => Ok(m),
    }
}

fn extract(a: ExtractArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let method = metric_method(pick(a.method, file.method, Method::GradCam), "method")?;
    if let Some(l) = a.label {
        if l > 1 {
            return Err(CliError::param("label", "must be 0 or 1"));
        }
    }
    let net = store::load_model(&a.model)?;
    let bundle = store::load_bundle(&bundle_dir(&a.reference))?;
    let (images, skipped) = load_images(&a.data, &a.id_prefix)?;
    let rows = with_jobs(jobs(a.common.jobs, &file), || {
        verifier::extract_records(&Rayon, &net, &images, &bundle, method, a.label)
    })?
    .context(|| format!("extracting {method} records from {}", a.data.display()))?;
    let out = &a.common.out;
    create_dir(out)?;
    store::write_records(&out.join("records.csv"), &rows)?;
    let result = ExtractResult {
        records_file: "records.csv".into(),
        records: rows.len(),
        degenerate: rows.iter().filter(|r| r.degenerate).count(),
        skipped,
        statistics: label_stats(&rows),
    };
    let echo = ExtractEcho {
        model: path_str(&a.model),
        reference: path_str(&a.reference),
        data: path_str(&a.data),
        method,
        label: a.label,
        id_prefix: a.id_prefix,
        working_size: bundle.working_size,
        metric: bundle.metric,
    };
    report::write_report(out, "extract", &echo, &result)?;
    println!(
        "{} {method} records ({} degenerate, {} files skipped)",
        result.records,
        result.degenerate,
        result.skipped.len()
    );
    print!("{}", format_label_stats(&result.statistics));
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FitEcho {
    aligned: Vec<String>,
    misaligned: Vec<String>,
    forest: ForestConfig,
    folds: usize,
    threshold: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FitResult {
    samples: usize,
    aligned: usize,
    misaligned: usize,
    degenerate: usize,
    model_file: String,
    dataset_file: String,
    scores_file: String,
    cross_validation: EvalReport,
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<verifier::VerificationRecord>, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(store::read_records(p)?);
    }
    Ok(rows)
}

fn fit_verify(a: FitVerifyArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let (cfg, folds, threshold) = forest_config(&a.forest, &file, a.common.seed);
    check_unit("threshold", threshold)?;
    let aligned = read_all(&a.aligned)?;
    let misaligned = read_all(&a.misaligned)?;
    let (rows, data) = verifier::assemble_dataset(&aligned, &misaligned).context(|| "assembling records".into())?;
    let (scores, report, model) = with_jobs(jobs(a.common.jobs, &file), || {
        let (scores, report) = forest::cross_validate(&Rayon, &cfg, &data, folds, threshold)?;
        let model = ForestModel::fit_with(&Rayon, &cfg, &data)?;
        Ok::<_, forest::ForestError>((scores, report, model))
    })?
    .context(|| format!("{folds}-fold cross-validation"))?;
    let out = &a.common.out;
    create_dir(out)?;
    store::save_forest(&out.join("forest.json"), &model)?;
    store::write_records(&out.join("dataset.csv"), &rows)?;
    let scores_path = out.join("oof_scores.csv");
    let mut w = csv::Writer::from_path(&scores_path).map_err(|e| CliError::format(&scores_path, e.to_string()))?;
    let werr = |e: csv::Error| CliError::format(&scores_path, e.to_string());
    w.write_record(["sampleId", "label", "score"]).map_err(werr)?;
    for (r, s) in rows.iter().zip(&scores) {
        w.write_record([r.sample_id.clone(), r.label.unwrap_or(0).to_string(), fmt_f64(*s)])
            .map_err(werr)?;
    }
    w.flush().map_err(|e| CliError::io(&scores_path, e))?;
    let result = FitResult {
        samples: rows.len(),
        aligned: aligned.len(),
        misaligned: misaligned.len(),
        degenerate: rows.iter().filter(|r| r.degenerate).count(),
        model_file: "forest.json".into(),
        dataset_file: "dataset.csv".into(),
        scores_file: "oof_scores.csv".into(),
        cross_validation: report,
    };
    let echo = FitEcho {
        aligned: a.aligned.iter().map(|p| path_str(p)).collect(),
        misaligned: a.misaligned.iter().map(|p| path_str(p)).collect(),
        forest: cfg,
        folds,
        threshold,
    };
    report::write_report(out, "fit-verify", &echo, &result)?;
    println!(
        "{} records ({} aligned, {} misaligned), {folds}-fold cross-validation:",
        result.samples, result.aligned, result.misaligned
    );
    print!("{}", format_eval(&result.cross_validation));
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyEcho {
    model: String,
    data: String,
    method: Method,
    reference: Option<String>,
    verifier: Option<String>,
    threshold: f64,
    quorum: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct VerifyResult {
    #[serde(flatten)]
    verdict: DatasetVerdict,
    skipped: Vec<FileError>,
}

fn verify(a: VerifyArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let method = pick(a.method, file.method, Method::GradCam);
    let threshold = check_unit("threshold", pick(a.threshold, file.threshold, 0.5))?;
    let quorum = check_unit("quorum", pick(a.quorum, file.quorum, 0.5))?;
    let net = store::load_model(&a.model)?;
    let (images, skipped) = load_images(&a.data, "")?;
    let loaded = match method {
        Method::Garbage => None,
        _ => {
            let r = a
                .reference
                .as_deref()
                .ok_or_else(|| CliError::param("ref", format!("required for method {method}")))?;
            let v = a
                .verifier
                .as_deref()
                .ok_or_else(|| CliError::param("verifier", format!("required for method {method}")))?;
            Some((store::load_bundle(&bundle_dir(r))?, store::load_forest(v)?))
        }
    };
    let judge = match &loaded {
        Some((reference, model)) => Judge::Forest { reference, model },
        None => Judge::GarbageClass,
    };
    let verdict = with_jobs(jobs(a.common.jobs, &file), || {
        verifier::verify(&Rayon, &net, &images, &judge, method, threshold, quorum)
    })?
    .context(|| format!("verifying {}", a.data.display()))?;
    let out = &a.common.out;
    create_dir(out)?;
    let echo = VerifyEcho {
        model: path_str(&a.model),
        data: path_str(&a.data),
        method,
        reference: a.reference.as_deref().map(path_str),
        verifier: a.verifier.as_deref().map(path_str),
        threshold,
        quorum,
    };
    let result = VerifyResult { verdict, skipped };
    report::write_report(out, "verify", &echo, &result)?;
    let v = &result.verdict;
    for x in &v.verdicts {
        let extra = match &x.details {
            VerdictDetails::Similarity { degenerate: true, .. } => " (degenerate map)",
            _ => "",
        };
        println!(
            "{:<24} {:<7} p={:.4}{extra}",
            x.sample_id,
            if x.accept { "accept" } else { "reject" },
            x.probability
        );
    }
    println!(
        "model {}: {:.1}% of {} images accepted (quorum {:.1}%)",
        if v.accept { "ACCEPTED" } else { "REJECTED" },
        100.0 * v.accepted_fraction,
        v.verdicts.len(),
        100.0 * v.quorum
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FmverifyEcho {
    model: String,
    reference: String,
    data: String,
    angle: f64,
    method: Method,
    forest: ForestConfig,
    folds: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FmverifyResult {
    #[serde(flatten)]
    probe: RotationReport,
    skipped: Vec<FileError>,
}

fn fmverify(a: FmverifyArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let method = pick(a.method, file.method, Method::FeatureMap { layer: 0 });
    if !matches!(method, Method::FeatureMap { .. }) {
        return Err(CliError::param("method", "fmverify needs featuremap-L1 or featuremap-L2"));
    }
    let angle = pick(a.angle, file.angle, 90.0);
    let (cfg, folds, _) = forest_config(&a.forest, &file, a.common.seed);
    let net = store::load_model(&a.model)?;
    let bundle = store::load_bundle(&bundle_dir(&a.reference))?;
    let (images, skipped) = load_images(&a.data, "")?;
    let images: Vec<Image> = images.into_iter().map(|(_, i)| fit_to(i, net.config.input_size)).collect();
    let probe = with_jobs(jobs(a.common.jobs, &file), || {
        verifier::rotation_probe(&Rayon, &bundle, &net, &images, angle, method, &cfg, folds)
    })?
    .context(|| format!("rotation probe on {}", a.data.display()))?;
    let out = &a.common.out;
    create_dir(out)?;
    let echo = FmverifyEcho {
        model: path_str(&a.model),
        reference: path_str(&a.reference),
        data: path_str(&a.data),
        angle,
        method,
        forest: cfg,
        folds,
    };
    let result = FmverifyResult { probe, skipped };
    report::write_report(out, "fmverify", &echo, &result)?;
    println!("{method} rotation probe at {angle} degrees on {} images:", result.probe.images);
    print!("{}", format_eval(&result.probe.report));
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct GarbageEcho {
    data: String,
    garbage: String,
    network: NetworkConfig,
    training: TrainEcho,
    test_fraction: f64,
    baseline: bool,
}

fn garbage(a: GarbageArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let (pairs, size) = labeled_pairs(&a.data)?;
    let k = pairs.iter().map(|(_, l)| *l).max().unwrap_or(0) + 1;
    let network = network_config(&a.train, &file, a.common.seed, file.network.as_ref().map_or(size, |n| n.input_size), k + 1)?;
    let s = network.input_size;
    let pairs: Vec<(Image, usize)> = pairs.into_iter().map(|(i, l)| (fit_to(i, s), l)).collect();
    let (garbage_images, skipped) = load_images(&a.garbage, "")?;
    if !skipped.is_empty() {
        return Err(CliError::format(Path::new(&skipped[0].file), skipped[0].error.clone()));
    }
    let garbage_images: Vec<Image> = garbage_images.into_iter().map(|(_, i)| fit_to(i, s)).collect();
    let test_fraction = pick(a.test_fraction, file.test_fraction, 0.2);
    let baseline = a.baseline || file.baseline.unwrap_or(false);
    let training = train_options(&a.train, &file);
    let (net, result): (Network, GarbageReport) =
        verifier::garbage_train_eval(&network, &pairs, &garbage_images, test_fraction, training.into(), baseline)
            .context(|| format!("garbage-class training on {}", a.data.display()))?;
    let out = &a.common.out;
    store::save_model(&out.join("model"), &net)?;
    let echo = GarbageEcho {
        data: path_str(&a.data),
        garbage: path_str(&a.garbage),
        network,
        training,
        test_fraction,
        baseline,
    };
    report::write_report(out, "garbage", &echo, &result)?;
    println!(
        "garbage class {} ({} train / {} test samples):",
        result.garbage_class, result.train_size, result.test_size
    );
    print!("{}", format_classification(&result.report));
    if let Some(b) = &result.baseline {
        println!(
            "in-domain accuracy: with garbage class {:.4}, without {:.4}",
            b.garbage_model_in_domain_accuracy, b.baseline_in_domain_accuracy
        );
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ReportEcho {
    records: Vec<String>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ReportResult {
    records: usize,
    statistics: Vec<LabelStats>,
}

fn records_report(a: ReportArgs) -> Result<(), CliError> {
    let rows = read_all(&a.records)?;
    if rows.is_empty() {
        return Err(CliError::format(&a.records[0], "no records"));
    }
    let out = &a.common.out;
    create_dir(out)?;
    let result = ReportResult {
        records: rows.len(),
        statistics: label_stats(&rows),
    };
    let echo = ReportEcho {
        records: a.records.iter().map(|p| path_str(p)).collect(),
    };
    report::write_report(out, "report", &echo, &result)?;
    print!("{}", format_label_stats(&result.statistics));
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OverlayEcho {
    model: String,
    image: String,
    class: Option<usize>,
    working_size: usize,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct OverlayResult {
    overlay: String,
    map: String,
    target_class: usize,
    predicted_class: usize,
    probabilities: Vec<f64>,
    zero_map: bool,
}

fn overlay(a: OverlayArgs) -> Result<(), CliError> {
    let file = ConfigFile::load(a.common.config.as_deref())?;
    let net = store::load_model(&a.model)?;
    let original = imageio::load_image(&a.image)?;
    let input = fit_to(original.clone(), net.config.input_size);
    let working_size = pick(a.working_size, file.working_size, original.height().max(original.width()));
    if working_size == 0 {
        return Err(CliError::param("working-size", "must be at least 1"));
    }
    let select = a.class.map_or(ClassSelect::Auto, ClassSelect::Index);
    let att = gradcam::compute_gradcam(&net, &input, select, net.config.last_conv_layer(), working_size)
        .context(|| format!("Grad-CAM of {}", a.image.display()))?;
    let (predicted, probabilities) = net.predict(&input).context(|| "prediction".into())?;
    let rgb = gradcam::overlay_rgb(&original, &att).context(|| "overlay".into())?;
    let out = &a.common.out;
    create_dir(out)?;
    imageio::save_png_rgb(&out.join("overlay.png"), original.width(), original.height(), rgb)?;
    gamv::write(&out.join("gam.gamv"), &att.map)?;
    let result = OverlayResult {
        overlay: "overlay.png".into(),
        map: "gam.gamv".into(),
        target_class: att.target_class,
        predicted_class: predicted,
        probabilities,
        zero_map: att.is_zero(),
    };
    let echo = OverlayEcho {
        model: path_str(&a.model),
        image: path_str(&a.image),
        class: a.class,
        working_size,
    };
    report::write_report(out, "overlay", &echo, &result)?;
    println!(
        "overlay for class {} (predicted {}) written to {}",
        result.target_class,
        result.predicted_class,
        out.join("overlay.png").display()
    );
    Ok(())
}
