//! On-disk layouts for models, reference bundles, records, forests and datasets.

use std::fs;
use std::path::{Path, PathBuf};

use gamver_core::simmetrics::{MetricConfig, SimilarityVector, FEATURE_NAMES};
use gamver_core::tinynet::{Network, NetworkConfig, NetworkParams};
use gamver_core::verifier::{Averaging, LayerReference, ReferenceBundle, VerificationRecord};
use gamver_core::{ForestModel, Image, Tensor};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::CliError;
use crate::{gamv, imageio};

pub const MODEL_PARAMS: &str = "model.gamv";
pub const MODEL_CONFIG: &str = "model.json";
pub const LABELS_FILE: &str = "labels.csv";
pub const RECORDS_HEADER: [&str; 10] = [
    "sampleId",
    "iou",
    "dice",
    "ssim",
    "cosine",
    "pearson",
    "kl",
    "wasserstein",
    "degenerate",
    "label",
];

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

/// `dir/model.gamv` holds the flattened parameters, `dir/model.json` the config.
pub fn save_model(dir: &Path, net: &Network) -> Result<(), CliError> {
    create_dir(dir)?;
    write_json(&dir.join(MODEL_CONFIG), &net.config)?;
    let flat = net.params.flatten();
    let n = flat.len();
    let t = Tensor::new(vec![n], flat).map_err(|e| CliError::format(&dir.join(MODEL_PARAMS), e.to_string()))?;
    gamv::write(&dir.join(MODEL_PARAMS), &t)
}

pub fn load_model(dir: &Path) -> Result<Network, CliError> {
    let config: NetworkConfig = read_json(&dir.join(MODEL_CONFIG))?;
    let path = dir.join(MODEL_PARAMS);
    let t = gamv::read(&path)?;
    if t.rank() != 1 {
        return Err(CliError::format(&path, format!("expected a rank-1 parameter vector, got rank {}", t.rank())));
    }
    let params = NetworkParams::from_flat(&config, t.values()).map_err(|e| CliError::format(&path, e.to_string()))?;
    Network::from_parts(config, params).map_err(|e| CliError::format(&path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BundleMeta {
    pub format_version: u32,
    pub working_size: usize,
    pub metric: MetricConfig,
    pub averaging: Averaging,
    pub correct_only: bool,
    pub gradcam_layer: usize,
    pub num_classes: usize,
    pub samples_per_class: Vec<usize>,
    pub model_fingerprint: String,
    /// 1-based conv layers with a `layer_<j>.gamv` file.
    pub feature_layers: Vec<usize>,
    pub kl_domain: String,
    pub wasserstein_domain: String,
    pub gam_files: Vec<String>,
}

fn gam_file(class: usize) -> String {
    format!("gam_class_{class}.gamv")
}

const GAM_GLOBAL: &str = "gam_global.gamv";

fn layer_file(layer: usize) -> String {
    format!("layer_{}.gamv", layer + 1)
}

fn layer_global_file(layer: usize) -> String {
    format!("layer_{}_global.gamv", layer + 1)
}

/// Writes `dir/{meta.json, gam_class_<i>.gamv, gam_global.gamv, layer_<j>.gamv,
/// layer_<j>_global.gamv}`. With global averaging there are no per-class GAM
/// files. A `layer_<j>.gamv` file stacks its maps as `[maps, size, size]`.
pub fn save_bundle(dir: &Path, b: &ReferenceBundle) -> Result<(), CliError> {
    create_dir(dir)?;
    let mut gam_files = Vec::new();
    if b.averaging == Averaging::PerClass {
        for (c, m) in b.gams.iter().enumerate() {
            let name = gam_file(c);
            gamv::write(&dir.join(&name), m)?;
            gam_files.push(name);
        }
    }
    gamv::write(&dir.join(GAM_GLOBAL), &b.global_gam)?;
    for l in &b.layer_refs {
        let path = dir.join(layer_file(l.layer));
        gamv::write(&path, &stack(&l.maps).map_err(|m| CliError::format(&path, m))?)?;
        gamv::write(&dir.join(layer_global_file(l.layer)), &l.global)?;
    }
    let meta = BundleMeta {
        format_version: 1,
        working_size: b.working_size,
        metric: b.metric,
        averaging: b.averaging,
        correct_only: b.correct_only,
        gradcam_layer: b.gradcam_layer,
        num_classes: b.num_classes,
        samples_per_class: b.samples_per_class.clone(),
        model_fingerprint: b.model_fingerprint.clone(),
        feature_layers: b.layer_refs.iter().map(|l| l.layer + 1).collect(),
        kl_domain: "spatial".into(),
        wasserstein_domain: "intensity-histogram".into(),
        gam_files,
    };
    write_json(&dir.join("meta.json"), &meta)
}

fn stack(maps: &[Tensor]) -> Result<Tensor, String> {
    let first = maps.first().ok_or("no maps to store")?;
    let mut dims = vec![maps.len()];
    dims.extend_from_slice(first.dims());
    let values = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    Tensor::new(dims, values).map_err(|e| e.to_string())
}

fn unstack(t: &Tensor) -> Vec<Tensor> {
    let d = t.dims();
    let plane = d[1] * d[2];
    t.values()
        .chunks_exact(plane)
        .map(|c| Tensor::new(vec![d[1], d[2]], c.to_vec()).expect("same layout"))
        .collect()
}

fn check_map(path: &Path, t: &Tensor, size: usize) -> Result<(), CliError> {
    if t.dims() != [size, size] {
        return Err(CliError::format(path, format!("map shape {:?}, expected [{size}, {size}]", t.dims())));
    }
    if t.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CliError::format(path, "map values outside [0, 1]; maps must be normalized"));
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<ReferenceBundle, CliError> {
    let meta: BundleMeta = read_json(&dir.join("meta.json"))?;
    let size = meta.working_size;
    let read_map = |name: &str| -> Result<Tensor, CliError> {
        let path = dir.join(name);
        let t = gamv::read(&path)?;
        check_map(&path, &t, size)?;
        Ok(t)
    };
    let global_gam = read_map(GAM_GLOBAL)?;
    let gams = match meta.averaging {
        Averaging::PerClass => {
            if meta.gam_files.len() != meta.num_classes {
                return Err(CliError::format(
                    &dir.join("meta.json"),
                    format!("{} GAM files listed for {} classes", meta.gam_files.len(), meta.num_classes),
                ));
            }
            meta.gam_files.iter().map(|f| read_map(f)).collect::<Result<Vec<_>, _>>()?
        }
        Averaging::Global => vec![global_gam.clone()],
    };
    let mut layer_refs = Vec::new();
    for &j in &meta.feature_layers {
        let layer = j.checked_sub(1).ok_or_else(|| CliError::format(&dir.join("meta.json"), "feature layers are 1-based"))?;
        let path = dir.join(layer_file(layer));
        let stacked = gamv::read(&path)?;
        if stacked.rank() != 3 || stacked.dims()[1..] != [size, size] {
            return Err(CliError::format(&path, format!("layer stack shape {:?}", stacked.dims())));
        }
        let maps = unstack(&stacked);
        for m in &maps {
            check_map(&path, m, size)?;
        }
        layer_refs.push(LayerReference {
            layer,
            maps,
            global: read_map(&layer_global_file(layer))?,
        });
    }
    Ok(ReferenceBundle {
        gams,
        global_gam,
        layer_refs,
        working_size: size,
        metric: meta.metric,
        averaging: meta.averaging,
        correct_only: meta.correct_only,
        gradcam_layer: meta.gradcam_layer,
        num_classes: meta.num_classes,
        samples_per_class: meta.samples_per_class,
        model_fingerprint: meta.model_fingerprint,
    })
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records(path: &Path, rows: &[VerificationRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let err = |e: csv::Error| CliError::format(path, e.to_string());
    w.write_record(RECORDS_HEADER).map_err(err)?;
    for r in rows {
        let mut fields = vec![r.sample_id.clone()];
        fields.extend(r.features.to_array().iter().map(|&v| fmt_f64(v)));
        fields.push(u8::from(r.degenerate).to_string());
        fields.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&fields).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a records CSV. The predicted class is not stored and reads back as 0.
pub fn read_records(path: &Path) -> Result<Vec<VerificationRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| CliError::format(path, e.to_string()))?.clone();
    if header.iter().ne(RECORDS_HEADER.iter().copied()) {
        return Err(CliError::format(path, format!("expected header {}", RECORDS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let bad = |what: &str| CliError::format(path, format!("row {}: bad {what}", line + 1));
        let mut vals = [0.0; 7];
        for (k, name) in FEATURE_NAMES.iter().enumerate() {
            vals[k] = rec[k + 1].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(name))?;
        }
        let degenerate = match &rec[8] {
            "0" => false,
            "1" => true,
            _ => return Err(bad("degenerate flag")),
        };
        let label = match &rec[9] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            _ => return Err(bad("label")),
        };
        rows.push(VerificationRecord {
            sample_id: rec[0].to_string(),
            features: SimilarityVector::from_array(vals),
            degenerate,
            label,
            predicted_class: 0,
        });
    }
    Ok(rows)
}

pub fn save_forest(path: &Path, model: &ForestModel) -> Result<(), CliError> {
    write_json(path, model)
}

pub fn load_forest(path: &Path) -> Result<ForestModel, CliError> {
    let model: ForestModel = read_json(path)?;
    if model.feature_names.len() != FEATURE_NAMES.len() {
        return Err(CliError::format(path, "forest was not trained on the 7 similarity features"));
    }
    for (t, tree) in model.trees.iter().enumerate() {
        for (i, n) in tree.nodes.iter().enumerate() {
            let leaf = n.leaf_distribution.is_some();
            let ok = if leaf {
                n.left_child.is_none() && n.right_child.is_none()
            } else {
                n.feature_index.is_some_and(|f| f < FEATURE_NAMES.len())
                    && n.threshold.is_some()
                    && n.left_child.is_some_and(|c| c > i && c < tree.nodes.len())
                    && n.right_child.is_some_and(|c| c > i && c < tree.nodes.len())
            };
            if !ok {
                return Err(CliError::format(path, format!("tree {t} node {i} is malformed")));
            }
        }
        if tree.nodes.is_empty() {
            return Err(CliError::format(path, format!("tree {t} has no nodes")));
        }
    }
    Ok(model)
}

/// One image of a dataset directory.
#[derive(Debug, Clone)]
pub struct Entry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    file: String,
    label: usize,
}

/// Lists a dataset directory. With `labels.csv` (`file,label`) the manifest
/// order is used; otherwise every `.pgm`/`.png` file, sorted by name, unlabeled.
/// A single image file is also accepted.
pub fn list_dataset(path: &Path) -> Result<Vec<Entry>, CliError> {
    let id_of = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.is_file() {
        return Ok(vec![Entry {
            id: id_of(path),
            path: path.to_path_buf(),
            label: None,
        }]);
    }
    let manifest = path.join(LABELS_FILE);
    if manifest.is_file() {
        let mut r = csv::Reader::from_path(&manifest).map_err(|e| CliError::format(&manifest, e.to_string()))?;
        let mut out = Vec::new();
        for row in r.deserialize::<LabelRow>() {
            let row = row.map_err(|e| CliError::format(&manifest, e.to_string()))?;
            let p = path.join(&row.file);
            out.push(Entry {
                id: id_of(&p),
                path: p,
                label: Some(row.label),
            });
        }
        return Ok(out);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && imageio::is_image_path(p))
        .collect();
    files.sort();
    Ok(files
        .into_iter()
        .map(|p| Entry {
            id: id_of(&p),
            label: None,
            path: p,
        })
        .collect())
}

/// Loads every entry; unreadable files abort.
pub fn load_labeled(path: &Path) -> Result<Vec<(String, Image, usize)>, CliError> {
    let entries = list_dataset(path)?;
    if entries.is_empty() {
        return Err(CliError::format(path, "dataset is empty"));
    }
    entries
        .into_iter()
        .map(|e| {
            let label = e
                .label
                .ok_or_else(|| CliError::format(path, format!("no {LABELS_FILE} manifest with labels")))?;
            Ok((e.id, imageio::load_image(&e.path)?, label))
        })
        .collect()
}
