//! Optional JSON config file. Keys mirror the long flag names in camelCase;
//! a flag given on the command line wins over the file, the file over the default.

use std::path::Path;

use gamver_core::synth::Domain;
use gamver_core::tinynet::NetworkConfig;
use gamver_core::verifier::{Averaging, Method};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Small,
    Wide,
}

impl Arch {
    pub fn config(self, input_size: usize, num_classes: usize, seed: u64) -> NetworkConfig {
        match self {
            Arch::Small => NetworkConfig::small(input_size, num_classes, seed),
            Arch::Wide => NetworkConfig::wide(input_size, num_classes, seed),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub working_size: Option<usize>,
    pub method: Option<Method>,
    pub threshold: Option<f64>,
    pub quorum: Option<f64>,
    pub folds: Option<usize>,
    pub trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub features_per_split: Option<usize>,
    pub epsilon: Option<f64>,
    pub bins: Option<usize>,
    pub angle: Option<f64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub arch: Option<Arch>,
    /// Full network description; replaces `arch` when present.
    pub network: Option<NetworkConfig>,
    pub averaging: Option<Averaging>,
    pub correct_only: Option<bool>,
    /// 1-based conv layers stored in a reference bundle.
    pub layers: Option<Vec<usize>>,
    pub test_fraction: Option<f64>,
    pub baseline: Option<bool>,
    pub domain: Option<Domain>,
    pub classes: Option<usize>,
    pub samples_per_class: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub size: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => store::read_json(p),
            None => Ok(Self::default()),
        }
    }
}

/// `flag`, else `file`, else `default`.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
