//! Synthetic labeled grayscale datasets with class-dependent structure.
//!
//! Each domain draws a different pattern family; within a domain the class
//! controls one geometric parameter. Gaussian pixel noise is added and the
//! result clipped to `[0, 1]`.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("at least 2 classes required, got {0}")]
    Classes(usize),
    #[error("image size must be at least 16, got {0}")]
    Size(usize),
    #[error("noise sigma must be finite and >= 0, got {0}")]
    Noise(f64),
    #[error("unknown domain '{0}' (expected rings, stripes, blobs or checker)")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// A bright ring whose radius grows with the class.
    Rings,
    /// Sinusoidal stripes whose orientation steps through `[0, 90)` degrees by class.
    Stripes,
    /// `class + 1` Gaussian blobs at random positions.
    Blobs,
    /// A checkerboard with `class + 2` cells per side.
    Checker,
}

impl Domain {
    fn stream_tag(self) -> u64 {
        match self {
            Domain::Rings => 1,
            Domain::Stripes => 2,
            Domain::Blobs => 3,
            Domain::Checker => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Rings => "rings",
            Domain::Stripes => "stripes",
            Domain::Blobs => "blobs",
            Domain::Checker => "checker",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rings" => Ok(Domain::Rings),
            "stripes" => Ok(Domain::Stripes),
            "blobs" => Ok(Domain::Blobs),
            "checker" => Ok(Domain::Checker),
            other => Err(SynthError::Domain(other.into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SyntheticSpec {
    pub domain: Domain,
    pub classes: usize,
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub size: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.classes < 2 {
            return Err(SynthError::Classes(self.classes));
        }
        if self.size < 16 {
            return Err(SynthError::Size(self.size));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(SynthError::Noise(self.noise_sigma));
        }
        Ok(())
    }
}

/// One generated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    /// Index within its class.
    pub index: usize,
}

/// All samples, class-major (`class 0` samples first). Sample `(c, i)` uses
/// its own random stream so any sample can be regenerated independently.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Sample>, SynthError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for class in 0..spec.classes {
        for index in 0..spec.samples_per_class {
            out.push(Sample {
                image: generate_one(spec, class, index),
                label: class,
                index,
            });
        }
    }
    Ok(out)
}

pub fn generate_one(spec: &SyntheticSpec, class: usize, index: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((spec.domain.stream_tag() << 56) | ((class as u64) << 32) | index as u64);
    let n = spec.size;
    let frac = class as f64 / (spec.classes - 1) as f64;
    let coord = |k: usize| (k as f64 + 0.5) / n as f64;
    let pattern: Tensor = match spec.domain {
        Domain::Rings => {
            let cy = 0.5 + rng.random_range(-0.05..0.05);
            let cx = 0.5 + rng.random_range(-0.05..0.05);
            let radius = 0.1 + 0.28 * frac + rng.random_range(-0.01..0.01);
            let width = 0.045;
            Tensor::from_fn2(n, n, |i, j| {
                let d = libm::hypot(coord(i) - cy, coord(j) - cx);
                let z = (d - radius) / width;
                0.1 + 0.8 * libm::exp(-z * z)
            })
        }
        Domain::Stripes => {
            let theta = (PI / 2.0) * class as f64 / spec.classes as f64 + rng.random_range(-0.05..0.05);
            let period = 0.22 + rng.random_range(-0.02..0.02);
            let phase = rng.random_range(0.0..2.0 * PI);
            let (s, c) = (libm::sin(theta), libm::cos(theta));
            Tensor::from_fn2(n, n, |i, j| {
                let t = coord(j) * c + coord(i) * s;
                0.5 + 0.4 * libm::sin(2.0 * PI * t / period + phase)
            })
        }
        Domain::Blobs => {
            let blobs: Vec<(f64, f64)> = (0..=class)
                .map(|_| (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)))
                .collect();
            let sigma = 0.07;
            Tensor::from_fn2(n, n, |i, j| {
                let v: f64 = blobs
                    .iter()
                    .map(|&(by, bx)| {
                        let d2 = (coord(i) - by) * (coord(i) - by) + (coord(j) - bx) * (coord(j) - bx);
                        libm::exp(-d2 / (2.0 * sigma * sigma))
                    })
                    .sum();
                0.1 + 0.8 * v.min(1.0)
            })
        }
        Domain::Checker => {
            let cells = (class + 2) as f64;
            let oy = rng.random_range(0.0..1.0);
            let ox = rng.random_range(0.0..1.0);
            Tensor::from_fn2(n, n, |i, j| {
                let a = libm::floor(coord(i) * cells + oy) as i64;
                let b = libm::floor(coord(j) * cells + ox) as i64;
                if (a + b).rem_euclid(2) == 0 {
                    0.2
                } else {
                    0.8
                }
            })
        }
    };
    let noisy = if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        let values = pattern.values().iter().map(|v| v + normal.sample(&mut rng)).collect();
        Tensor::new(pattern.dims().to_vec(), values).expect("same shape")
    } else {
        pattern
    };
    Image::new(noisy.map(|v| v.clamp(0.0, 1.0))).expect("clipped to [0, 1]")
}
