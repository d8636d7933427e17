//! Gradient-attention-map verification of convolutional classifiers.
//!
//! The crate is `no_std` (with `alloc`) and carries only the numerical side of
//! the toolkit: dense tensors, a small trainable CNN with exact gradients,
//! Grad-CAM and feature-response maps, the seven attention similarity metrics,
//! a random-forest verifier and the orchestration that ties them together.
//! File formats, image decoding and the command line live in the `gamver`
//! companion crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod exec;
pub mod forest;
pub mod gradcam;
pub mod gradcheck;
pub mod simmetrics;
pub mod synth;
pub mod tensor;
pub mod tinynet;
pub mod verifier;

pub use exec::{ParallelMap, Sequential};
pub use forest::{EvalReport, FeatureDataset, ForestConfig, ForestModel};
pub use gradcam::{AttentionMap, BinaryMask, ClassSelect, FeatureResponseMap};
pub use simmetrics::{MetricConfig, SimilarityVector};
pub use tensor::{Image, Tensor, TensorError};
pub use tinynet::{ConvLayerSpec, Network, NetworkConfig, NetworkParams};
pub use verifier::{Method, ReferenceBundle, Verdict, VerificationRecord};
