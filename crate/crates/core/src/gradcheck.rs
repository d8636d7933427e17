//! Central finite-difference checks of the analytic gradients.
//!
//! The network is piecewise smooth, so entries whose perturbation crosses a
//! ReLU or max-pool kink are skipped and counted rather than compared.

use alloc::vec::Vec;

use crate::tensor::{Image, Tensor};
use crate::tinynet::{NetError, Network, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_error {
            self.max_rel_error = e;
        }
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
            max_rel_error: self.max_rel_error.max(other.max_rel_error),
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Loss gradient w.r.t. every parameter against central differences with step `h`.
pub fn check_param_gradients(net: &Network, image: &Image, label: usize, h: f64) -> Result<GradCheck, NetError> {
    let (_, grads) = net.loss_and_gradients(image, label)?;
    let analytic = grads.flatten();
    let base = net.params.flatten();
    let pattern = net.forward(image)?.activation_pattern();
    let mut report = GradCheck::default();
    let mut values = base.clone();
    for i in 0..base.len() {
        let mut eval = |x: f64| -> Result<(f64, bool), NetError> {
            values[i] = x;
            let probe = Network {
                config: net.config.clone(),
                params: NetworkParams::from_flat(&net.config, &values)?,
            };
            let same = probe.forward(image)?.activation_pattern() == pattern;
            Ok((probe.loss(image, label)?, same))
        };
        let (plus, same_p) = eval(base[i] + h)?;
        let (minus, same_m) = eval(base[i] - h)?;
        values[i] = base[i];
        if same_p && same_m {
            report.record(analytic[i], (plus - minus) / (2.0 * h));
        } else {
            report.skipped += 1;
        }
    }
    Ok(report)
}

/// Class-score gradient w.r.t. conv layer `layer`'s post-ReLU maps.
/// Entries whose perturbation changes any downstream ReLU sign or pooling
/// choice are skipped; exact ReLU zeros tie inside pooling windows often.
pub fn check_activation_gradients(
    net: &Network,
    image: &Image,
    class: usize,
    layer: usize,
    h: f64,
) -> Result<GradCheck, NetError> {
    let trace = net.forward(image)?;
    let analytic = net.class_score_gradients(&trace, class, layer)?;
    let post = &trace.conv[layer].post;
    let pattern = trace.activation_pattern();
    let mut values: Vec<f64> = post.values().to_vec();
    let mut report = GradCheck::default();
    for i in 0..values.len() {
        let base = values[i];
        let mut score = |x: f64| -> Result<(f64, bool), NetError> {
            values[i] = x;
            let t = Tensor::new(post.dims().to_vec(), values.clone())?;
            let probe = net.forward_from_activation(image, layer, &t)?;
            Ok((probe.logits.values()[class], probe.activation_pattern() == pattern))
        };
        let (plus, same_p) = score(base + h)?;
        let (minus, same_m) = score(base - h)?;
        values[i] = base;
        if same_p && same_m {
            report.record(analytic.values()[i], (plus - minus) / (2.0 * h));
        } else {
            report.skipped += 1;
        }
    }
    Ok(report)
}

/// A random small network with nonzero biases, a random image and label.
/// Sizes stay small so every parameter can be probed.
pub fn random_case(seed: u64) -> (Network, Image, usize) {
    use crate::tinynet::{ConvLayerSpec, NetworkConfig};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let input_size = rng.random_range(6..=10);
    let layer = |rng: &mut rand_chacha::ChaCha8Rng, pool: bool| ConvLayerSpec {
        filters: rng.random_range(1..=3),
        kernel: [1, 3][rng.random_range(0..2)],
        stride: 1,
        pool_after: pool,
    };
    let first_pool = rng.random_bool(0.5);
    let second_pool = rng.random_bool(0.5);
    let config = NetworkConfig {
        input_size,
        conv_layers: alloc::vec![layer(&mut rng, first_pool), layer(&mut rng, second_pool)],
        hidden_units: rng.random_range(3..=6),
        num_classes: rng.random_range(2..=4),
        seed,
    };
    let mut net = Network::init(config).expect("valid random config");
    let mut flat = net.params.flatten();
    let template = NetworkParams::zeros(&net.config).expect("valid");
    // Biases are zero after init; give them random values too.
    let mut offset = 0;
    for (k, t) in template.tensors().iter().enumerate() {
        if k % 2 == 1 {
            for v in &mut flat[offset..offset + t.len()] {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        offset += t.len();
    }
    net.params = NetworkParams::from_flat(&net.config, &flat).expect("same layout");
    let pixels: Vec<f64> = (0..input_size * input_size).map(|_| rng.random_range(0.0..1.0)).collect();
    let image = Image::new(Tensor::new(alloc::vec![input_size, input_size], pixels).expect("shape")).expect("in range");
    let label = rng.random_range(0..net.config.num_classes);
    (net, image, label)
}
