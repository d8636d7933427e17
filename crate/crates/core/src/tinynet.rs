//! A small single-channel CNN: `conv -> ReLU -> [max-pool]` stacks, one
//! hidden ReLU dense layer and a softmax head, with exact backpropagation.
//!
//! Convolutions use "same" zero padding (`kernel / 2`) and pooling is 2x2
//! with stride 2, truncating odd extents.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Image, Tensor, TensorError};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("image is {got_h}x{got_w}, network expects {expected}x{expected}")]
    InputShape {
        expected: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("class index {index} out of range for {num_classes} classes")]
    InvalidClass { index: usize, num_classes: usize },
    #[error("layer index {index} out of range for {num_layers} conv layers")]
    InvalidLayer { index: usize, num_layers: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("sample {sample} has label {label}, network has {num_classes} classes")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("parameter vector has {got} values, config needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvLayerSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool_after: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetworkConfig {
    pub input_size: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    pub hidden_units: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Two conv layers (8 filters 5x5, 16 filters 3x3, each pooled) and a
    /// 32-unit hidden layer.
    pub fn small(input_size: usize, num_classes: usize, seed: u64) -> Self {
        Self::two_layer(input_size, [8, 16], num_classes, seed)
    }

    /// Same shape as [`NetworkConfig::small`] with 16 and 32 filters. The
    /// extra filters make all-zero Grad-CAM maps much rarer.
    pub fn wide(input_size: usize, num_classes: usize, seed: u64) -> Self {
        Self::two_layer(input_size, [16, 32], num_classes, seed)
    }

    fn two_layer(input_size: usize, filters: [usize; 2], num_classes: usize, seed: u64) -> Self {
        Self {
            input_size,
            conv_layers: vec![
                ConvLayerSpec {
                    filters: filters[0],
                    kernel: 5,
                    stride: 1,
                    pool_after: true,
                },
                ConvLayerSpec {
                    filters: filters[1],
                    kernel: 3,
                    stride: 1,
                    pool_after: true,
                },
            ],
            hidden_units: 32,
            num_classes,
            seed,
        }
    }

    /// Validates the config and derives every layer's spatial geometry.
    pub fn geometry(&self) -> Result<Vec<LayerGeometry>, NetError> {
        if self.input_size == 0 {
            return Err(NetError::Config("inputSize must be at least 1".into()));
        }
        if self.conv_layers.len() < 2 {
            return Err(NetError::Config(format!(
                "at least 2 conv layers required, got {}",
                self.conv_layers.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(NetError::Config(format!(
                "numClasses must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden_units == 0 {
            return Err(NetError::Config("hiddenUnits must be at least 1".into()));
        }
        let mut geo = Vec::with_capacity(self.conv_layers.len());
        let (mut ch, mut h, mut w) = (1, self.input_size, self.input_size);
        for (i, spec) in self.conv_layers.iter().enumerate() {
            if spec.filters == 0 || spec.stride == 0 {
                return Err(NetError::Config(format!(
                    "conv layer {i}: filters and stride must be at least 1"
                )));
            }
            if spec.kernel % 2 == 0 {
                return Err(NetError::Config(format!(
                    "conv layer {i}: kernel must be odd, got {}",
                    spec.kernel
                )));
            }
            let out_h = (h - 1) / spec.stride + 1;
            let out_w = (w - 1) / spec.stride + 1;
            let (next_h, next_w) = if spec.pool_after {
                (out_h / 2, out_w / 2)
            } else {
                (out_h, out_w)
            };
            if next_h == 0 || next_w == 0 {
                return Err(NetError::Config(format!(
                    "conv layer {i}: pooling reduces {out_h}x{out_w} below 1 pixel"
                )));
            }
            geo.push(LayerGeometry {
                in_channels: ch,
                in_h: h,
                in_w: w,
                filters: spec.filters,
                kernel: spec.kernel,
                stride: spec.stride,
                out_h,
                out_w,
                pool: spec.pool_after,
                next_h,
                next_w,
            });
            ch = spec.filters;
            h = next_h;
            w = next_w;
        }
        Ok(geo)
    }

    pub fn flat_features(&self) -> Result<usize, NetError> {
        let geo = self.geometry()?;
        let last = geo.last().expect("at least two layers");
        Ok(last.filters * last.next_h * last.next_w)
    }

    pub fn last_conv_layer(&self) -> usize {
        self.conv_layers.len() - 1
    }
}

/// Spatial bookkeeping for one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pool: bool,
    pub next_h: usize,
    pub next_w: usize,
}

impl LayerGeometry {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    /// `[filters, in_channels, kernel, kernel]`
    pub weight: Tensor,
    /// `[filters]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `[outputs, inputs]`
    pub weight: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub conv: Vec<ConvParams>,
    pub hidden: DenseParams,
    pub output: DenseParams,
}

impl NetworkParams {
    pub fn zeros(config: &NetworkConfig) -> Result<Self, NetError> {
        let geo = config.geometry()?;
        let flat = config.flat_features()?;
        let conv = geo
            .iter()
            .map(|g| ConvParams {
                weight: Tensor::zeros(&[g.filters, g.in_channels, g.kernel, g.kernel]),
                bias: Tensor::zeros(&[g.filters]),
            })
            .collect();
        Ok(Self {
            conv,
            hidden: DenseParams {
                weight: Tensor::zeros(&[config.hidden_units, flat]),
                bias: Tensor::zeros(&[config.hidden_units]),
            },
            output: DenseParams {
                weight: Tensor::zeros(&[config.num_classes, config.hidden_units]),
                bias: Tensor::zeros(&[config.num_classes]),
            },
        })
    }

    pub(crate) fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.extend([
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.hidden.weight);
        out.push(&mut self.hidden.bias);
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters in a fixed order: each conv layer's weight then bias,
    /// then the hidden layer, then the output layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            out.extend_from_slice(t.values());
        }
        out
    }

    pub fn from_flat(config: &NetworkConfig, values: &[f64]) -> Result<Self, NetError> {
        let mut params = Self::zeros(config)?;
        let expected = params.num_values();
        if values.len() != expected {
            return Err(NetError::ParamCount {
                expected,
                got: values.len(),
            });
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            let n = t.len();
            *t = Tensor::new(t.dims().to_vec(), values[offset..offset + n].to_vec())?;
            offset += n;
        }
        Ok(params)
    }

    /// `self += scale * other`, elementwise over every parameter.
    fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            let values = dst
                .values()
                .iter()
                .zip(src.values())
                .map(|(a, b)| a + scale * b)
                .collect();
            *dst = Tensor::from_parts(dst.dims().to_vec(), values);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.values().iter().all(|v| v.is_finite()))
    }
}

/// Activations of one conv layer for a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTrace {
    /// Convolution output before ReLU, `[filters, out_h, out_w]`.
    pub pre: Tensor,
    /// ReLU output, `[filters, out_h, out_w]`. These are the maps Grad-CAM weights.
    pub post: Tensor,
    /// Max-pooled output when the layer pools, `[filters, next_h, next_w]`.
    pub pooled: Option<Tensor>,
    pool_argmax: Vec<usize>,
}

impl ConvTrace {
    pub fn output(&self) -> &Tensor {
        self.pooled.as_ref().unwrap_or(&self.post)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub conv: Vec<ConvTrace>,
    pub hidden_pre: Tensor,
    pub hidden_post: Tensor,
    pub logits: Tensor,
    pub probabilities: Tensor,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        argmax(self.probabilities.values())
    }

    /// Sign/argmax pattern of every piecewise-linear unit. Two inputs with the
    /// same pattern lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<u64> {
        let mut pattern = Vec::new();
        for c in &self.conv {
            pattern.extend(c.pre.values().iter().map(|&v| (v > 0.0) as u64));
            pattern.extend(c.pool_argmax.iter().map(|&i| i as u64));
        }
        pattern.extend(self.hidden_pre.values().iter().map(|&v| (v > 0.0) as u64));
        pattern
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stabilized softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - m)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Backward {
    /// Gradient w.r.t. every parameter (zeros when not requested).
    pub params: Option<NetworkParams>,
    /// Gradient w.r.t. each conv layer's post-ReLU maps, for the layers the
    /// pass reached (lower layers are `None`).
    pub post_activation: Vec<Option<Tensor>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.05,
            batch_size: 16,
        }
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: NetworkParams,
}

impl Network {
    /// He-uniform weights drawn from `U(-b, b)` with `b = sqrt(6 / fan_in)`;
    /// biases are zero. Deterministic in `config.seed`.
    pub fn init(config: NetworkConfig) -> Result<Self, NetError> {
        let mut params = NetworkParams::zeros(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(INIT_STREAM);
        let mut fill = |t: &mut Tensor, fan_in: usize| {
            let bound = libm::sqrt(6.0 / fan_in as f64);
            let values = (0..t.len()).map(|_| rng.random_range(-bound..bound)).collect();
            *t = Tensor::from_parts(t.dims().to_vec(), values);
        };
        for c in &mut params.conv {
            let d = c.weight.dims();
            let fan_in = d[1] * d[2] * d[3];
            fill(&mut c.weight, fan_in);
        }
        let fan_in = params.hidden.weight.dims()[1];
        fill(&mut params.hidden.weight, fan_in);
        fill(&mut params.output.weight, config.hidden_units);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: NetworkConfig, params: NetworkParams) -> Result<Self, NetError> {
        let expected = NetworkParams::zeros(&config)?;
        for (a, b) in expected.tensors().iter().zip(params.tensors()) {
            if a.dims() != b.dims() {
                return Err(NetError::Config(format!(
                    "parameter shape {:?} does not match config shape {:?}",
                    b.dims(),
                    a.dims()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn num_conv_layers(&self) -> usize {
        self.config.conv_layers.len()
    }

    fn check_layer(&self, layer: usize) -> Result<(), NetError> {
        if layer >= self.num_conv_layers() {
            return Err(NetError::InvalidLayer {
                index: layer,
                num_layers: self.num_conv_layers(),
            });
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<(), NetError> {
        if class >= self.num_classes() {
            return Err(NetError::InvalidClass {
                index: class,
                num_classes: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, image: &Image) -> Result<ForwardTrace, NetError> {
        let size = self.config.input_size;
        if image.height() != size || image.width() != size {
            return Err(NetError::InputShape {
                expected: size,
                got_h: image.height(),
                got_w: image.width(),
            });
        }
        let geo = self.config.geometry()?;
        let input = Tensor::from_parts(vec![1, size, size], image.pixels().values().to_vec());
        let mut conv = Vec::with_capacity(geo.len());
        for (g, p) in geo.iter().zip(&self.params.conv) {
            let layer_in = conv.last().map(ConvTrace::output).unwrap_or(&input);
            conv.push(conv_layer_forward(g, p, layer_in));
        }
        let flat = conv.last().expect("at least two layers").output().values();
        let (hidden_pre, hidden_post, logits) = self.head_forward(flat);
        let probabilities = softmax(logits.values());
        Ok(ForwardTrace {
            input,
            conv,
            hidden_pre,
            hidden_post,
            logits,
            probabilities: Tensor::from_parts(vec![self.num_classes()], probabilities),
        })
    }

    fn head_forward(&self, flat: &[f64]) -> (Tensor, Tensor, Tensor) {
        let hidden_pre = dense_forward(&self.params.hidden, flat);
        let hidden_post = hidden_pre.map(relu);
        let logits = dense_forward(&self.params.output, hidden_post.values());
        (hidden_pre, hidden_post, logits)
    }

    /// Logits obtained by replacing layer `layer`'s post-ReLU maps with
    /// `post` and running the rest of the network. Used for gradient checks.
    pub fn logits_from_activation(
        &self,
        image: &Image,
        layer: usize,
        post: &Tensor,
    ) -> Result<Tensor, NetError> {
        Ok(self.forward_from_activation(image, layer, post)?.logits)
    }

    /// Full trace with layer `layer`'s post-ReLU maps replaced by `post`.
    /// That layer keeps its original pre-activations; its pooling and every
    /// later layer are recomputed.
    pub fn forward_from_activation(
        &self,
        image: &Image,
        layer: usize,
        post: &Tensor,
    ) -> Result<ForwardTrace, NetError> {
        self.check_layer(layer)?;
        let mut trace = self.forward(image)?;
        if post.dims() != trace.conv[layer].post.dims() {
            return Err(TensorError::ShapeMismatch {
                left: post.dims().to_vec(),
                right: trace.conv[layer].post.dims().to_vec(),
            }
            .into());
        }
        let geo = self.config.geometry()?;
        let replaced = &mut trace.conv[layer];
        replaced.post = post.clone();
        if geo[layer].pool {
            let (t, idx) = max_pool(post, &geo[layer]);
            replaced.pooled = Some(t);
            replaced.pool_argmax = idx;
        }
        for l in layer + 1..geo.len() {
            trace.conv[l] = conv_layer_forward(&geo[l], &self.params.conv[l], trace.conv[l - 1].output());
        }
        let (hidden_pre, hidden_post, logits) = self.head_forward(trace.conv[geo.len() - 1].output().values());
        trace.probabilities = Tensor::from_parts(vec![self.num_classes()], softmax(logits.values()));
        trace.hidden_pre = hidden_pre;
        trace.hidden_post = hidden_post;
        trace.logits = logits;
        Ok(trace)
    }

    /// Backpropagates `dlogits` (gradient of some scalar w.r.t. the logits).
    ///
    /// Parameter gradients are accumulated only if `want_params`; activation
    /// gradients are propagated down to conv layer `lowest_layer`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dlogits: &[f64],
        want_params: bool,
        lowest_layer: usize,
    ) -> Result<Backward, NetError> {
        let geo = self.config.geometry()?;
        let n_layers = geo.len();
        let lowest = if want_params { 0 } else { lowest_layer.min(n_layers - 1) };
        let mut grads = if want_params {
            Some(NetworkParams::zeros(&self.config)?)
        } else {
            None
        };

        // Output layer.
        let hidden = self.config.hidden_units;
        let w_out = self.params.output.weight.values();
        let mut d_hidden = vec![0.0; hidden];
        for (c, &dz) in dlogits.iter().enumerate() {
            for (h, dh) in d_hidden.iter_mut().enumerate() {
                *dh += w_out[c * hidden + h] * dz;
            }
        }
        if let Some(g) = grads.as_mut() {
            let hp = trace.hidden_post.values();
            let dw = outer(dlogits, hp);
            g.output.weight = Tensor::from_parts(g.output.weight.dims().to_vec(), dw);
            g.output.bias = Tensor::from_parts(vec![dlogits.len()], dlogits.to_vec());
        }

        // Hidden layer.
        for (dh, &pre) in d_hidden.iter_mut().zip(trace.hidden_pre.values()) {
            if pre <= 0.0 {
                *dh = 0.0;
            }
        }
        let flat = trace.conv[n_layers - 1].output().values();
        let n_flat = flat.len();
        let w_hid = self.params.hidden.weight.values();
        let mut d_flat = vec![0.0; n_flat];
        for (h, &dh) in d_hidden.iter().enumerate() {
            if dh == 0.0 {
                continue;
            }
            let row = &w_hid[h * n_flat..(h + 1) * n_flat];
            for (df, &w) in d_flat.iter_mut().zip(row) {
                *df += w * dh;
            }
        }
        if let Some(g) = grads.as_mut() {
            g.hidden.weight = Tensor::from_parts(g.hidden.weight.dims().to_vec(), outer(&d_hidden, flat));
            g.hidden.bias = Tensor::from_parts(vec![hidden], d_hidden.clone());
        }

        // Conv stack, top to bottom.
        let mut post_grads: Vec<Option<Tensor>> = vec![None; n_layers];
        let mut d_out = d_flat;
        for l in (lowest..n_layers).rev() {
            let g = &geo[l];
            let t = &trace.conv[l];
            let mut d_post = if g.pool {
                let mut d = vec![0.0; g.filters * g.out_h * g.out_w];
                for (k, &src) in t.pool_argmax.iter().enumerate() {
                    d[src] += d_out[k];
                }
                d
            } else {
                d_out
            };
            post_grads[l] = Some(Tensor::from_parts(t.post.dims().to_vec(), d_post.clone()));
            let needs_input_grad = l > lowest;
            if !needs_input_grad && grads.is_none() {
                break;
            }
            for (d, &pre) in d_post.iter_mut().zip(t.pre.values()) {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            }
            let layer_in = if l == 0 { &trace.input } else { trace.conv[l - 1].output() };
            let (dw, db, d_in) = conv_backward(
                g,
                &self.params.conv[l],
                layer_in,
                &d_post,
                grads.is_some(),
                needs_input_grad,
            );
            if let Some(gr) = grads.as_mut() {
                gr.conv[l].weight = Tensor::from_parts(gr.conv[l].weight.dims().to_vec(), dw);
                gr.conv[l].bias = Tensor::from_parts(vec![g.filters], db);
            }
            d_out = d_in;
        }
        Ok(Backward {
            params: grads,
            post_activation: post_grads,
        })
    }

    /// Exact gradient of the pre-softmax score of `class` w.r.t. the post-ReLU
    /// maps of conv layer `layer`; same shape as those maps.
    pub fn class_score_gradients(
        &self,
        trace: &ForwardTrace,
        class: usize,
        layer: usize,
    ) -> Result<Tensor, NetError> {
        self.check_class(class)?;
        self.check_layer(layer)?;
        let mut dlogits = vec![0.0; self.num_classes()];
        dlogits[class] = 1.0;
        let back = self.backward(trace, &dlogits, false, layer)?;
        Ok(back.post_activation[layer].clone().expect("layer reached"))
    }

    /// Softmax cross-entropy of one sample and its parameter gradient.
    pub fn loss_and_gradients(
        &self,
        image: &Image,
        label: usize,
    ) -> Result<(f64, NetworkParams), NetError> {
        self.check_class(label)?;
        let trace = self.forward(image)?;
        let loss = cross_entropy(&trace, label);
        let mut dlogits = trace.probabilities.values().to_vec();
        dlogits[label] -= 1.0;
        let back = self.backward(&trace, &dlogits, true, 0)?;
        Ok((loss, back.params.expect("requested")))
    }

    pub fn loss(&self, image: &Image, label: usize) -> Result<f64, NetError> {
        self.check_class(label)?;
        Ok(cross_entropy(&self.forward(image)?, label))
    }

    /// Predicted class (argmax, ties to the lower index) and probabilities.
    pub fn predict(&self, image: &Image) -> Result<(usize, Vec<f64>), NetError> {
        let trace = self.forward(image)?;
        Ok((trace.predicted_class(), trace.probabilities.into_values()))
    }

    /// One mini-batch SGD step on the mean loss of `batch`; returns that loss.
    pub fn sgd_step(&mut self, batch: &[(&Image, usize)], learning_rate: f64) -> Result<f64, NetError> {
        let mut total = NetworkParams::zeros(&self.config)?;
        let mut loss = 0.0;
        for (image, label) in batch {
            let (l, g) = self.loss_and_gradients(image, *label)?;
            loss += l;
            total.add_scaled(&g, 1.0);
        }
        let n = batch.len() as f64;
        self.params.add_scaled(&total, -learning_rate / n);
        Ok(loss / n)
    }
}

fn cross_entropy(trace: &ForwardTrace, label: usize) -> f64 {
    // log-softmax computed directly from logits for accuracy.
    let z = trace.logits.values();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + libm::log(z.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
    lse - z[label]
}

/// Mini-batch SGD on mean softmax cross-entropy, starting from
/// `Network::init(config)`. Sample order is reshuffled every epoch from the
/// config seed.
pub fn train(
    config: NetworkConfig,
    dataset: &[(Image, usize)],
    options: TrainOptions,
) -> Result<(Network, TrainHistory), NetError> {
    if dataset.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if let Some((sample, (_, label))) = dataset
        .iter()
        .enumerate()
        .find(|(_, (_, l))| *l >= config.num_classes)
    {
        return Err(NetError::LabelOutOfRange {
            sample,
            label: *label,
            num_classes: config.num_classes,
        });
    }
    if options.batch_size == 0 || !(options.learning_rate > 0.0) {
        return Err(NetError::Config(
            "batch size must be positive and learning rate > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut net = Network::init(config)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(options.batch_size) {
            let batch: Vec<(&Image, usize)> = chunk.iter().map(|&i| (&dataset[i].0, dataset[i].1)).collect();
            epoch_loss += net.sgd_step(&batch, options.learning_rate)? * chunk.len() as f64;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || !net.params.all_finite() {
            return Err(NetError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok((net, TrainHistory { epoch_loss: history }))
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

fn dense_forward(p: &DenseParams, input: &[f64]) -> Tensor {
    let n_in = input.len();
    let w = p.weight.values();
    let out: Vec<f64> = p
        .bias
        .values()
        .iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
        })
        .collect();
    let n = out.len();
    Tensor::from_parts(vec![n], out)
}

/// Valid kernel offsets `a` for output row `o`: input row `o*s + a - pad` in `[0, n)`.
fn kernel_range(o: usize, stride: usize, pad: isize, kernel: usize, n: usize) -> (usize, usize) {
    let base = (o * stride) as isize - pad;
    let lo = (-base).max(0) as usize;
    let hi = ((n as isize - base).min(kernel as isize)).max(0) as usize;
    (lo, hi.max(lo))
}

fn conv_layer_forward(g: &LayerGeometry, p: &ConvParams, input: &Tensor) -> ConvTrace {
    let pre = conv_forward(g, p, input.values());
    let post = pre.map(relu);
    let (pooled, pool_argmax) = if g.pool {
        let (t, idx) = max_pool(&post, g);
        (Some(t), idx)
    } else {
        (None, Vec::new())
    };
    ConvTrace {
        pre,
        post,
        pooled,
        pool_argmax,
    }
}

fn conv_forward(g: &LayerGeometry, p: &ConvParams, input: &[f64]) -> Tensor {
    let (k, pad) = (g.kernel, g.pad());
    let w = p.weight.values();
    let b = p.bias.values();
    let mut out = vec![0.0; g.filters * g.out_h * g.out_w];
    for f in 0..g.filters {
        for oy in 0..g.out_h {
            let (ay0, ay1) = kernel_range(oy, g.stride, pad, k, g.in_h);
            for ox in 0..g.out_w {
                let (ax0, ax1) = kernel_range(ox, g.stride, pad, k, g.in_w);
                let mut acc = b[f];
                for c in 0..g.in_channels {
                    let wbase = (f * g.in_channels + c) * k * k;
                    let ibase = c * g.in_h * g.in_w;
                    for ay in ay0..ay1 {
                        let iy = (oy * g.stride + ay) as isize - pad;
                        let irow = ibase + iy as usize * g.in_w;
                        let wrow = wbase + ay * k;
                        for ax in ax0..ax1 {
                            let ix = ((ox * g.stride + ax) as isize - pad) as usize;
                            acc += w[wrow + ax] * input[irow + ix];
                        }
                    }
                }
                out[(f * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    Tensor::from_parts(vec![g.filters, g.out_h, g.out_w], out)
}

fn conv_backward(
    g: &LayerGeometry,
    p: &ConvParams,
    input: &Tensor,
    d_pre: &[f64],
    want_params: bool,
    want_input: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (k, pad) = (g.kernel, g.pad());
    let w = p.weight.values();
    let x = input.values();
    let mut dw = if want_params { vec![0.0; w.len()] } else { Vec::new() };
    let mut db = if want_params { vec![0.0; g.filters] } else { Vec::new() };
    let mut dx = if want_input { vec![0.0; x.len()] } else { Vec::new() };
    for f in 0..g.filters {
        for oy in 0..g.out_h {
            let (ay0, ay1) = kernel_range(oy, g.stride, pad, k, g.in_h);
            for ox in 0..g.out_w {
                let d = d_pre[(f * g.out_h + oy) * g.out_w + ox];
                if d == 0.0 {
                    continue;
                }
                if want_params {
                    db[f] += d;
                }
                let (ax0, ax1) = kernel_range(ox, g.stride, pad, k, g.in_w);
                for c in 0..g.in_channels {
                    let wbase = (f * g.in_channels + c) * k * k;
                    let ibase = c * g.in_h * g.in_w;
                    for ay in ay0..ay1 {
                        let iy = (oy * g.stride + ay) as isize - pad;
                        let irow = ibase + iy as usize * g.in_w;
                        let wrow = wbase + ay * k;
                        for ax in ax0..ax1 {
                            let ix = ((ox * g.stride + ax) as isize - pad) as usize;
                            if want_params {
                                dw[wrow + ax] += d * x[irow + ix];
                            }
                            if want_input {
                                dx[irow + ix] += d * w[wrow + ax];
                            }
                        }
                    }
                }
            }
        }
    }
    (dw, db, dx)
}

/// 2x2 stride-2 max pooling. Returns the pooled maps and, per pooled cell,
/// the flat index of the winning input (first maximum in row-major order).
fn max_pool(post: &Tensor, g: &LayerGeometry) -> (Tensor, Vec<usize>) {
    let v = post.values();
    let mut out = Vec::with_capacity(g.filters * g.next_h * g.next_w);
    let mut idx = Vec::with_capacity(out.capacity());
    for f in 0..g.filters {
        for py in 0..g.next_h {
            for px in 0..g.next_w {
                let mut best = (f * g.out_h + 2 * py) * g.out_w + 2 * px;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (f * g.out_h + 2 * py + dy) * g.out_w + 2 * px + dx;
                    if v[i] > v[best] {
                        best = i;
                    }
                }
                out.push(v[best]);
                idx.push(best);
            }
        }
    }
    (Tensor::from_parts(vec![g.filters, g.next_h, g.next_w], out), idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> NetworkConfig {
        NetworkConfig {
            input_size: 6,
            conv_layers: vec![
                ConvLayerSpec {
                    filters: 2,
                    kernel: 3,
                    stride: 1,
                    pool_after: true,
                },
                ConvLayerSpec {
                    filters: 3,
                    kernel: 3,
                    stride: 1,
                    pool_after: false,
                },
            ],
            hidden_units: 4,
            num_classes: 3,
            seed,
        }
    }

    fn image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(Tensor::from_fn2(size, size, |_, _| rng.random_range(0.0..1.0))).unwrap()
    }

    /// 1 filter, 1x1 kernels, no pooling: conv1 copies the image, conv2 copies conv1.
    pub(crate) fn identity_network(size: usize, head_weight: f64) -> Network {
        let conv = ConvLayerSpec {
            filters: 1,
            kernel: 1,
            stride: 1,
            pool_after: false,
        };
        let config = NetworkConfig {
            input_size: size,
            conv_layers: vec![conv.clone(), conv],
            hidden_units: 1,
            num_classes: 2,
            seed: 0,
        };
        let mut params = NetworkParams::zeros(&config).unwrap();
        for c in &mut params.conv {
            c.weight = Tensor::filled(&[1, 1, 1, 1], 1.0);
        }
        params.hidden.weight = Tensor::filled(&[1, size * size], 1.0);
        params.output.weight = Tensor::new(vec![2, 1], vec![head_weight, 0.0]).unwrap();
        Network::from_parts(config, params).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config(0);
        c.conv_layers.truncate(1);
        assert!(matches!(c.geometry(), Err(NetError::Config(_))));
        let mut c = tiny_config(0);
        c.num_classes = 1;
        assert!(c.geometry().is_err());
        let mut c = tiny_config(0);
        c.conv_layers[1].pool_after = true;
        c.input_size = 2;
        // 2 -> pool 1 -> pool 0
        assert!(matches!(Network::init(c), Err(NetError::Config(_))));
        let mut c = tiny_config(0);
        c.conv_layers[0].kernel = 2;
        assert!(c.geometry().is_err());
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = Network::init(tiny_config(7)).unwrap();
        let b = Network::init(tiny_config(7)).unwrap();
        let c = Network::init(tiny_config(8)).unwrap();
        assert_eq!(a.params.flatten(), b.params.flatten());
        assert_ne!(a.params.flatten(), c.params.flatten());
        for conv in &a.params.conv {
            assert!(conv.bias.values().iter().all(|&v| v == 0.0));
        }
        assert!(a.params.hidden.bias.values().iter().all(|&v| v == 0.0));
        assert!(a.params.output.bias.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let net = Network::init(tiny_config(3)).unwrap();
        let flat = net.params.flatten();
        let back = NetworkParams::from_flat(&net.config, &flat).unwrap();
        assert_eq!(back, net.params);
        assert!(matches!(
            NetworkParams::from_flat(&net.config, &flat[1..]),
            Err(NetError::ParamCount { .. })
        ));
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut net = Network::init(tiny_config(1)).unwrap();
        net.params.output.weight = Tensor::zeros(net.params.output.weight.dims());
        let trace = net.forward(&image(6, 2)).unwrap();
        for &p in trace.probabilities.values() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let z = [0.3, -1.2, 2.5, 0.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 17.25).collect();
        let a = softmax(&z);
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_network_layer_one_is_relu_of_image() {
        let net = identity_network(2, 1.0);
        let img = Image::new(Tensor::new(vec![2, 2], vec![0.0, 0.25, 0.5, 1.0]).unwrap()).unwrap();
        let trace = net.forward(&img).unwrap();
        assert_eq!(trace.conv[0].post.values(), img.pixels().values());
    }

    #[test]
    fn linear_identity_network_gradient_is_weight_product() {
        // score_0 = w_out * relu(sum_ij A(i,j)) so d score_0 / dA = w_out * w_hidden.
        let net = identity_network(2, 1.5);
        let img = Image::new(Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
        let trace = net.forward(&img).unwrap();
        for layer in 0..2 {
            let g = net.class_score_gradients(&trace, 0, layer).unwrap();
            assert_eq!(g.dims(), &[1, 2, 2]);
            assert!(g.values().iter().all(|&v| v == 1.5));
        }
        let g1 = net.class_score_gradients(&trace, 1, 1).unwrap();
        assert!(g1.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut net = identity_network(2, 1.0);
        // Hidden pre-activation negative: everything upstream is dead.
        net.params.hidden.bias = Tensor::filled(&[1], -100.0);
        let img = Image::new(Tensor::filled(&[2, 2], 0.5)).unwrap();
        let trace = net.forward(&img).unwrap();
        let g = net.class_score_gradients(&trace, 0, 0).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_indices_are_rejected() {
        let net = Network::init(tiny_config(1)).unwrap();
        let trace = net.forward(&image(6, 1)).unwrap();
        assert!(matches!(
            net.class_score_gradients(&trace, 3, 0),
            Err(NetError::InvalidClass { .. })
        ));
        assert!(matches!(
            net.class_score_gradients(&trace, 0, 2),
            Err(NetError::InvalidLayer { .. })
        ));
        assert!(matches!(net.forward(&image(5, 1)), Err(NetError::InputShape { .. })));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn single_step_reduces_loss() {
        let mut net = Network::init(tiny_config(4)).unwrap();
        let img = image(6, 9);
        let before = net.loss(&img, 2).unwrap();
        net.sgd_step(&[(&img, 2)], 1e-3).unwrap();
        assert!(net.loss(&img, 2).unwrap() < before);
    }

    #[test]
    fn train_rejects_bad_data() {
        let cfg = tiny_config(1);
        assert_eq!(
            train(cfg.clone(), &[], TrainOptions::default()).unwrap_err(),
            NetError::EmptyDataset
        );
        let data = vec![(image(6, 1), 3)];
        assert!(matches!(
            train(cfg, &data, TrainOptions::default()),
            Err(NetError::LabelOutOfRange { label: 3, .. })
        ));
    }
}
