//! Network description, parameters, and channel masks.
//!
//! A network is an ordered list of [`LayerSpec`]s plus per-layer parameter
//! tensors. Channel ablation is expressed as a [`ChannelMask`]: a {0,1}
//! multiplier per output channel of a conv or dense layer, applied at the
//! end of that layer's block (after batchnorm / activation / dropout).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        channels: usize,
        epsilon: f32,
        momentum: f32,
    },
    ChannelDropout {
        rate: f32,
    },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "pool",
            LayerSpec::BatchNorm { .. } => "bn",
            LayerSpec::ChannelDropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    /// True for layers whose output channels can be masked (ablation targets).
    pub fn is_maskable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }
}

/// Shape of one activation between layers: either a feature map or a flat vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActShape {
    Map { channels: usize, height: usize, width: usize },
    Flat { features: usize },
}

impl ActShape {
    pub fn element_count(&self) -> usize {
        match self {
            ActShape::Map { channels, height, width } => channels * height * width,
            ActShape::Flat { features } => *features,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            ActShape::Map { channels, height, width } => vec![*channels, *height, *width],
            ActShape::Flat { features } => vec![*features],
        }
    }

    /// Channel count: map channels, or vector length for flat activations.
    pub fn channels(&self) -> usize {
        match self {
            ActShape::Map { channels, .. } => *channels,
            ActShape::Flat { features } => *features,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    /// Input shape as (channels, height, width).
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, input_shape: (usize, usize, usize), class_count: usize) -> Result<Self> {
        let spec = NetworkSpec {
            layers,
            input_shape,
            class_count,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check layer-to-layer consistency; returns per-layer output shapes.
    pub fn validate(&self) -> Result<Vec<ActShape>> {
        if self.class_count == 0 {
            return Err(Error::InvalidSpec("class count must be positive".into()));
        }
        let softmax_count = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Softmax))
            .count();
        if softmax_count != 1 || !matches!(self.layers.last(), Some(LayerSpec::Softmax)) {
            return Err(Error::InvalidSpec(
                "spec must contain exactly one softmax, in final position".into(),
            ));
        }

        let (c, h, w) = self.input_shape;
        let mut shape = ActShape::Map { channels: c, height: h, width: w };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            shape = self.infer_output(idx, layer, &shape)?;
            shapes.push(shape.clone());
        }
        match shapes.last() {
            Some(ActShape::Flat { features }) if *features == self.class_count => Ok(shapes),
            other => Err(Error::InvalidSpec(format!(
                "final layer must produce a vector of length {}, got {:?}",
                self.class_count, other
            ))),
        }
    }

    fn infer_output(&self, idx: usize, layer: &LayerSpec, input: &ActShape) -> Result<ActShape> {
        let err = |msg: String| Error::InvalidSpec(format!("layer {idx} ({}): {msg}", layer.kind_name()));
        match layer {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                if *kernel == 0 || *stride == 0 || *out_channels == 0 {
                    return Err(err("kernel, stride and out_channels must be positive".into()));
                }
                match input {
                    ActShape::Map { channels, height, width } => {
                        if channels != in_channels {
                            return Err(err(format!(
                                "expects {in_channels} input channels, got {channels}"
                            )));
                        }
                        let hp = height + 2 * padding;
                        let wp = width + 2 * padding;
                        if hp < *kernel || wp < *kernel {
                            return Err(err("kernel larger than padded input".into()));
                        }
                        Ok(ActShape::Map {
                            channels: *out_channels,
                            height: (hp - kernel) / stride + 1,
                            width: (wp - kernel) / stride + 1,
                        })
                    }
                    ActShape::Flat { .. } => Err(err("requires a feature-map input".into())),
                }
            }
            LayerSpec::Dense { in_features, out_features } => match input {
                ActShape::Flat { features } if features == in_features => {
                    Ok(ActShape::Flat { features: *out_features })
                }
                other => Err(err(format!(
                    "expects a flat input of {in_features} features, got {other:?}"
                ))),
            },
            LayerSpec::Relu => Ok(input.clone()),
            LayerSpec::MaxPool2d { kernel, stride } => {
                if *kernel == 0 || *stride == 0 {
                    return Err(err("kernel and stride must be positive".into()));
                }
                match input {
                    ActShape::Map { channels, height, width } => {
                        if height < kernel || width < kernel {
                            return Err(err("pool kernel larger than input".into()));
                        }
                        Ok(ActShape::Map {
                            channels: *channels,
                            height: (height - kernel) / stride + 1,
                            width: (width - kernel) / stride + 1,
                        })
                    }
                    ActShape::Flat { .. } => Err(err("requires a feature-map input".into())),
                }
            }
            LayerSpec::BatchNorm { channels, epsilon, .. } => {
                if *epsilon <= 0.0 {
                    return Err(err("epsilon must be positive".into()));
                }
                if input.channels() != *channels {
                    return Err(err(format!(
                        "expects {channels} channels, got {}",
                        input.channels()
                    )));
                }
                Ok(input.clone())
            }
            LayerSpec::ChannelDropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(err(format!("dropout rate {rate} not in [0, 1)")));
                }
                Ok(input.clone())
            }
            LayerSpec::Flatten => Ok(ActShape::Flat {
                features: input.element_count(),
            }),
            LayerSpec::Softmax => match input {
                ActShape::Flat { features } => Ok(ActShape::Flat { features: *features }),
                ActShape::Map { .. } => Err(err("requires a flat input".into())),
            },
        }
    }

    /// Stable human-readable layer names: conv1, bn1, pool1, dense1, ...
    pub fn layer_names(&self) -> Vec<String> {
        let mut counters: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        self.layers
            .iter()
            .map(|l| {
                let kind = l.kind_name();
                let n = counters.entry(kind).or_insert(0);
                *n += 1;
                format!("{kind}{n}")
            })
            .collect()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layer_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("no layer named '{name}'")))
    }

    /// Index of the last layer of the block started by `layer`: consecutive
    /// batchnorm / relu / dropout layers after a conv or dense layer belong
    /// to its block, and channel masks apply to the block output.
    pub fn block_end(&self, layer: usize) -> usize {
        let mut end = layer;
        while end + 1 < self.layers.len() {
            match self.layers[end + 1] {
                LayerSpec::BatchNorm { .. } | LayerSpec::Relu | LayerSpec::ChannelDropout { .. } => {
                    end += 1
                }
                _ => break,
            }
        }
        end
    }

    /// Output channel count of a maskable layer.
    pub fn layer_width(&self, layer: usize) -> Result<usize> {
        match self.layers.get(layer) {
            Some(LayerSpec::Conv2d { out_channels, .. }) => Ok(*out_channels),
            Some(LayerSpec::Dense { out_features, .. }) => Ok(*out_features),
            Some(other) => Err(Error::InvalidInput(format!(
                "layer {layer} ({}) has no maskable channels",
                other.kind_name()
            ))),
            None => Err(Error::InvalidInput(format!("layer {layer} does not exist"))),
        }
    }
}

/// Learnable (and running-stat) tensors of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerParams {
    None,
    Conv {
        /// [out_channels, in_channels, kernel, kernel]
        weight: Tensor,
        /// [out_channels]
        bias: Tensor,
    },
    Dense {
        /// [out_features, in_features]
        weight: Tensor,
        /// [out_features]
        bias: Tensor,
    },
    BatchNorm {
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
    },
}

impl LayerParams {
    /// Named tensors in a fixed serialization order. Running statistics are
    /// part of the checkpoint but are not gradient targets.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv { weight, bias } | LayerParams::Dense { weight, bias } => {
                vec![("weight", weight), ("bias", bias)]
            }
            LayerParams::BatchNorm { gamma, beta, running_mean, running_var } => vec![
                ("gamma", gamma),
                ("beta", beta),
                ("running_mean", running_mean),
                ("running_var", running_var),
            ],
        }
    }

    /// Names of the gradient-carrying tensors (running stats excluded).
    pub fn trainable_names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::None => &[],
            LayerParams::Conv { .. } | LayerParams::Dense { .. } => &["weight", "bias"],
            LayerParams::BatchNorm { .. } => &["gamma", "beta"],
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.named_tensors().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match (self, name) {
            (LayerParams::Conv { weight, .. }, "weight") => Some(weight),
            (LayerParams::Conv { bias, .. }, "bias") => Some(bias),
            (LayerParams::Dense { weight, .. }, "weight") => Some(weight),
            (LayerParams::Dense { bias, .. }, "bias") => Some(bias),
            (LayerParams::BatchNorm { gamma, .. }, "gamma") => Some(gamma),
            (LayerParams::BatchNorm { beta, .. }, "beta") => Some(beta),
            (LayerParams::BatchNorm { running_mean, .. }, "running_mean") => Some(running_mean),
            (LayerParams::BatchNorm { running_var, .. }, "running_var") => Some(running_var),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<LayerParams>,
}

impl Network {
    /// He-normal initialization of conv/dense weights, zero biases,
    /// identity batchnorm. Deterministic for a given seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.layers.len());
        for layer in &spec.layers {
            params.push(match layer {
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    let fan_in = in_channels * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("valid stddev");
                    let n = out_channels * fan_in;
                    let data: Vec<f32> = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
                    LayerParams::Conv {
                        weight: Tensor::from_vec(&[*out_channels, *in_channels, *kernel, *kernel], data)?,
                        bias: Tensor::zeros(&[*out_channels]),
                    }
                }
                LayerSpec::Dense { in_features, out_features } => {
                    let std = (2.0 / *in_features as f64).sqrt();
                    let dist = Normal::new(0.0, std).expect("valid stddev");
                    let data: Vec<f32> = (0..out_features * in_features)
                        .map(|_| dist.sample(&mut rng) as f32)
                        .collect();
                    LayerParams::Dense {
                        weight: Tensor::from_vec(&[*out_features, *in_features], data)?,
                        bias: Tensor::zeros(&[*out_features]),
                    }
                }
                LayerSpec::BatchNorm { channels, .. } => LayerParams::BatchNorm {
                    gamma: Tensor::filled(&[*channels], 1.0),
                    beta: Tensor::zeros(&[*channels]),
                    running_mean: Tensor::zeros(&[*channels]),
                    running_var: Tensor::filled(&[*channels], 1.0),
                },
                _ => LayerParams::None,
            });
        }
        Ok(Network { spec, params })
    }

    /// Verify that parameter tensor shapes match the spec.
    pub fn validate_params(&self) -> Result<()> {
        let names = self.spec.layer_names();
        for (idx, (layer, params)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let fail = |expected: Vec<usize>, got: Vec<usize>| {
                Err(Error::ShapeMismatch {
                    context: format!("parameters of layer {} ({})", idx, names[idx]),
                    expected,
                    got,
                })
            };
            match (layer, params) {
                (
                    LayerSpec::Conv2d { in_channels, out_channels, kernel, .. },
                    LayerParams::Conv { weight, bias },
                ) => {
                    let want = vec![*out_channels, *in_channels, *kernel, *kernel];
                    if weight.shape() != want.as_slice() {
                        return fail(want, weight.shape().to_vec());
                    }
                    if bias.shape() != [*out_channels] {
                        return fail(vec![*out_channels], bias.shape().to_vec());
                    }
                }
                (LayerSpec::Dense { in_features, out_features }, LayerParams::Dense { weight, bias }) => {
                    let want = vec![*out_features, *in_features];
                    if weight.shape() != want.as_slice() {
                        return fail(want, weight.shape().to_vec());
                    }
                    if bias.shape() != [*out_features] {
                        return fail(vec![*out_features], bias.shape().to_vec());
                    }
                }
                (LayerSpec::BatchNorm { channels, .. }, LayerParams::BatchNorm { gamma, beta, running_mean, running_var }) => {
                    for t in [gamma, beta, running_mean, running_var] {
                        if t.shape() != [*channels] {
                            return fail(vec![*channels], t.shape().to_vec());
                        }
                    }
                }
                (LayerSpec::Relu, LayerParams::None)
                | (LayerSpec::MaxPool2d { .. }, LayerParams::None)
                | (LayerSpec::ChannelDropout { .. }, LayerParams::None)
                | (LayerSpec::Flatten, LayerParams::None)
                | (LayerSpec::Softmax, LayerParams::None) => {}
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "layer {} ({}) has parameters of the wrong kind",
                        idx, names[idx]
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params
            .iter()
            .flat_map(|p| p.named_tensors())
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// Per-channel {0,1} multipliers applied to one layer's block output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelMask {
    pub layer: usize,
    pub multipliers: Vec<f32>,
}

impl ChannelMask {
    /// Mask that zeroes the given channels of a layer, keeping the rest.
    pub fn ablate(spec: &NetworkSpec, layer: usize, channels: &[usize]) -> Result<Self> {
        let width = spec.layer_width(layer)?;
        let mut multipliers = vec![1.0; width];
        for &c in channels {
            if c >= width {
                return Err(Error::InvalidMask(format!(
                    "channel {c} out of range for layer {layer} of width {width}"
                )));
            }
            multipliers[c] = 0.0;
        }
        Ok(ChannelMask { layer, multipliers })
    }

    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layer >= spec.layers.len() {
            return Err(Error::InvalidMask(format!(
                "mask references layer {} but the network has {} layers",
                self.layer,
                spec.layers.len()
            )));
        }
        let width = spec.layer_width(self.layer).map_err(|_| {
            Error::InvalidMask(format!(
                "mask on layer {} ({}) which is not maskable",
                self.layer,
                self.spec_kind(spec)
            ))
        })?;
        if self.multipliers.len() != width {
            return Err(Error::InvalidMask(format!(
                "mask on layer {} has {} multipliers, layer width is {width}",
                self.layer,
                self.multipliers.len()
            )));
        }
        if self.multipliers.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::InvalidMask("mask multipliers must be 0 or 1".into()));
        }
        Ok(())
    }

    fn spec_kind(&self, spec: &NetworkSpec) -> &'static str {
        spec.layers.get(self.layer).map(|l| l.kind_name()).unwrap_or("?")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toynet;

    #[test]
    fn toynet_validates_and_names() {
        let spec = toynet::baseline(8).unwrap();
        let shapes = spec.validate().unwrap();
        assert_eq!(shapes.last(), Some(&ActShape::Flat { features: 8 }));
        let names = spec.layer_names();
        assert_eq!(names[0], "conv1");
        assert!(names.contains(&"conv3".to_string()));
        assert_eq!(spec.layer_index("conv3").unwrap(), 6);
        assert_eq!(spec.layer_width(6).unwrap(), 32);
    }

    #[test]
    fn rejects_two_softmax() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Softmax,
                LayerSpec::Dense { in_features: 4, out_features: 2 },
                LayerSpec::Softmax,
            ],
            input_shape: (1, 2, 2),
            class_count: 2,
        };
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rejects_inconsistent_channel_chain() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_channels: 4, out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 10, out_features: 2 },
                LayerSpec::Softmax,
            ],
            input_shape: (3, 8, 8),
            class_count: 2,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn rejects_dropout_rate_one() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::ChannelDropout { rate: 1.0 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 12, out_features: 2 },
                LayerSpec::Softmax,
            ],
            input_shape: (3, 2, 2),
            class_count: 2,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn block_end_spans_bn_relu_dropout() {
        let spec = toynet::channel_dropout(8, "conv3", 0.5).unwrap();
        let conv3 = spec.layer_index("conv3").unwrap();
        // conv3 -> relu -> dropout
        assert_eq!(spec.block_end(conv3), conv3 + 2);
        let bn = toynet::batchnorm(8).unwrap();
        let c1 = bn.layer_index("conv1").unwrap();
        assert_eq!(bn.block_end(c1), c1 + 2); // conv -> bn -> relu
    }

    #[test]
    fn mask_validation() {
        let spec = toynet::baseline(8).unwrap();
        let conv3 = spec.layer_index("conv3").unwrap();
        let mask = ChannelMask::ablate(&spec, conv3, &[0, 5]).unwrap();
        mask.validate(&spec).unwrap();
        assert_eq!(mask.multipliers.iter().filter(|&&m| m == 0.0).count(), 2);

        assert!(ChannelMask::ablate(&spec, conv3, &[99]).is_err());
        let bad = ChannelMask { layer: 999, multipliers: vec![1.0] };
        assert!(bad.validate(&spec).is_err());
        let not_maskable = ChannelMask { layer: 1, multipliers: vec![1.0; 16] };
        assert!(not_maskable.validate(&spec).is_err());
        let bad_values = ChannelMask { layer: conv3, multipliers: vec![0.5; 32] };
        assert!(bad_values.validate(&spec).is_err());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = toynet::baseline(8).unwrap();
        let a = Network::init(spec.clone(), 7).unwrap();
        let b = Network::init(spec, 7).unwrap();
        a.validate_params().unwrap();
        assert_eq!(a, b);
        assert!(a.parameter_count() > 0);
    }
}
