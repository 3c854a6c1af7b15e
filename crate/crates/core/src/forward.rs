//! Batched forward inference with channel masks and rotated-direction
//! interventions.
//!
//! Eval-mode inference is per-image independent (batchnorm uses running
//! statistics, dropout is identity), so outputs are bit-identical no
//! matter how a dataset is partitioned into batches.

use rand::Rng;

use crate::conv::{gemm, im2col, ConvGeom};
use crate::error::{Error, Result};
use crate::net::{ActShape, ChannelMask, LayerParams, LayerSpec, Network, NetworkSpec};
use crate::tensor::{pairwise_sum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How to collapse a unit's spatial map into one scalar per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SpatialReduction {
    Mean,
    Max,
}

/// One sampled realization of every channel-dropout layer for a batch:
/// per-channel multipliers, 0 for dropped channels and 1/(1-rate) for
/// survivors (inverted dropout).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutDraw {
    pub multipliers: Vec<(usize, Vec<f32>)>,
}

impl DropoutDraw {
    pub fn sample(spec: &NetworkSpec, rng: &mut impl Rng) -> Result<Self> {
        let shapes = spec.validate()?;
        let mut multipliers = Vec::new();
        let mut current = ActShape::Map {
            channels: spec.input_shape.0,
            height: spec.input_shape.1,
            width: spec.input_shape.2,
        };
        for (idx, layer) in spec.layers.iter().enumerate() {
            if let LayerSpec::ChannelDropout { rate } = layer {
                let channels = current.channels();
                let keep = 1.0 - rate;
                let mults = (0..channels)
                    .map(|_| {
                        if rng.random::<f32>() < *rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                multipliers.push((idx, mults));
            }
            current = shapes[idx].clone();
        }
        Ok(DropoutDraw { multipliers })
    }

    fn for_layer(&self, idx: usize) -> Option<&[f32]> {
        self.multipliers
            .iter()
            .find(|(l, _)| *l == idx)
            .map(|(_, m)| m.as_slice())
    }
}

/// Zero one coordinate of a rotated copy of a layer's channel space,
/// applied independently at every spatial position of the block output.
/// With `zero = None` this is a pure rotate + inverse-rotate round trip.
#[derive(Clone, Copy, Debug)]
pub struct RotationOp<'a> {
    pub layer: usize,
    pub width: usize,
    /// Row-major orthogonal matrix, `width * width`; columns are the
    /// rotated directions.
    pub q: &'a [f64],
    pub zero: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions<'a> {
    pub mode: Mode,
    pub masks: &'a [ChannelMask],
    pub rotation: Option<RotationOp<'a>>,
    pub dropout: Option<&'a DropoutDraw>,
}

impl Default for ForwardOptions<'static> {
    fn default() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            masks: &[],
            rotation: None,
            dropout: None,
        }
    }
}

/// Batch mean/variance of one batchnorm layer, for running-stat updates.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub layer: usize,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

pub struct ForwardResult {
    /// Output of every layer, each `[batch, ...]`.
    pub activations: Vec<Tensor>,
    pub bn_stats: Vec<BnStats>,
}

impl ForwardResult {
    /// Class-probability matrix `[batch, class_count]`.
    pub fn probs(&self) -> &Tensor {
        self.activations.last().expect("validated spec has layers")
    }
}

pub(crate) struct LayerIo {
    pub shapes: Vec<ActShape>,
    /// mask/rotation application index -> indices into `masks`.
    pub mask_at: Vec<Vec<usize>>,
    pub rotation_at: Option<usize>,
}

pub(crate) fn plan_interventions(spec: &NetworkSpec, opts: &ForwardOptions) -> Result<LayerIo> {
    let shapes = spec.validate()?;
    let mut mask_at = vec![Vec::new(); spec.layers.len()];
    for (i, mask) in opts.masks.iter().enumerate() {
        mask.validate(spec)?;
        mask_at[spec.block_end(mask.layer)].push(i);
    }
    let rotation_at = match &opts.rotation {
        Some(rot) => {
            let width = spec.layer_width(rot.layer)?;
            if width != rot.width || rot.q.len() != width * width {
                return Err(Error::InvalidInput(format!(
                    "rotation basis of width {} does not match layer {} of width {width}",
                    rot.width, rot.layer
                )));
            }
            if let Some(z) = rot.zero {
                if z >= width {
                    return Err(Error::InvalidInput(format!(
                        "rotated direction {z} out of range for width {width}"
                    )));
                }
            }
            Some(spec.block_end(rot.layer))
        }
        None => None,
    };
    if opts.mode == Mode::Train
        && opts.dropout.is_none()
        && spec.layers.iter().any(|l| matches!(l, LayerSpec::ChannelDropout { .. }))
    {
        return Err(Error::InvalidInput(
            "train-mode forward through channel dropout requires a sampled DropoutDraw".into(),
        ));
    }
    Ok(LayerIo {
        shapes,
        mask_at,
        rotation_at,
    })
}

pub(crate) fn check_batch_shape(spec: &NetworkSpec, batch: &Tensor) -> Result<usize> {
    let (c, h, w) = spec.input_shape;
    match batch.shape() {
        [n, bc, bh, bw] if *bc == c && *bh == h && *bw == w && *n > 0 => Ok(*n),
        other => Err(Error::ShapeMismatch {
            context: "forward input batch".into(),
            expected: vec![0, c, h, w],
            got: other.to_vec(),
        }),
    }
}

/// Fill masked channels of a `[batch, channels, spatial]` buffer with 0.
fn apply_channel_zeros(data: &mut [f32], batch: usize, channels: usize, spatial: usize, mult: &[f32]) {
    for b in 0..batch {
        for c in 0..channels {
            if mult[c] == 0.0 {
                let start = (b * channels + c) * spatial;
                data[start..start + spatial].fill(0.0);
            }
        }
    }
}

/// Multiply channels of a `[batch, channels, spatial]` buffer (dropout path).
fn apply_channel_scale(data: &mut [f32], batch: usize, channels: usize, spatial: usize, mult: &[f32]) {
    for b in 0..batch {
        for c in 0..channels {
            let m = mult[c];
            if m == 1.0 {
                continue;
            }
            let start = (b * channels + c) * spatial;
            if m == 0.0 {
                data[start..start + spatial].fill(0.0);
            } else {
                for v in &mut data[start..start + spatial] {
                    *v *= m;
                }
            }
        }
    }
}

/// Rotate channel vectors at every spatial position into basis `q`,
/// optionally zero one coordinate, and rotate back. Accumulates in f64 so
/// the round trip without zeroing is lossless to well below 1e-5.
fn apply_rotation(data: &mut [f32], batch: usize, channels: usize, spatial: usize, rot: &RotationOp) {
    let w = rot.width;
    debug_assert_eq!(channels, w);
    let q = rot.q;
    let mut a = vec![0.0f64; w];
    let mut r = vec![0.0f64; w];
    for b in 0..batch {
        let img = b * channels * spatial;
        for s in 0..spatial {
            for c in 0..w {
                a[c] = data[img + c * spatial + s] as f64;
            }
            // r = Q^T a
            for (j, rj) in r.iter_mut().enumerate() {
                let mut acc = 0.0f64;
                for i in 0..w {
                    acc += q[i * w + j] * a[i];
                }
                *rj = acc;
            }
            if let Some(z) = rot.zero {
                r[z] = 0.0;
            }
            // a' = Q r
            for i in 0..w {
                let mut acc = 0.0f64;
                for (j, rj) in r.iter().enumerate() {
                    acc += q[i * w + j] * rj;
                }
                data[img + i * spatial + s] = acc as f32;
            }
        }
    }
}

fn conv_geom(spec: &LayerSpec, input: &ActShape, output: &ActShape) -> ConvGeom {
    match (spec, input, output) {
        (
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding },
            ActShape::Map { height: ih, width: iw, .. },
            ActShape::Map { height: oh, width: ow, .. },
        ) => ConvGeom {
            in_channels: *in_channels,
            out_channels: *out_channels,
            kernel: *kernel,
            stride: *stride,
            padding: *padding,
            in_h: *ih,
            in_w: *iw,
            out_h: *oh,
            out_w: *ow,
        },
        _ => unreachable!("validated conv layer"),
    }
}

/// Forward one batch through one layer. `cols_out`, when given, receives
/// the im2col patch matrix (training cache). Returns the layer output and,
/// for train-mode batchnorm, the batch statistics.
#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_forward(
    net: &Network,
    idx: usize,
    io: &LayerIo,
    input: &Tensor,
    batch: usize,
    mode: Mode,
    dropout: Option<&DropoutDraw>,
    mut cols_out: Option<&mut Vec<f32>>,
    mut pool_argmax: Option<&mut Vec<u32>>,
) -> Result<(Tensor, Option<BnStats>)> {
    let layer = &net.spec.layers[idx];
    let in_shape = if idx == 0 {
        let (c, h, w) = net.spec.input_shape;
        ActShape::Map { channels: c, height: h, width: w }
    } else {
        io.shapes[idx - 1].clone()
    };
    let out_shape = &io.shapes[idx];
    let mut stats = None;

    let out = match (layer, &net.params[idx]) {
        (LayerSpec::Conv2d { .. }, LayerParams::Conv { weight, bias }) => {
            let geom = conv_geom(layer, &in_shape, out_shape);
            let plen = geom.patch_len();
            let positions = geom.positions();
            let img_len = geom.in_channels * geom.in_h * geom.in_w;
            let mut cols = vec![0.0f32; batch * positions * plen];
            for b in 0..batch {
                im2col(
                    &geom,
                    &input.data()[b * img_len..(b + 1) * img_len],
                    &mut cols[b * positions * plen..(b + 1) * positions * plen],
                );
            }
            // out_pc[b*positions + p, co] = cols row . weight row co
            let mut out_pc = vec![0.0f32; batch * positions * geom.out_channels];
            gemm(
                batch * positions,
                plen,
                geom.out_channels,
                &cols,
                plen as isize,
                1,
                weight.data(),
                1,
                plen as isize,
                &mut out_pc,
                geom.out_channels as isize,
                1,
            );
            let mut data = vec![0.0f32; batch * geom.out_channels * positions];
            let bias = bias.data();
            for b in 0..batch {
                for p in 0..positions {
                    let src = (b * positions + p) * geom.out_channels;
                    for co in 0..geom.out_channels {
                        data[(b * geom.out_channels + co) * positions + p] = out_pc[src + co] + bias[co];
                    }
                }
            }
            if let Some(store) = cols_out.as_deref_mut() {
                *store = cols;
            }
            Tensor::from_vec(
                &[batch, geom.out_channels, geom.out_h, geom.out_w],
                data,
            )?
        }
        (LayerSpec::Dense { in_features, out_features }, LayerParams::Dense { weight, bias }) => {
            let mut data = vec![0.0f32; batch * out_features];
            gemm(
                batch,
                *in_features,
                *out_features,
                input.data(),
                *in_features as isize,
                1,
                weight.data(),
                1,
                *in_features as isize,
                &mut data,
                *out_features as isize,
                1,
            );
            let bias = bias.data();
            for b in 0..batch {
                for (o, bv) in bias.iter().enumerate() {
                    data[b * out_features + o] += bv;
                }
            }
            Tensor::from_vec(&[batch, *out_features], data)?
        }
        (LayerSpec::Relu, _) => {
            let data = input
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect();
            Tensor::from_vec(&batched_dims(batch, out_shape), data)?
        }
        (LayerSpec::MaxPool2d { kernel, stride }, _) => {
            let (channels, ih, iw, oh, ow) = match (&in_shape, out_shape) {
                (
                    ActShape::Map { channels, height: ih, width: iw },
                    ActShape::Map { height: oh, width: ow, .. },
                ) => (*channels, *ih, *iw, *oh, *ow),
                _ => unreachable!("validated pool layer"),
            };
            let mut data = vec![0.0f32; batch * channels * oh * ow];
            let mut argmax = if pool_argmax.is_some() {
                vec![0u32; data.len()]
            } else {
                Vec::new()
            };
            for bc in 0..batch * channels {
                let in_base = bc * ih * iw;
                let out_base = bc * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let iy = oy * stride + ky;
                                let ix = ox * stride + kx;
                                let v = input.data()[in_base + iy * iw + ix];
                                if v > best {
                                    best = v;
                                    best_idx = iy * iw + ix;
                                }
                            }
                        }
                        data[out_base + oy * ow + ox] = best;
                        if !argmax.is_empty() {
                            argmax[out_base + oy * ow + ox] = best_idx as u32;
                        }
                    }
                }
            }
            if let Some(store) = pool_argmax.as_deref_mut() {
                *store = argmax;
            }
            Tensor::from_vec(&[batch, channels, oh, ow], data)?
        }
        (LayerSpec::BatchNorm { channels, epsilon, .. }, LayerParams::BatchNorm { gamma, beta, running_mean, running_var }) => {
            let spatial = in_shape.element_count() / channels;
            let mut data = input.data().to_vec();
            let gamma = gamma.data();
            let beta = beta.data();
            match mode {
                Mode::Eval => {
                    for c in 0..*channels {
                        let inv = 1.0 / (running_var.data()[c] + epsilon).sqrt();
                        let scale = gamma[c] * inv;
                        let shift = beta[c] - running_mean.data()[c] * scale;
                        for b in 0..batch {
                            let start = (b * channels + c) * spatial;
                            for v in &mut data[start..start + spatial] {
                                *v = *v * scale + shift;
                            }
                        }
                    }
                }
                Mode::Train => {
                    let n = batch * spatial;
                    let mut mean = vec![0.0f32; *channels];
                    let mut var = vec![0.0f32; *channels];
                    let mut buf = vec![0.0f32; n];
                    for c in 0..*channels {
                        for b in 0..batch {
                            let start = (b * channels + c) * spatial;
                            buf[b * spatial..(b + 1) * spatial]
                                .copy_from_slice(&input.data()[start..start + spatial]);
                        }
                        let m = pairwise_sum(&buf) / n as f32;
                        let centered: Vec<f32> = buf.iter().map(|&v| (v - m) * (v - m)).collect();
                        let v = pairwise_sum(&centered) / n as f32;
                        mean[c] = m;
                        var[c] = v;
                        let inv = 1.0 / (v + epsilon).sqrt();
                        for b in 0..batch {
                            let start = (b * channels + c) * spatial;
                            for x in &mut data[start..start + spatial] {
                                *x = (*x - m) * inv * gamma[c] + beta[c];
                            }
                        }
                    }
                    stats = Some(BnStats { layer: idx, mean, var });
                }
            }
            Tensor::from_vec(&batched_dims(batch, out_shape), data)?
        }
        (LayerSpec::ChannelDropout { .. }, _) => {
            let mut data = input.data().to_vec();
            if mode == Mode::Train {
                let draw = dropout
                    .and_then(|d| d.for_layer(idx))
                    .ok_or_else(|| Error::InvalidInput("missing dropout draw".into()))?;
                let channels = in_shape.channels();
                let spatial = in_shape.element_count() / channels;
                apply_channel_scale(&mut data, batch, channels, spatial, draw);
            }
            Tensor::from_vec(&batched_dims(batch, out_shape), data)?
        }
        (LayerSpec::Flatten, _) => {
            Tensor::from_vec(&batched_dims(batch, out_shape), input.data().to_vec())?
        }
        (LayerSpec::Softmax, _) => {
            let features = out_shape.channels();
            let mut data = input.data().to_vec();
            for b in 0..batch {
                let row = &mut data[b * features..(b + 1) * features];
                let mut max = f32::NEG_INFINITY;
                for &v in row.iter() {
                    if v > max {
                        max = v;
                    }
                }
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                }
                let sum = pairwise_sum(row);
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            Tensor::from_vec(&[batch, features], data)?
        }
        _ => unreachable!("params validated against spec"),
    };
    Ok((out, stats))
}

fn batched_dims(batch: usize, shape: &ActShape) -> Vec<usize> {
    let mut dims = vec![batch];
    dims.extend(shape.dims());
    dims
}

/// Run a batch through the whole network.
pub fn forward(net: &Network, batch: &Tensor, opts: &ForwardOptions) -> Result<ForwardResult> {
    net.validate_params()?;
    let io = plan_interventions(&net.spec, opts)?;
    let n = check_batch_shape(&net.spec, batch)?;
    let mut activations: Vec<Tensor> = Vec::with_capacity(net.spec.layers.len());
    let mut bn_stats = Vec::new();
    for idx in 0..net.spec.layers.len() {
        let input = if idx == 0 { batch } else { &activations[idx - 1] };
        let (mut out, stats) =
            layer_forward(net, idx, &io, input, n, opts.mode, opts.dropout, None, None)?;
        if let Some(s) = stats {
            bn_stats.push(s);
        }
        apply_interventions_at(idx, &io, opts, &mut out, n);
        activations.push(out);
    }
    Ok(ForwardResult {
        activations,
        bn_stats,
    })
}

pub(crate) fn apply_interventions_at(
    idx: usize,
    io: &LayerIo,
    opts: &ForwardOptions,
    out: &mut Tensor,
    batch: usize,
) {
    let shape = &io.shapes[idx];
    let channels = shape.channels();
    let spatial = shape.element_count() / channels;
    for &mi in &io.mask_at[idx] {
        apply_channel_zeros(out.data_mut(), batch, channels, spatial, &opts.masks[mi].multipliers);
    }
    if io.rotation_at == Some(idx) {
        if let Some(rot) = &opts.rotation {
            apply_rotation(out.data_mut(), batch, channels, spatial, rot);
        }
    }
}

/// Class probabilities only (no activation capture).
pub fn forward_probs(net: &Network, batch: &Tensor, opts: &ForwardOptions) -> Result<Tensor> {
    let result = forward(net, batch, opts)?;
    Ok(result.activations.into_iter().last().expect("nonempty"))
}

/// Resume eval-mode inference from the output of layer `from` (exclusive):
/// `acts` must be that layer's batched output; returns class probabilities.
pub fn resume_forward(net: &Network, from: usize, acts: &Tensor) -> Result<Tensor> {
    let opts = ForwardOptions::default();
    let io = plan_interventions(&net.spec, &opts)?;
    let batch = acts.shape()[0];
    let mut current = acts.clone();
    for idx in from + 1..net.spec.layers.len() {
        let (out, _) = layer_forward(net, idx, &io, &current, batch, Mode::Eval, None, None, None)?;
        current = out;
    }
    Ok(current)
}

/// Spatial-mean scalarization of one unit's post-activation map; dense
/// units (spatial size 1) pass through unchanged.
pub fn unit_activation_scalar(map: &[f32]) -> f32 {
    unit_activation(map, SpatialReduction::Mean)
}

pub fn unit_activation(map: &[f32], reduction: SpatialReduction) -> f32 {
    match reduction {
        SpatialReduction::Mean => pairwise_sum(map) / map.len() as f32,
        SpatialReduction::Max => {
            let mut best = f32::NEG_INFINITY;
            for &v in map {
                if v > best {
                    best = v;
                }
            }
            best
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{LayerParams, LayerSpec, Network, NetworkSpec};

    /// 2x2 single-channel input -> 1x1 identity conv -> ReLU.
    fn identity_conv_net() -> Network {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 1, stride: 1, padding: 0 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 4, out_features: 2 },
                LayerSpec::Softmax,
            ],
            input_shape: (1, 2, 2),
            class_count: 2,
        };
        let mut net = Network::init(spec, 0).unwrap();
        net.params[0] = LayerParams::Conv {
            weight: Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        net
    }

    #[test]
    fn identity_conv_relu_preserves_nonnegative_input() {
        let net = identity_conv_net();
        let batch = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 0.5, 1.25, 3.0]).unwrap();
        let result = forward(&net, &batch, &ForwardOptions::default()).unwrap();
        assert_eq!(result.activations[1].data(), batch.data());
    }

    /// Hand-evaluated softmax(Wx + b) for a 2-class single-dense net:
    /// W = [[1, -1], [0.5, 2]], b = [0.1, -0.2], x = [1, 2]
    /// logits = [-0.9, 4.3]; p = softmax = [0.00548629..., 0.99451371...]
    #[test]
    fn dense_softmax_matches_hand_computation() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: 2, out_features: 2 },
                LayerSpec::Softmax,
            ],
            input_shape: (2, 1, 1),
            class_count: 2,
        };
        let mut net = Network::init(spec, 0).unwrap();
        net.params[1] = LayerParams::Dense {
            weight: Tensor::from_vec(&[2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap(),
            bias: Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap(),
        };
        let batch = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let probs = forward_probs(&net, &batch, &ForwardOptions::default()).unwrap();
        // frozen from the independent f64 evaluation of exp(-0.9)/(exp(-0.9)+exp(4.3))
        let p0 = 0.005486299;
        let p1 = 0.994513701;
        assert!((probs.data()[0] - p0).abs() < 1e-5, "{}", probs.data()[0]);
        assert!((probs.data()[1] - p1).abs() < 1e-5, "{}", probs.data()[1]);
        let sum: f32 = probs.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }

    #[test]
    fn all_ones_mask_is_bitwise_identity() {
        let spec = crate::toynet::baseline(8).unwrap();
        let net = Network::init(spec, 3).unwrap();
        let conv3 = net.spec.layer_index("conv3").unwrap();
        let batch = random_batch(&net.spec, 2, 11);
        let clean = forward_probs(&net, &batch, &ForwardOptions::default()).unwrap();
        let mask = ChannelMask { layer: conv3, multipliers: vec![1.0; 32] };
        let opts = ForwardOptions { masks: std::slice::from_ref(&mask), ..Default::default() };
        let masked = forward_probs(&net, &batch, &opts).unwrap();
        assert_eq!(clean, masked);
    }

    #[test]
    fn eval_forward_is_batch_partition_invariant() {
        let spec = crate::toynet::batchnorm(8).unwrap();
        let net = Network::init(spec, 5).unwrap();
        let batch = random_batch(&net.spec, 6, 2);
        let full = forward_probs(&net, &batch, &ForwardOptions::default()).unwrap();
        let mut pieces = Vec::new();
        for chunk in [0..2usize, 2..3, 3..6] {
            let n = chunk.len();
            let img = 3 * 32 * 32;
            let sub = Tensor::from_vec(
                &[n, 3, 32, 32],
                batch.data()[chunk.start * img..chunk.end * img].to_vec(),
            )
            .unwrap();
            pieces.extend_from_slice(forward_probs(&net, &sub, &ForwardOptions::default()).unwrap().data());
        }
        assert_eq!(full.data(), pieces.as_slice());
    }

    #[test]
    fn rejects_bad_batch_and_bad_mask() {
        let net = identity_conv_net();
        let bad = Tensor::from_vec(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        assert!(forward(&net, &bad, &ForwardOptions::default()).is_err());
        let batch = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let mask = ChannelMask { layer: 42, multipliers: vec![1.0] };
        let opts = ForwardOptions { masks: std::slice::from_ref(&mask), ..Default::default() };
        assert!(forward(&net, &batch, &opts).is_err());
    }

    #[test]
    fn eval_mode_dropout_is_identity() {
        let spec = crate::toynet::channel_dropout(8, "conv3", 0.5).unwrap();
        let base = crate::toynet::baseline(8).unwrap();
        // seeded init draws only for conv/dense layers, so both nets get
        // identical parameters; eval-mode outputs must then match exactly
        let dropped = Network::init(spec, 9).unwrap();
        let plain = Network::init(base, 9).unwrap();
        let batch = random_batch(&dropped.spec, 2, 1);
        let a = forward_probs(&dropped, &batch, &ForwardOptions::default()).unwrap();
        let b = forward_probs(&plain, &batch, &ForwardOptions::default()).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn unit_activation_scalar_examples() {
        assert_eq!(unit_activation_scalar(&[3.5, 3.5, 3.5, 3.5]), 3.5);
        assert_eq!(unit_activation_scalar(&[0.0, 0.0, 2.0, 2.0]), 1.0);
        assert_eq!(unit_activation_scalar(&[7.25]), 7.25);
        assert_eq!(unit_activation(&[0.0, 5.0, 2.0], SpatialReduction::Max), 5.0);
        // hand-set 1x1 conv (w=2, b=-1) + ReLU over [0.1, 0.4, 1.0, 2.0]:
        // pre-relu = [-0.8, -0.2, 1.0, 3.0], post = [0, 0, 1, 3], mean = 1.0
        let net = {
            let mut net = identity_conv_net();
            net.params[0] = LayerParams::Conv {
                weight: Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap(),
                bias: Tensor::from_vec(&[1], vec![-1.0]).unwrap(),
            };
            net
        };
        let batch = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1, 0.4, 1.0, 2.0]).unwrap();
        let result = forward(&net, &batch, &ForwardOptions::default()).unwrap();
        assert_eq!(unit_activation_scalar(result.activations[1].data()), 1.0);
    }

    pub(crate) fn random_batch(spec: &NetworkSpec, n: usize, seed: u64) -> Tensor {
        use rand::SeedableRng;
        let (c, h, w) = spec.input_shape;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * c * h * w).map(|_| rng.random::<f32>()).collect();
        Tensor::from_vec(&[n, c, h, w], data).unwrap()
    }
}
