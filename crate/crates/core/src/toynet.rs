//! Reference architectures for the desk-scale experiments.
//!
//! `ToyNet` is a three-conv-block classifier on 32x32x3 inputs whose last
//! conv layer ("conv3") is the default analysis target. Variants insert
//! batchnorm after every conv, or channel dropout after one named conv
//! block.

use crate::error::{Error, Result};
use crate::net::{LayerSpec, NetworkSpec};

pub const INPUT_SHAPE: (usize, usize, usize) = (3, 32, 32);

fn conv(in_c: usize, out_c: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: 3,
        stride: 1,
        padding: 1,
    }
}

fn pool() -> LayerSpec {
    LayerSpec::MaxPool2d { kernel: 2, stride: 2 }
}

/// Conv(16) -> Conv(32) -> Conv(32) -> Dense, each conv block ReLU + 2x2 pool.
pub fn baseline(class_count: usize) -> Result<NetworkSpec> {
    let layers = vec![
        conv(3, 16),
        LayerSpec::Relu,
        pool(),
        conv(16, 32),
        LayerSpec::Relu,
        pool(),
        conv(32, 32),
        LayerSpec::Relu,
        pool(),
        LayerSpec::Flatten,
        LayerSpec::Dense { in_features: 32 * 4 * 4, out_features: class_count },
        LayerSpec::Softmax,
    ];
    NetworkSpec::new(layers, INPUT_SHAPE, class_count)
}

/// Baseline with batchnorm between every conv and its ReLU.
pub fn batchnorm(class_count: usize) -> Result<NetworkSpec> {
    let bn = |channels| LayerSpec::BatchNorm { channels, epsilon: 1e-5, momentum: 0.1 };
    let layers = vec![
        conv(3, 16),
        bn(16),
        LayerSpec::Relu,
        pool(),
        conv(16, 32),
        bn(32),
        LayerSpec::Relu,
        pool(),
        conv(32, 32),
        bn(32),
        LayerSpec::Relu,
        pool(),
        LayerSpec::Flatten,
        LayerSpec::Dense { in_features: 32 * 4 * 4, out_features: class_count },
        LayerSpec::Softmax,
    ];
    NetworkSpec::new(layers, INPUT_SHAPE, class_count)
}

/// Baseline with channel dropout inserted after the ReLU of one named conv layer.
pub fn channel_dropout(class_count: usize, layer: &str, rate: f32) -> Result<NetworkSpec> {
    let base = baseline(class_count)?;
    let idx = base.layer_index(layer)?;
    if !base.layers[idx].is_maskable() {
        return Err(Error::InvalidConfig(format!(
            "channel dropout target '{layer}' is not a conv or dense layer"
        )));
    }
    let insert_at = base.block_end(idx) + 1;
    let mut layers = base.layers;
    layers.insert(insert_at, LayerSpec::ChannelDropout { rate });
    NetworkSpec::new(layers, INPUT_SHAPE, class_count)
}
