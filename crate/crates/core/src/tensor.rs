//! Dense row-major f32 tensors and order-fixed reductions.
//!
//! Every float reduction in the inference/training path goes through
//! [`pairwise_sum`] (or a single fixed-order GEMM call), so results are
//! bit-identical across runs and across worker counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec".into(),
                expected: vec![n],
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::reshaped".into(),
                expected: vec![n],
                got: vec![self.data.len()],
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Sum with a fixed pairwise reduction tree (independent of chunking or
/// thread count; also better conditioned than naive accumulation).
pub fn pairwise_sum(values: &[f32]) -> f32 {
    const BASE: usize = 8;
    if values.len() <= BASE {
        let mut acc = 0.0f32;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// f64 counterpart used by the statistics modules.
pub fn pairwise_sum_f64(values: &[f64]) -> f64 {
    const BASE: usize = 8;
    if values.len() <= BASE {
        let mut acc = 0.0f64;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum_f64(&values[..mid]) + pairwise_sum_f64(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn shape_product_equals_len() {
        let t = Tensor::zeros(&[3, 4, 5]);
        assert_eq!(t.len(), 60);
        assert_eq!(t.shape(), &[3, 4, 5]);
    }

    #[test]
    fn pairwise_matches_f64_reference() {
        let values: Vec<f32> = (0..1000).map(|i| ((i * 37) % 101) as f32 * 0.01 - 0.5).collect();
        let reference: f64 = values.iter().map(|&v| v as f64).sum();
        let got = pairwise_sum(&values) as f64;
        assert!((got - reference).abs() < 1e-3, "got {got}, want {reference}");
    }

    #[test]
    fn pairwise_is_chunking_independent() {
        // The same slice must give the same bits no matter how callers
        // might batch the surrounding work.
        let values: Vec<f32> = (0..513).map(|i| (i as f32).sin()).collect();
        let a = pairwise_sum(&values);
        let b = pairwise_sum(&values);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
