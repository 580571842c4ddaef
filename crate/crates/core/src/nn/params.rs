use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Tensor;

/// Adam first and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Moments {
    pub fn zeros_like(t: &Tensor) -> Self {
        Self { m: Tensor::zeros(t.shape()), v: Tensor::zeros(t.shape()) }
    }
}

/// Trainable weights and biases of one layer plus their optimizer state.
///
/// Convolution weights are laid out `kh x kw x in x out`; dense weights
/// `in x out`. Biases always have one entry per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
    pub weight_moments: Moments,
    pub bias_moments: Moments,
    pub step_count: u64,
}

/// Gradients matching a [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Tensor,
    pub biases: Tensor,
}

pub const INIT_STDDEV: f64 = 0.1;
pub const INIT_BIAS: f64 = 0.1;

impl LayerParams {
    pub fn new(weights: Tensor, biases: Tensor) -> Self {
        Self {
            weight_moments: Moments::zeros_like(&weights),
            bias_moments: Moments::zeros_like(&biases),
            weights,
            biases,
            step_count: 0,
        }
    }

    /// Convolution kernel drawn from a normal truncated at two standard
    /// deviations, biases set to a small positive constant.
    pub fn conv<R: Rng>(kh: usize, kw: usize, in_c: usize, out_c: usize, rng: &mut R) -> Self {
        let shape = [kh, kw, in_c, out_c];
        Self::new(truncated_normal(&shape, INIT_STDDEV, rng), Tensor::filled(&[out_c], INIT_BIAS))
    }

    pub fn dense<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let shape = [inputs, outputs];
        Self::new(truncated_normal(&shape, INIT_STDDEV, rng), Tensor::filled(&[outputs], INIT_BIAS))
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

impl Gradients {
    pub fn zeros_like(params: &LayerParams) -> Self {
        Self {
            weights: Tensor::zeros(params.weights.shape()),
            biases: Tensor::zeros(params.biases.shape()),
        }
    }
}

pub fn truncated_normal<R: Rng>(shape: &[usize], stddev: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, stddev).expect("valid stddev");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = loop {
            let x: f64 = normal.sample(rng);
            if x.abs() <= 2.0 * stddev {
                break x;
            }
        };
    }
    t
}
