use super::Tensor;
use crate::error::{Error, Result};

/// Output of a max-pooling pass: pooled values plus, for each output, the
/// flat input index that supplied the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Max pooling over `window x window` blocks with the given stride. Ties go to
/// the first position in row-major order.
pub fn maxpool_forward(input: &Tensor, window: usize, stride: usize) -> Result<Pooled> {
    let (n, h, w, c) = input.nhwc()?;
    if window == 0 || stride == 0 || h < window || w < window || h % stride != 0 || w % stride != 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot pool {h}x{w} with window {window}, stride {stride}"
        )));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut output = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0usize; n * oh * ow * c];
    let x = input.data();
    let out = output.data_mut();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = ((b * h + oy * stride + dy) * w + ox * stride + dx) * c + ch;
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((b * oh + oy) * ow + ox) * c + ch;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok(Pooled { output, argmax })
}

/// Routes each upstream value to the input position that won the forward max.
pub fn maxpool_backward(upstream: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if upstream.len() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream values for {} pooled outputs",
            upstream.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(upstream.data()) {
        g[idx] += d;
    }
    Ok(grad)
}
