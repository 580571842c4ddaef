use super::gemm::{matmul, matmul_at, matmul_bt};
use super::{Gradients, LayerParams, Tensor};
use crate::error::{Error, Result};

fn dims(input: &Tensor, params: &LayerParams) -> Result<(usize, usize, usize)> {
    let (n, width) = input.rows_cols();
    let (rows, outputs) = match *params.weights.shape() {
        [r, o] => (r, o),
        ref s => return Err(Error::ShapeMismatch(format!("dense weight shape {s:?}"))),
    };
    if width != rows || params.biases.len() != outputs {
        return Err(Error::ShapeMismatch(format!(
            "input width {width} against {rows}x{outputs} weights and {} biases",
            params.biases.len()
        )));
    }
    Ok((n, rows, outputs))
}

/// Affine map `input * W + b`; any trailing axes of `input` are flattened.
pub fn fc_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let (n, inputs, outputs) = dims(input, params)?;
    let mut out = Tensor::zeros(&[n, outputs]);
    for row in out.data_mut().chunks_exact_mut(outputs) {
        row.copy_from_slice(params.biases.data());
    }
    matmul(n, inputs, outputs, input.data(), params.weights.data(), 1.0, out.data_mut());
    Ok(out)
}

/// The returned input gradient has the same shape as `cached_input`.
pub fn fc_backward(
    upstream: &Tensor,
    cached_input: &Tensor,
    params: &LayerParams,
) -> Result<(Tensor, Gradients)> {
    let (n, inputs, outputs) = dims(cached_input, params)?;
    if upstream.shape() != [n, outputs] {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?}, expected [{n}, {outputs}]",
            upstream.shape()
        )));
    }
    let mut grads = Gradients::zeros_like(params);
    matmul_at(inputs, n, outputs, cached_input.data(), upstream.data(), 0.0, grads.weights.data_mut());
    let db = grads.biases.data_mut();
    for row in upstream.data().chunks_exact(outputs) {
        for (b, d) in db.iter_mut().zip(row) {
            *b += d;
        }
    }
    let mut input_grad = Tensor::zeros(cached_input.shape());
    matmul_bt(n, outputs, inputs, upstream.data(), params.weights.data(), 0.0, input_grad.data_mut());
    Ok((input_grad, grads))
}
