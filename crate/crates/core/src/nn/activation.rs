use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::seed;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Gates `upstream` by `input > 0`; the subgradient at zero is zero.
pub fn relu_backward(upstream: &Tensor, input: &Tensor) -> Result<Tensor> {
    if upstream.shape() != input.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu upstream {:?} vs input {:?}",
            upstream.shape(),
            input.shape()
        )));
    }
    let data = upstream
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(upstream.shape().to_vec(), data)
}

/// Inverted-dropout mask: every entry is `0` or `1 / keep_probability`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep_probability: f64,
    pub mask: Tensor,
    pub rng_seed: u64,
}

impl DropoutMask {
    pub fn sample(shape: &[usize], keep_probability: f64, rng_seed: u64) -> Result<Self> {
        if !(keep_probability > 0.0 && keep_probability <= 1.0) {
            return Err(Error::Config(format!("keep probability {keep_probability} not in (0, 1]")));
        }
        let mut rng = seed::rng(rng_seed);
        let scale = 1.0 / keep_probability;
        let mut mask = Tensor::zeros(shape);
        for m in mask.data_mut() {
            if keep_probability >= 1.0 || rng.random::<f64>() < keep_probability {
                *m = scale;
            }
        }
        Ok(Self { keep_probability, mask, rng_seed })
    }

    pub fn kept(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != 0.0).count()
    }
}

/// Multiplies by the mask when training; identity otherwise. The backward
/// pass is the same call applied to the upstream gradient.
pub fn dropout_apply(input: &Tensor, mask: &DropoutMask, training: bool) -> Result<Tensor> {
    if !training {
        return Ok(input.clone());
    }
    if input.shape() != mask.mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "dropout mask {:?} vs input {:?}",
            mask.mask.shape(),
            input.shape()
        )));
    }
    let data = input.data().iter().zip(mask.mask.data()).map(|(x, m)| x * m).collect();
    Tensor::from_vec(input.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (_, width) = logits.rows_cols();
    let mut out = logits.clone();
    if width == 0 {
        return out;
    }
    for row in out.data_mut().chunks_exact_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Mean negative log-likelihood and its gradient `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let (n, width) = logits.rows_cols();
    if n != labels.len() || n == 0 {
        return Err(Error::ShapeMismatch(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= width) {
        return Err(Error::ShapeMismatch(format!("label {bad} for {width} logits")));
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[n, width]);
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(width)
        .zip(grad.data_mut().chunks_exact_mut(width))
        .zip(labels)
    {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label as usize];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_sum).exp() / n as f64;
        }
        g[label as usize] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&Tensor::filled(&[3], 1.0), &x).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn all_negative_input_blocks_everything() {
        let x = Tensor::filled(&[2, 3], -0.5);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&Tensor::filled(&[2, 3], 4.0), &x).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_dropout_is_identity() {
        let x = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = DropoutMask::sample(&[2, 2], 0.5, 3).unwrap();
        assert_eq!(dropout_apply(&x, &mask, false).unwrap(), x);
        let keep_all = DropoutMask::sample(&[2, 2], 1.0, 3).unwrap();
        assert_eq!(dropout_apply(&x, &keep_all, true).unwrap(), x);
    }

    #[test]
    fn dropout_mask_entries_are_zero_or_scaled() {
        let mask = DropoutMask::sample(&[100, 100], 0.5, 11).unwrap();
        assert!(mask.mask.data().iter().all(|&m| m == 0.0 || m == 2.0));
        let frac = mask.kept() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "kept fraction {frac}");
    }

    #[test]
    fn invalid_keep_probability_is_rejected() {
        assert!(DropoutMask::sample(&[2], 0.0, 0).is_err());
        assert!(DropoutMask::sample(&[2], 1.5, 0).is_err());
    }

    #[test]
    fn uniform_logits_cost_ln_ten() {
        let logits = Tensor::zeros(&[3, 10]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_costs_nothing() {
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[7] = 1000.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[7]).unwrap();
        assert!(loss.abs() < 1e-12);
        let p = softmax(&logits);
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.is_finite());
    }

    #[test]
    fn label_outside_logit_width_is_rejected() {
        assert!(softmax_cross_entropy(&Tensor::zeros(&[1, 10]), &[10]).is_err());
        assert!(softmax_cross_entropy(&Tensor::zeros(&[2, 10]), &[1]).is_err());
    }
}
