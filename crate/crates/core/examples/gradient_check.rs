//! Compare each layer's backward pass against central differences.

use cnn_inte::nn::{conv2d_backward, conv2d_forward, fc_backward, fc_forward, LayerParams, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Loss is `sum(out * probe)`, so the upstream gradient is `probe`.
fn loss(out: &Tensor, probe: &Tensor) -> f64 {
    out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
}

fn worst_relative_error(analytic: &[f64], numeric: impl Fn(usize) -> f64) -> f64 {
    analytic
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let n = numeric(i);
            (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
        })
        .fold(0.0, f64::max)
}

fn main() {
    let mut rng = cnn_inte::seed::rng(7);
    let h = 1e-6;

    let input = random(&[2, 5, 5, 3], &mut rng);
    let params = LayerParams::new(random(&[3, 3, 3, 4], &mut rng), random(&[4], &mut rng));
    let probe = random(&[2, 5, 5, 4], &mut rng);
    let (dx, grads) = conv2d_backward(&probe, &input, &params).unwrap();
    let err = worst_relative_error(grads.weights.data(), |i| {
        let shift = |d: f64| {
            let mut p = params.clone();
            p.weights.data_mut()[i] += d;
            loss(&conv2d_forward(&input, &p).unwrap(), &probe)
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    });
    println!("conv weights: worst relative error {err:.2e}");
    let err = worst_relative_error(dx.data(), |i| {
        let shift = |d: f64| {
            let mut x = input.clone();
            x.data_mut()[i] += d;
            loss(&conv2d_forward(&x, &params).unwrap(), &probe)
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    });
    println!("conv input:   worst relative error {err:.2e}");

    let input = random(&[4, 6], &mut rng);
    let params = LayerParams::new(random(&[6, 3], &mut rng), random(&[3], &mut rng));
    let probe = random(&[4, 3], &mut rng);
    let (dx, grads) = fc_backward(&probe, &input, &params).unwrap();
    let err = worst_relative_error(grads.biases.data(), |i| {
        let shift = |d: f64| {
            let mut p = params.clone();
            p.biases.data_mut()[i] += d;
            loss(&fc_forward(&input, &p).unwrap(), &probe)
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    });
    println!("dense biases: worst relative error {err:.2e}");
    let err = worst_relative_error(dx.data(), |i| {
        let shift = |d: f64| {
            let mut x = input.clone();
            x.data_mut()[i] += d;
            loss(&fc_forward(&x, &params).unwrap(), &probe)
        };
        (shift(h) - shift(-h)) / (2.0 * h)
    });
    println!("dense input:  worst relative error {err:.2e}");
}
