//! Stride-1 convolution with SAME zero padding, computed per image as an
//! im2col matrix product so every output sums in the same order regardless
//! of batch size.

use super::gemm::{matmul, matmul_at, matmul_bt};
use super::{Gradients, LayerParams, Tensor};
use crate::error::{Error, Result};

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    in_c: usize,
    kh: usize,
    kw: usize,
    out_c: usize,
}

impl Geometry {
    fn new(input: &Tensor, params: &LayerParams) -> Result<Self> {
        let (n, h, w, in_c) = input.nhwc()?;
        let [kh, kw, k_in, out_c] = match *params.weights.shape() {
            [a, b, c, d] => [a, b, c, d],
            ref s => return Err(Error::ShapeMismatch(format!("conv kernel shape {s:?}"))),
        };
        if k_in != in_c {
            return Err(Error::ShapeMismatch(format!(
                "input has {in_c} channels, kernel expects {k_in}"
            )));
        }
        if params.biases.len() != out_c {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {out_c} filters",
                params.biases.len()
            )));
        }
        Ok(Self { n, h, w, in_c, kh, kw, out_c })
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.in_c
    }

    fn pad_top(&self) -> usize {
        (self.kh - 1) / 2
    }

    fn pad_left(&self) -> usize {
        (self.kw - 1) / 2
    }

    /// Fills `cols` (pixels x patch) with the zero-padded windows of one image.
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let patch = self.patch();
        for y in 0..self.h {
            for x in 0..self.w {
                let row = &mut cols[(y * self.w + x) * patch..][..patch];
                let mut p = 0;
                for dy in 0..self.kh {
                    let sy = y as isize + dy as isize - self.pad_top() as isize;
                    for dx in 0..self.kw {
                        let sx = x as isize + dx as isize - self.pad_left() as isize;
                        let dst = &mut row[p..p + self.in_c];
                        if sy < 0 || sy >= self.h as isize || sx < 0 || sx >= self.w as isize {
                            dst.fill(0.0);
                        } else {
                            let src = (sy as usize * self.w + sx as usize) * self.in_c;
                            dst.copy_from_slice(&image[src..src + self.in_c]);
                        }
                        p += self.in_c;
                    }
                }
            }
        }
    }

    /// Scatters window gradients back onto one image's gradient.
    fn col2im(&self, cols: &[f64], image_grad: &mut [f64]) {
        let patch = self.patch();
        for y in 0..self.h {
            for x in 0..self.w {
                let row = &cols[(y * self.w + x) * patch..][..patch];
                let mut p = 0;
                for dy in 0..self.kh {
                    let sy = y as isize + dy as isize - self.pad_top() as isize;
                    for dx in 0..self.kw {
                        let sx = x as isize + dx as isize - self.pad_left() as isize;
                        if sy >= 0 && sy < self.h as isize && sx >= 0 && sx < self.w as isize {
                            let dst = (sy as usize * self.w + sx as usize) * self.in_c;
                            for c in 0..self.in_c {
                                image_grad[dst + c] += row[p + c];
                            }
                        }
                        p += self.in_c;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor, params: &LayerParams) -> Result<Tensor> {
    let g = Geometry::new(input, params)?;
    let (pixels, patch) = (g.pixels(), g.patch());
    let mut out = Tensor::zeros(&[g.n, g.h, g.w, g.out_c]);
    let mut cols = vec![0.0; pixels * patch];
    let bias = params.biases.data();
    for i in 0..g.n {
        g.im2col(&input.data()[i * pixels * g.in_c..][..pixels * g.in_c], &mut cols);
        let dst = &mut out.data_mut()[i * pixels * g.out_c..][..pixels * g.out_c];
        for row in dst.chunks_exact_mut(g.out_c) {
            row.copy_from_slice(bias);
        }
        matmul(pixels, patch, g.out_c, &cols, params.weights.data(), 1.0, dst);
    }
    Ok(out)
}

/// Returns the input gradient together with the parameter gradients.
pub fn conv2d_backward(
    upstream: &Tensor,
    cached_input: &Tensor,
    params: &LayerParams,
) -> Result<(Tensor, Gradients)> {
    let g = Geometry::new(cached_input, params)?;
    if upstream.shape() != [g.n, g.h, g.w, g.out_c] {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match conv output {:?}",
            upstream.shape(),
            [g.n, g.h, g.w, g.out_c]
        )));
    }
    let (pixels, patch) = (g.pixels(), g.patch());
    let mut input_grad = Tensor::zeros(cached_input.shape());
    let mut grads = Gradients::zeros_like(params);
    let mut cols = vec![0.0; pixels * patch];
    let mut col_grad = vec![0.0; pixels * patch];
    for i in 0..g.n {
        let x = &cached_input.data()[i * pixels * g.in_c..][..pixels * g.in_c];
        let dout = &upstream.data()[i * pixels * g.out_c..][..pixels * g.out_c];
        g.im2col(x, &mut cols);
        // dW (patch x out) += cols^T (patch x pixels) * dout (pixels x out)
        matmul_at(patch, pixels, g.out_c, &cols, dout, 1.0, grads.weights.data_mut());
        let db = grads.biases.data_mut();
        for row in dout.chunks_exact(g.out_c) {
            for (b, d) in db.iter_mut().zip(row) {
                *b += d;
            }
        }
        // dcols (pixels x patch) = dout (pixels x out) * W^T
        matmul_bt(pixels, g.out_c, patch, dout, params.weights.data(), 0.0, &mut col_grad);
        g.col2im(&col_grad, &mut input_grad.data_mut()[i * pixels * g.in_c..][..pixels * g.in_c]);
    }
    Ok((input_grad, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: Tensor, b: Vec<f64>) -> LayerParams {
        let n = b.len();
        LayerParams::new(w, Tensor::from_vec(vec![n], b).unwrap())
    }

    #[test]
    fn one_by_one_kernel_is_scalar_affine() {
        let x = Tensor::from_vec(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let p = params(Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0]).unwrap(), vec![0.5]);
        assert_eq!(conv2d_forward(&x, &p).unwrap().data(), &[6.5]);
    }

    #[test]
    fn zero_input_yields_bias() {
        let x = Tensor::zeros(&[2, 6, 6, 2]);
        let w = Tensor::from_vec(vec![5, 5, 2, 3], (0..150).map(|i| i as f64 * 0.01).collect()).unwrap();
        let out = conv2d_forward(&x, &params(w, vec![0.1, -0.2, 0.3])).unwrap();
        assert_eq!(out.shape(), &[2, 6, 6, 3]);
        for px in out.data().chunks(3) {
            assert_eq!(px, &[0.1, -0.2, 0.3]);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = Tensor::from_vec(vec![1, 4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let w = Tensor::from_vec(vec![3, 3, 1, 2], vec![0.3; 18]).unwrap();
        let p = params(w, vec![0.0, 0.0]);
        let (dx, g) = conv2d_backward(&Tensor::zeros(&[1, 4, 4, 2]), &x, &p).unwrap();
        assert!(dx.data().iter().chain(g.weights.data()).chain(g.biases.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_weight_grad_is_inner_product() {
        let x = Tensor::from_vec(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let up = Tensor::from_vec(vec![1, 2, 2, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let p = params(Tensor::from_vec(vec![1, 1, 1, 1], vec![1.5]).unwrap(), vec![0.0]);
        let (dx, g) = conv2d_backward(&up, &x, &p).unwrap();
        assert_eq!(g.weights.data(), &[0.5 - 2.0 + 6.0 + 1.0]);
        assert_eq!(g.biases.data(), &[0.5 - 1.0 + 2.0 + 0.25]);
        assert_eq!(dx.data(), &[0.75, -1.5, 3.0, 0.375]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::zeros(&[1, 4, 4, 2]);
        let p = params(Tensor::zeros(&[3, 3, 1, 2]), vec![0.0, 0.0]);
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::ShapeMismatch(_))));
        let p = params(Tensor::zeros(&[3, 3, 2, 2]), vec![0.0, 0.0]);
        assert!(matches!(
            conv2d_backward(&Tensor::zeros(&[1, 4, 4, 3]), &x, &p),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
