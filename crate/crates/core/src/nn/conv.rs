use super::gemm::{gemm, transpose};
use super::LayerGradients;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;
use rand::Rng;

/// Output extent of a convolution along one axis.
pub fn conv_output_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// 2-D cross-correlation with zero padding, weights `[C_out, C_in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

/// State retained by [`Conv2d::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    in_shape: [usize; 3],
    out_hw: (usize, usize),
    /// im2col matrix, `[C_in·k·k, H'·W']`
    cols: Vec<f64>,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::shape(format!("conv weight must be [C_out, C_in, k, k], got {ws:?}")));
        }
        bias.expect_shape(&[ws[0]], "conv bias")?;
        if stride == 0 {
            return Err(Error::param("conv stride must be positive"));
        }
        Ok(Self { weight, bias, stride, pad })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, input: &Tensor, exec: Exec) -> Result<(Tensor, ConvCache)> {
        let is = input.shape();
        if is.len() != 3 {
            return Err(Error::shape(format!("conv input must be [C, H, W], got {is:?}")));
        }
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let k = self.kernel();
        if c_in != self.in_channels() {
            return Err(Error::shape(format!("conv input has {c_in} channels, weight expects {}", self.in_channels())));
        }
        if k > h + 2 * self.pad || k > w + 2 * self.pad {
            return Err(Error::shape(format!("kernel {k} larger than padded input {h}x{w} (pad {})", self.pad)));
        }
        let oh = conv_output_extent(h, k, self.stride, self.pad);
        let ow = conv_output_extent(w, k, self.stride, self.pad);
        let cols = im2col(input.data(), [c_in, h, w], k, self.stride, self.pad, (oh, ow));

        let c_out = self.out_channels();
        let plane = oh * ow;
        let mut out = vec![0.0; c_out * plane];
        for (o, &b) in out.chunks_mut(plane).zip(self.bias.data()) {
            o.fill(b);
        }
        gemm(c_out, plane, c_in * k * k, self.weight.data(), &cols, &mut out, true, exec);
        let out = Tensor::new(&[c_out, oh, ow], out)?;
        let cache = ConvCache { in_shape: [c_in, h, w], out_hw: (oh, ow), cols };
        Ok((out, cache))
    }

    /// Gradients with respect to the input (when `want_input` is set),
    /// the weight and the bias.
    pub fn backward(
        &self,
        cache: &ConvCache,
        d_output: &Tensor,
        want_input: bool,
        exec: Exec,
    ) -> Result<LayerGradients> {
        let (oh, ow) = cache.out_hw;
        let c_out = self.out_channels();
        d_output.expect_shape(&[c_out, oh, ow], "conv d_output")?;
        let [c_in, h, w] = cache.in_shape;
        let k = self.kernel();
        let plane = oh * ow;
        let rows = c_in * k * k;
        let dy = d_output.data();
        let cols = &cache.cols;

        let mut d_bias = vec![0.0; c_out];
        for (c, db) in d_bias.iter_mut().enumerate() {
            *db = sum4(&dy[c * plane..(c + 1) * plane]);
        }

        let cols_t = transpose(cols, rows, plane);
        let mut d_weight = vec![0.0; c_out * rows];
        gemm(c_out, rows, plane, dy, &cols_t, &mut d_weight, false, exec);

        let d_input = if want_input {
            let w_t = transpose(self.weight.data(), c_out, rows);
            let mut d_cols = vec![0.0; rows * plane];
            gemm(rows, plane, c_out, &w_t, dy, &mut d_cols, false, exec);
            let mut dx = vec![0.0; c_in * h * w];
            let geom = Geometry { h, w, k, stride: self.stride, pad: self.pad, oh, ow };
            exec.for_each_chunk(&mut dx, h * w, |ci, dxc| {
                col2im_channel(&d_cols[ci * k * k * plane..(ci + 1) * k * k * plane], dxc, &geom);
            });
            Some(Tensor::new(&[c_in, h, w], dx)?)
        } else {
            None
        };

        Ok(LayerGradients {
            d_input,
            d_params: vec![Tensor::new(self.weight.shape(), d_weight)?, Tensor::new(&[c_out], d_bias)?],
        })
    }
}

/// Functional form of [`Conv2d::forward`].
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let layer = Conv2d::new(weight.clone(), bias.clone(), stride, pad)?;
    Ok(layer.forward(input, Exec::Sequential)?.0)
}

/// Functional form of [`Conv2d::backward`]; always returns the input gradient.
pub fn conv2d_backward(layer: &Conv2d, cache: &ConvCache, d_output: &Tensor) -> Result<LayerGradients> {
    layer.backward(cache, d_output, true, Exec::Sequential)
}

struct Geometry {
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn im2col(
    input: &[f64],
    [c_in, h, w]: [usize; 3],
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let plane = oh * ow;
    let mut cols = vec![0.0; c_in * k * k * plane];
    for ci in 0..c_in {
        let src = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        // contiguous span of valid columns
                        let lo = pad.saturating_sub(kx);
                        let hi = (w + pad).saturating_sub(kx).min(ow);
                        if lo < hi {
                            let s = lo + kx - pad;
                            dst_row[lo..hi].copy_from_slice(&src_row[s..s + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_channel(d_cols: &[f64], dx: &mut [f64], g: &Geometry) {
    let plane = g.oh * g.ow;
    for ky in 0..g.k {
        for kx in 0..g.k {
            let src = &d_cols[(ky * g.k + kx) * plane..(ky * g.k + kx + 1) * plane];
            for oy in 0..g.oh {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let dst_row = &mut dx[iy as usize * g.w..(iy as usize + 1) * g.w];
                let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                for (ox, v) in src_row.iter().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < g.w as isize {
                        dst_row[ix as usize] += v;
                    }
                }
            }
        }
    }
}

fn sum4(x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = x.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        acc[0] += c[0];
        acc[1] += c[1];
        acc[2] += c[2];
        acc[3] += c[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// He-initialized convolution with zero bias.
pub(crate) fn init_conv<R: Rng + ?Sized>(
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    rng: &mut R,
) -> Conv2d {
    Conv2d {
        weight: Tensor::he_normal(&[c_out, c_in, k, k], c_in * k * k, rng),
        bias: Tensor::zeros(&[c_out]),
        stride,
        pad,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{numeric_gradient, relative_error};
    use crate::rng::rng_for;
    use rand::Rng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct nested-loop cross-correlation, independent of im2col.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
        let (c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (c_out, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = Vec::new();
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.data()[co];
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.data()[(ci * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((co * c_in + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn hand_computed_cross_correlation() {
        let x = Tensor::new(&[1, 3, 3], vec![1., 2., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let w = Tensor::new(&[1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[1]);
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[2., 2., 0., 2.]);
    }

    #[test]
    fn shape_preserving_with_same_padding() {
        let mut rng = rng_for(1, "conv", 0);
        let x = Tensor::zeros(&[1, 64, 64]);
        let layer = init_conv(1, 32, 5, 1, 2, &mut rng);
        let (y, _) = layer.forward(&x, Exec::Parallel).unwrap();
        assert_eq!(y.shape(), &[32, 64, 64]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        for k in [1usize, 3, 5, 7] {
            assert_eq!(conv_output_extent(17, k, 1, k / 2), 17);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::zeros(&[2, 8, 8]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, &Tensor::zeros(&[4]), 1, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_naive_loops_for_strides_and_pads() {
        let mut rng = rng_for(3, "conv-naive", 0);
        for (stride, pad, k) in [(1, 0, 3), (1, 2, 5), (2, 1, 3), (2, 2, 5), (3, 0, 2)] {
            let x = random_tensor(&[3, 9, 11], &mut rng);
            let w = random_tensor(&[5, 3, k, k], &mut rng);
            let b = random_tensor(&[5], &mut rng);
            let y = conv2d(&x, &w, &b, stride, pad).unwrap();
            let reference = naive_conv(&x, &w, &b, stride, pad);
            for (a, r) in y.data().iter().zip(&reference) {
                assert!((a - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = rng_for(4, "conv", 0);
        let layer = init_conv(2, 3, 3, 1, 1, &mut rng);
        let x = random_tensor(&[2, 5, 5], &mut rng);
        let (y, cache) = layer.forward(&x, Exec::Sequential).unwrap();
        let g = conv2d_backward(&layer, &cache, &Tensor::zeros(y.shape())).unwrap();
        assert!(g.d_input.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.d_params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn bias_and_pointwise_weight_gradients() {
        let mut rng = rng_for(5, "conv", 0);
        let layer = init_conv(2, 3, 1, 1, 0, &mut rng);
        let x = random_tensor(&[2, 4, 4], &mut rng);
        let (y, cache) = layer.forward(&x, Exec::Sequential).unwrap();
        let dy = random_tensor(y.shape(), &mut rng);
        let g = conv2d_backward(&layer, &cache, &dy).unwrap();
        for c in 0..3 {
            let s: f64 = dy.data()[c * 16..(c + 1) * 16].iter().sum();
            assert!((g.d_params[1].data()[c] - s).abs() < 1e-12);
            for ci in 0..2 {
                let corr: f64 = (0..16).map(|p| x.data()[ci * 16 + p] * dy.data()[c * 16 + p]).sum();
                assert!((g.d_params[0].data()[c * 2 + ci] - corr).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_cotangent_is_rejected() {
        let mut rng = rng_for(6, "conv", 0);
        let layer = init_conv(1, 2, 3, 1, 1, &mut rng);
        let (_, cache) = layer.forward(&Tensor::zeros(&[1, 4, 4]), Exec::Sequential).unwrap();
        assert!(matches!(conv2d_backward(&layer, &cache, &Tensor::zeros(&[2, 3, 4])), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_differences_on_random_layer() {
        for seed in 0..5 {
            let mut rng = rng_for(seed, "conv-fd", 0);
            let x = random_tensor(&[2, 5, 5], &mut rng);
            let w = random_tensor(&[3, 2, 3, 3], &mut rng);
            let b = random_tensor(&[3], &mut rng);
            let layer = Conv2d::new(w.clone(), b.clone(), 1, 1).unwrap();
            let (y, cache) = layer.forward(&x, Exec::Sequential).unwrap();
            let cot = random_tensor(y.shape(), &mut rng);
            let g = conv2d_backward(&layer, &cache, &cot).unwrap();

            let fx = numeric_gradient(|t| conv2d(t, &w, &b, 1, 1).unwrap().dot(&cot), &x, 1e-5);
            let fw = numeric_gradient(|t| conv2d(&x, t, &b, 1, 1).unwrap().dot(&cot), &w, 1e-5);
            let fb = numeric_gradient(|t| conv2d(&x, &w, t, 1, 1).unwrap().dot(&cot), &b, 1e-5);
            assert!(relative_error(g.d_input.as_ref().unwrap(), &fx) < 1e-4);
            assert!(relative_error(&g.d_params[0], &fw) < 1e-4);
            assert!(relative_error(&g.d_params[1], &fb) < 1e-4);
        }
    }

    #[test]
    fn sequential_and_parallel_are_bit_identical() {
        let mut rng = rng_for(7, "conv", 0);
        let layer = init_conv(3, 10, 5, 1, 2, &mut rng);
        let x = random_tensor(&[3, 16, 16], &mut rng);
        let (ys, cs) = layer.forward(&x, Exec::Sequential).unwrap();
        let (yp, cp) = layer.forward(&x, Exec::Parallel).unwrap();
        assert_eq!(ys, yp);
        let dy = random_tensor(ys.shape(), &mut rng);
        let gs = layer.backward(&cs, &dy, true, Exec::Sequential).unwrap();
        let gp = layer.backward(&cp, &dy, true, Exec::Parallel).unwrap();
        assert_eq!(gs.d_input, gp.d_input);
        assert_eq!(gs.d_params, gp.d_params);
    }
}
