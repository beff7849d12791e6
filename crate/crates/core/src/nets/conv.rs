use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::params::ParamBuilder;

/// A batch of feature maps in channels-last layout: row `(n, y, x)`, column `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub data: Array2<f64>,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

/// Valid (unpadded) strided 2-D convolution, evaluated via im2col.
///
/// Patch columns are ordered `(ky, kx, c)`, matching the weight rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    w: usize,
    b: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn declare(
        builder: &mut ParamBuilder,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = kernel * kernel * in_channels;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = builder.uniform(format!("{name}.weight"), &[kernel, kernel, in_channels, out_channels], bound);
        let b = builder.uniform(format!("{name}.bias"), &[out_channels], bound);
        Self { w, b, in_channels, out_channels, kernel, stride }
    }

    /// Output size for an input of `height x width`, `None` if the kernel does not fit.
    pub fn output_size(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if height < self.kernel || width < self.kernel {
            return None;
        }
        Some(((height - self.kernel) / self.stride + 1, (width - self.kernel) / self.stride + 1))
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.patch_len(), self.out_channels), &p[self.w..self.w + self.patch_len() * self.out_channels])
            .expect("kernel layout")
    }

    pub fn im2col(&self, x: &FeatureMap) -> Array2<f64> {
        let (oh, ow) = self.output_size(x.height, x.width).expect("kernel fits input");
        let c = self.in_channels;
        let k = self.kernel;
        let src = x.data.as_slice().expect("contiguous feature map");
        let patch = self.patch_len();
        let mut cols = vec![0.0; x.n * oh * ow * patch];
        let mut row = 0;
        for n in 0..x.n {
            let image = &src[n * x.height * x.width * c..(n + 1) * x.height * x.width * c];
            for oy in 0..oh {
                for ox in 0..ow {
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for ky in 0..k {
                        let start = ((oy * self.stride + ky) * x.width + ox * self.stride) * c;
                        dst[ky * k * c..(ky + 1) * k * c].copy_from_slice(&image[start..start + k * c]);
                    }
                    row += 1;
                }
            }
        }
        Array2::from_shape_vec((x.n * oh * ow, patch), cols).expect("im2col shape")
    }

    /// Pre-activation output plus the patch matrix needed for backprop.
    pub fn forward(&self, p: &[f64], x: &FeatureMap) -> (FeatureMap, Array2<f64>) {
        let (oh, ow) = self.output_size(x.height, x.width).expect("kernel fits input");
        let cols = self.im2col(x);
        let mut y = cols.dot(&self.weight(p));
        let bias = &p[self.b..self.b + self.out_channels];
        for mut r in y.rows_mut() {
            for (v, b) in r.iter_mut().zip(bias) {
                *v += b;
            }
        }
        (FeatureMap { n: x.n, height: oh, width: ow, data: y }, cols)
    }

    /// Accumulates kernel gradients and, if `input_size` is given, returns the
    /// gradient with respect to the input map.
    pub fn backward(
        &self,
        p: &[f64],
        cols: &Array2<f64>,
        dy: &Array2<f64>,
        grad: &mut [f64],
        input_size: Option<(usize, usize, usize)>,
    ) -> Option<Array2<f64>> {
        let patch = self.patch_len();
        let (w_grad, b_grad) = grad[self.w..].split_at_mut(self.b - self.w);
        let mut dw = ArrayViewMut2::from_shape((patch, self.out_channels), &mut w_grad[..patch * self.out_channels])
            .expect("kernel layout");
        general_mat_mul(1.0, &cols.t(), dy, 1.0, &mut dw);
        for (g, s) in b_grad[..self.out_channels].iter_mut().zip(dy.sum_axis(Axis(0)).iter()) {
            *g += s;
        }

        let (n, height, width) = input_size?;
        let dcols = dy.dot(&self.weight(p).t());
        let (oh, ow) = self.output_size(height, width).expect("kernel fits input");
        let c = self.in_channels;
        let k = self.kernel;
        let mut dx = vec![0.0; n * height * width * c];
        let dcols = dcols.as_slice().expect("contiguous");
        let mut row = 0;
        for img in 0..n {
            let base = img * height * width * c;
            for oy in 0..oh {
                for ox in 0..ow {
                    let src = &dcols[row * patch..(row + 1) * patch];
                    for ky in 0..k {
                        let start = base + ((oy * self.stride + ky) * width + ox * self.stride) * c;
                        for (d, s) in dx[start..start + k * c].iter_mut().zip(&src[ky * k * c..(ky + 1) * k * c]) {
                            *d += s;
                        }
                    }
                    row += 1;
                }
            }
        }
        Some(Array2::from_shape_vec((n * height * width, c), dx).expect("input gradient shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, independent of im2col.
    fn naive(conv: &Conv2d, p: &[f64], x: &FeatureMap) -> Vec<f64> {
        let (oh, ow) = conv.output_size(x.height, x.width).unwrap();
        let c = conv.in_channels;
        let mut out = Vec::new();
        for n in 0..x.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..conv.out_channels {
                        let mut acc = p[conv.b + f];
                        for ky in 0..conv.kernel {
                            for kx in 0..conv.kernel {
                                for ch in 0..c {
                                    let row = (n * x.height + oy * conv.stride + ky) * x.width + ox * conv.stride + kx;
                                    let widx = ((ky * conv.kernel + kx) * c + ch) * conv.out_channels + f;
                                    acc += x.data[[row, ch]] * p[conv.w + widx];
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    fn input(n: usize, h: usize, w: usize, c: usize) -> FeatureMap {
        let data = Array2::from_shape_fn((n * h * w, c), |(r, ch)| ((r * 7 + ch * 3) % 11) as f64 / 11.0 - 0.4);
        FeatureMap { n, height: h, width: w, data }
    }

    #[test]
    fn matches_naive_convolution() {
        let mut b = ParamBuilder::new(3);
        let conv = Conv2d::declare(&mut b, "c", 2, 3, 3, 2);
        let p = b.finish();
        let x = input(2, 7, 6, 2);
        let (y, _) = conv.forward(p.data(), &x);
        assert_eq!((y.height, y.width), (3, 2));
        let expected = naive(&conv, p.data(), &x);
        for (a, e) in y.data.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_geometry() {
        let mut b = ParamBuilder::new(0);
        let c1 = Conv2d::declare(&mut b, "c1", 3, 32, 3, 2);
        let c2 = Conv2d::declare(&mut b, "c2", 32, 64, 5, 2);
        assert_eq!(c1.output_size(50, 50), Some((24, 24)));
        assert_eq!(c2.output_size(24, 24), Some((10, 10)));
        assert_eq!(c2.output_size(4, 4), None);
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut b = ParamBuilder::new(5);
        let conv = Conv2d::declare(&mut b, "c", 2, 2, 3, 1);
        let p = b.finish();
        let x = input(1, 5, 4, 2);
        let (y, cols) = conv.forward(p.data(), &x);
        let weights = Array2::from_shape_fn(y.data.dim(), |(r, c)| (r as f64 * 0.3 - c as f64).sin());
        let mut grad = p.zeros_like();
        let dx = conv.backward(p.data(), &cols, &weights, &mut grad, Some((1, 5, 4))).unwrap();
        let loss = |params: &[f64], x: &FeatureMap| (&conv.forward(params, x).0.data * &weights).sum();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = p.data().to_vec();
            plus[i] += h;
            let mut minus = p.data().to_vec();
            minus[i] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7);
        }
        for idx in 0..x.data.len() {
            let (r, c) = (idx / 2, idx % 2);
            let mut plus = x.clone();
            plus.data[[r, c]] += h;
            let mut minus = x.clone();
            minus.data[[r, c]] -= h;
            let fd = (loss(p.data(), &plus) - loss(p.data(), &minus)) / (2.0 * h);
            assert!((fd - dx[[r, c]]).abs() < 1e-7);
        }
    }
}
