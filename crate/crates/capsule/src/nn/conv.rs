//! 2-D convolution via im2col + GEMM.
//!
//! Activations are NCHW `Array4<f32>`. The backward pass recomputes the
//! column matrix from the cached input instead of holding it, trading a
//! little compute for a much smaller cache.

use ndarray::{Array2, Array4, Axis, Ix4};

use super::param::Param;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param, // [out_c, in_c, kh, kw]
    pub bias: Param,   // [out_c]
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache_x: Option<Array4<f32>>,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        seed: u64,
    ) -> Self {
        let fan_in = in_c * kernel * kernel;
        Conv2d {
            weight: Param::kaiming(
                format!("{name}.weight"),
                &[out_c, in_c, kernel, kernel],
                fan_in,
                seed,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[out_c]),
            in_c,
            out_c,
            kernel,
            stride,
            padding,
            cache_x: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn pad_input(&self, x: &Array4<f32>) -> Array4<f32> {
        if self.padding == 0 {
            return x.clone();
        }
        let (n, c, h, w) = x.dim();
        let p = self.padding;
        let mut padded = Array4::zeros((n, c, h + 2 * p, w + 2 * p));
        padded
            .slice_mut(ndarray::s![.., .., p..p + h, p..p + w])
            .assign(x);
        padded
    }

    /// Column matrix [n*oh*ow, in_c*k*k] for GEMM.
    fn im2col(&self, x_pad: &Array4<f32>, oh: usize, ow: usize) -> Array2<f32> {
        let (n, c, _, _) = x_pad.dim();
        let k = self.kernel;
        let s = self.stride;
        let mut cols = Array2::<f32>::zeros((n * oh * ow, c * k * k));
        let xp = x_pad.as_slice().expect("padded input is standard layout");
        let (_, _, ph, pw) = x_pad.dim();
        let cols_slice = cols.as_slice_mut().unwrap();
        let row_len = c * k * k;
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((ni * oh) + oy) * ow + ox;
                    let out_base = row * row_len;
                    for ci in 0..c {
                        for ky in 0..k {
                            let src = ((ni * c + ci) * ph + (oy * s + ky)) * pw + ox * s;
                            let dst = out_base + (ci * k + ky) * k;
                            cols_slice[dst..dst + k].copy_from_slice(&xp[src..src + k]);
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-add of the column gradient back to input layout.
    fn col2im(&self, dcols: &Array2<f32>, n: usize, h: usize, w: usize) -> Array4<f32> {
        let c = self.in_c;
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding;
        let (oh, ow) = self.out_size(h, w);
        let (ph, pw) = (h + 2 * p, w + 2 * p);
        let mut dx_pad = Array4::<f32>::zeros((n, c, ph, pw));
        let dxs = dx_pad.as_slice_mut().unwrap();
        let dc = dcols.as_slice().expect("dcols standard layout");
        let row_len = c * k * k;
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = ((ni * oh) + oy) * ow + ox;
                    let in_base = row * row_len;
                    for ci in 0..c {
                        for ky in 0..k {
                            let dst = ((ni * c + ci) * ph + (oy * s + ky)) * pw + ox * s;
                            let src = in_base + (ci * k + ky) * k;
                            for kx in 0..k {
                                dxs[dst + kx] += dc[src + kx];
                            }
                        }
                    }
                }
            }
        }
        if p == 0 {
            dx_pad
        } else {
            dx_pad
                .slice(ndarray::s![.., .., p..p + h, p..p + w])
                .to_owned()
        }
    }

    fn weight_mat(&self) -> Array2<f32> {
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap()
            .to_shape((self.out_c, self.in_c * self.kernel * self.kernel))
            .unwrap()
            .to_owned()
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let y = self.apply(x);
        self.cache_x = Some(x.clone());
        y
    }

    /// Forward without caching.
    pub fn apply(&self, x: &Array4<f32>) -> Array4<f32> {
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let x_pad = self.pad_input(x);
        let cols = self.im2col(&x_pad, oh, ow);
        let w_mat = self.weight_mat();
        let mut y_mat = cols.dot(&w_mat.t()); // [n*oh*ow, out_c]
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        y_mat += &b;
        y_mat
            .into_shape_with_order((n, oh, ow, self.out_c))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let x = self.cache_x.take().expect("forward before backward");
        let (n, _, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let dy_mat = dy
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n * oh * ow, self.out_c))
            .unwrap();

        let x_pad = self.pad_input(&x);
        let cols = self.im2col(&x_pad, oh, ow);

        let dw = dy_mat.t().dot(&cols); // [out_c, in_c*k*k]
        let dw4 = dw
            .into_shape_with_order((self.out_c, self.in_c, self.kernel, self.kernel))
            .unwrap();
        self.weight.grad += &dw4.into_dyn();
        let db = dy_mat.sum_axis(Axis(0));
        let mut bg = self
            .bias
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        bg += &db;

        let dcols = dy_mat.dot(&self.weight_mat()); // [n*oh*ow, in_c*k*k]
        self.col2im(&dcols, n, h, w)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}
