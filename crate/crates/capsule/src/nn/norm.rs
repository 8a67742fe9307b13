//! Batch normalization (NCHW) and layer normalization (last axis of tokens).

use ndarray::{Array1, Array3, Array4, Axis};

use super::param::Param;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    /// Running statistics are buffers, not optimized parameters.
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub channels: usize,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Array4<f32>,
    inv_std: Array1<f32>, // per channel
    train: bool,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::full(format!("{name}.gamma"), &[channels], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            channels,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let count = (n * h * w) as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        if !train {
            // Running statistics are constants here; cache enough for the
            // eval-mode backward used by heatmap extraction.
            let mut x_hat = x.clone();
            let mut inv_std = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let inv = 1.0 / (self.running_var[ci] + BN_EPS).sqrt();
                inv_std[ci] = inv;
                let m = self.running_mean[ci];
                x_hat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - m) * inv);
            }
            let mut y = x_hat.clone();
            for ci in 0..c {
                let (g, b) = (gamma[ci], beta[ci]);
                y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
            }
            self.cache = Some(BnCache {
                x_hat,
                inv_std,
                train: false,
            });
            return y;
        }

        let mut mean = Array1::<f32>::zeros(c);
        let mut var = Array1::<f32>::zeros(c);
        for ci in 0..c {
            let ch = x.index_axis(Axis(1), ci);
            let m = ch.sum() / count;
            let v = ch.iter().map(|&e| (e - m) * (e - m)).sum::<f32>() / count;
            mean[ci] = m;
            var[ci] = v;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

        let mut x_hat = x.clone();
        for ci in 0..c {
            let (m, inv) = (mean[ci], inv_std[ci]);
            x_hat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - m) * inv);
        }
        let mut y = x_hat.clone();
        for ci in 0..c {
            let (g, b) = (gamma[ci], beta[ci]);
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
        }

        // Unbiased variance for the running estimate.
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        for ci in 0..c {
            self.running_mean[ci] =
                (1.0 - BN_MOMENTUM) * self.running_mean[ci] + BN_MOMENTUM * mean[ci];
            self.running_var[ci] =
                (1.0 - BN_MOMENTUM) * self.running_var[ci] + BN_MOMENTUM * var[ci] * unbias;
        }

        self.cache = Some(BnCache {
            x_hat,
            inv_std,
            train: true,
        });
        y
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let BnCache {
            x_hat,
            inv_std,
            train,
        } = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = dy.dim();
        let count = (n * h * w) as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let mut dx = Array4::<f32>::zeros(dy.raw_dim());
        for ci in 0..c {
            let dyc = dy.index_axis(Axis(1), ci);
            let xhc = x_hat.index_axis(Axis(1), ci);
            let sum_dy = dyc.sum();
            let sum_dy_xhat = (&dyc * &xhc).sum();
            self.beta.grad[[ci]] += sum_dy;
            self.gamma.grad[[ci]] += sum_dy_xhat;

            let scale = gamma[ci] * inv_std[ci];
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            if train {
                let mean_dy = sum_dy / count;
                let mean_dy_xhat = sum_dy_xhat / count;
                ndarray::Zip::from(&mut dxc).and(&dyc).and(&xhc).for_each(|d, &g, &xh| {
                    *d = scale * (g - mean_dy - xh * mean_dy_xhat);
                });
            } else {
                ndarray::Zip::from(&mut dxc).and(&dyc).for_each(|d, &g| {
                    *d = scale * g;
                });
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

const LN_EPS: f32 = 1e-5;

/// Layer norm over the last axis of [N, T, D] tokens.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub dim: usize,
    cache: Option<(Array3<f32>, Array3<f32>)>, // (x_hat, inv_std broadcast [n,t,1])
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: Param::full(format!("{name}.gamma"), &[dim], 1.0),
            beta: Param::zeros(format!("{name}.beta"), &[dim]),
            dim,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<f32>) -> Array3<f32> {
        let (n, t, d) = x.dim();
        let df = d as f32;
        let mut x_hat = Array3::<f32>::zeros((n, t, d));
        let mut inv_std = Array3::<f32>::zeros((n, t, 1));
        for ni in 0..n {
            for ti in 0..t {
                let row = x.slice(ndarray::s![ni, ti, ..]);
                let m = row.sum() / df;
                let v = row.iter().map(|&e| (e - m) * (e - m)).sum::<f32>() / df;
                let inv = 1.0 / (v + LN_EPS).sqrt();
                inv_std[[ni, ti, 0]] = inv;
                let mut dst = x_hat.slice_mut(ndarray::s![ni, ti, ..]);
                ndarray::Zip::from(&mut dst).and(&row).for_each(|o, &e| *o = (e - m) * inv);
            }
        }
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let y = &x_hat * &gamma + &beta;
        self.cache = Some((x_hat, inv_std));
        y
    }

    pub fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let (x_hat, inv_std) = self.cache.take().expect("forward before backward");
        let (n, t, d) = dy.dim();
        let df = d as f32;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        // Parameter grads.
        let mut ggrad = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut bgrad = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        for ni in 0..n {
            for ti in 0..t {
                for di in 0..d {
                    let g = dy[[ni, ti, di]];
                    ggrad[di] += g * x_hat[[ni, ti, di]];
                    bgrad[di] += g;
                }
            }
        }

        let mut dx = Array3::<f32>::zeros((n, t, d));
        for ni in 0..n {
            for ti in 0..t {
                let mut sum_g = 0.0f32;
                let mut sum_gx = 0.0f32;
                for di in 0..d {
                    let g = dy[[ni, ti, di]] * gamma[di];
                    sum_g += g;
                    sum_gx += g * x_hat[[ni, ti, di]];
                }
                let inv = inv_std[[ni, ti, 0]];
                let (mg, mgx) = (sum_g / df, sum_gx / df);
                for di in 0..d {
                    let g = dy[[ni, ti, di]] * gamma[di];
                    dx[[ni, ti, di]] = inv * (g - mg - x_hat[[ni, ti, di]] * mgx);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};

    #[test]
    fn bn_train_normalizes_batch() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = Array4::from_shape_fn((4, 2, 3, 3), |(a, b, i, j)| {
            (a * 13 + b * 7 + i * 3 + j) as f32 * 0.1
        });
        let y = bn.forward(&x, true);
        for ci in 0..2 {
            let ch = y.index_axis(Axis(1), ci);
            let m = ch.sum() / ch.len() as f32;
            let v = ch.iter().map(|&e| (e - m) * (e - m)).sum::<f32>() / ch.len() as f32;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn bn_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::new("bn", 1);
        bn.running_mean[0] = 2.0;
        bn.running_var[0] = 4.0;
        let x = Array4::from_elem((1, 1, 2, 2), 4.0f32);
        let y = bn.forward(&x, false);
        // (4 - 2)/sqrt(4 + eps) ~ 1.0
        assert!((y[[0, 0, 0, 0]] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bn_backward_matches_finite_difference_on_gamma() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = Array4::from_shape_fn((3, 2, 4, 4), |(a, b, i, j)| {
            ((a * 11 + b * 5 + i * 2 + j) as f32 * 0.37).sin()
        });
        let r = Array4::from_shape_fn((3, 2, 4, 4), |(a, b, i, j)| {
            ((a + b + i + j) as f32 * 0.21).cos()
        });
        let _ = bn.forward(&x, true);
        let _dx = bn.backward(&r);
        let loss = |bnv: &mut BatchNorm2d| (bnv.forward(&x, true) * &r).sum();
        let eps = 1e-2f32;
        let mut bp = bn.clone();
        bp.gamma.value[[0]] += eps;
        let mut bm = bn.clone();
        bm.gamma.value[[0]] -= eps;
        let fd = (loss(&mut bp) - loss(&mut bm)) / (2.0 * eps);
        let an = bn.gamma.grad[[0]];
        assert!((fd - an).abs() < 2e-2 * (1.0 + an.abs()), "fd {fd} an {an}");
    }

    #[test]
    fn ln_normalizes_rows_and_zero_input_is_finite() {
        let mut ln = LayerNorm::new("ln", 8);
        let x = Array3::<f32>::zeros((2, 3, 8));
        let y = ln.forward(&x);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ln_backward_matches_finite_difference() {
        let mut ln = LayerNorm::new("ln", 6);
        let x = Array3::from_shape_fn((2, 2, 6), |(a, t, d)| ((a * 17 + t * 5 + d) as f32 * 0.47).sin());
        let r = Array3::from_shape_fn((2, 2, 6), |(a, t, d)| ((a + t + d) as f32 * 0.19).cos());
        let _ = ln.forward(&x);
        let dx = ln.backward(&r);
        let eps = 1e-2f32;
        let mut lp = ln.clone();
        let loss = |l: &mut LayerNorm, xv: &Array3<f32>| (l.forward(xv) * &r).sum();
        let mut xp = x.clone();
        xp[[1, 0, 3]] += eps;
        let mut xm = x.clone();
        xm[[1, 0, 3]] -= eps;
        let fd = (loss(&mut lp, &xp) - loss(&mut lp, &xm)) / (2.0 * eps);
        let an = dx[[1, 0, 3]];
        assert!((fd - an).abs() < 2e-2 * (1.0 + an.abs()), "fd {fd} an {an}");
    }
}
