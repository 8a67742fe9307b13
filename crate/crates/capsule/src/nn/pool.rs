//! Max pooling and global average pooling over NCHW activations.

use ndarray::{Array2, Array4};

#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    // (input dims, argmax flat index per output element)
    cache: Option<((usize, usize, usize, usize), Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (n, c, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let s = self.stride;
        let p = self.padding as isize;
        let mut y = Array4::<f32>::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p;
                                let ix = (ox * s + kx) as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let v = x[[ni, ci, iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        y[[ni, ci, oy, ox]] = best;
                        argmax[((ni * c + ci) * oh + oy) * ow + ox] = best_idx;
                    }
                }
            }
        }
        self.cache = Some(((n, c, h, w), argmax));
        y
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let ((n, c, h, w), argmax) = self.cache.take().expect("forward before backward");
        let (oh, ow) = self.out_size(h, w);
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let flat = argmax[((ni * c + ci) * oh + oy) * ow + ox];
                        dx[[ni, ci, flat / w, flat % w]] += dy[[ni, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

/// Spatial mean, [N, C, H, W] -> [N, C].
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache_dims: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Array4<f32>) -> Array2<f32> {
        self.cache_dims = Some(x.dim());
        self.apply(x)
    }

    pub fn apply(&self, x: &Array4<f32>) -> Array2<f32> {
        let (n, c, h, w) = x.dim();
        let scale = 1.0 / (h * w) as f32;
        let mut y = Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let mut acc = 0.0f32;
                for iy in 0..h {
                    for ix in 0..w {
                        acc += x[[ni, ci, iy, ix]];
                    }
                }
                y[[ni, ci]] = acc * scale;
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f32>) -> Array4<f32> {
        let (n, c, h, w) = self.cache_dims.take().expect("forward before backward");
        let scale = 1.0 / (h * w) as f32;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = dy[[ni, ci]] * scale;
                dx.slice_mut(ndarray::s![ni, ci, .., ..]).fill(g);
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn maxpool_picks_max_and_routes_grad() {
        let mut mp = MaxPool2d::new(2, 2, 0);
        let x = array![[[[1.0, 2.0], [3.0, 4.0]]]];
        let y = mp.forward(&x);
        assert_eq!(y[[0, 0, 0, 0]], 4.0);
        let dx = mp.backward(&array![[[[2.5f32]]]]);
        assert_eq!(dx, array![[[[0.0, 0.0], [0.0, 2.5]]]]);
    }

    #[test]
    fn maxpool_padded_ignores_outside() {
        let mut mp = MaxPool2d::new(3, 2, 1);
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, i, j)| -((i * 4 + j) as f32));
        let y = mp.forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 0.0); // max of top-left window is x[0,0] = 0
    }

    #[test]
    fn gap_is_mean_and_backward_uniform() {
        let mut g = GlobalAvgPool::new();
        let x = array![[[[1.0, 3.0], [5.0, 7.0]]]];
        let y = g.forward(&x);
        assert_eq!(y[[0, 0]], 4.0);
        let dx = g.backward(&array![[8.0f32]]);
        assert_eq!(dx, array![[[[2.0, 2.0], [2.0, 2.0]]]]);
    }
}
