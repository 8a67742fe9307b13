//! Fully-connected layer over 2-D batches and 3-D token tensors.

use ndarray::{Array2, Array3, Ix2};

use super::param::Param;

/// y = x W^T + b with weight shape [out, in].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
    cache_x: Option<Array2<f32>>,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        // Torch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
        let bound = 1.0 / (in_dim.max(1) as f32).sqrt();
        Linear {
            weight: Param::uniform(format!("{name}.weight"), &[out_dim, in_dim], bound, seed),
            bias: Param::uniform(format!("{name}.bias"), &[out_dim], bound, seed),
            in_dim,
            out_dim,
            cache_x: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn weight2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.weight.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    /// Forward without caching; usable on a shared reference.
    pub fn apply(&self, x: &Array2<f32>) -> Array2<f32> {
        let mut y = x.dot(&self.weight2().t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b;
        y
    }

    pub fn forward(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let y = self.apply(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<f32>) -> Array2<f32> {
        let x = self.cache_x.as_ref().expect("forward before backward");
        let dw = dy.t().dot(x);
        self.weight.grad += &dw;
        let db = dy.sum_axis(ndarray::Axis(0));
        let mut bgrad = self
            .bias
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        bgrad += &db;
        dy.dot(&self.weight2())
    }

    /// Token-tensor convenience: folds [N, T, D] to [(N*T), D] and back.
    pub fn forward_tokens(&mut self, x: &Array3<f32>) -> Array3<f32> {
        let (n, t, d) = x.dim();
        let flat = x
            .to_shape(((n * t), d))
            .expect("token tensor must be standard layout")
            .to_owned();
        let y = self.forward(&flat);
        let out = self.out_dim;
        y.into_shape_with_order((n, t, out)).unwrap()
    }

    pub fn backward_tokens(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let (n, t, d) = dy.dim();
        let flat = dy.to_shape(((n * t), d)).unwrap().to_owned();
        let dx = self.backward(&flat);
        let in_dim = self.in_dim;
        dx.into_shape_with_order((n, t, in_dim)).unwrap()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_matches_manual_matmul() {
        let mut lin = Linear::new("l", 2, 3, 1);
        lin.weight.value = array![[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]].into_dyn();
        lin.bias.value = array![0.1, 0.2, 0.3].into_dyn();
        let x = array![[1.0, 1.0], [2.0, 0.0]];
        let y = lin.forward(&x);
        assert_eq!(y, array![[3.1, -0.8, 3.8], [2.1, 0.2, 6.3]]);
    }

    #[test]
    fn backward_grads_match_finite_difference() {
        let mut lin = Linear::new("l", 4, 3, 9);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| ((i * 7 + j * 3) as f32).sin());
        let r = Array2::from_shape_fn((5, 3), |(i, j)| ((i + 2 * j) as f32).cos());
        let y = lin.forward(&x);
        let _ = y; // loss = sum(y * r)
        let dx = lin.backward(&r);

        let base = |l: &Linear, x: &Array2<f32>| (l.apply(x) * &r).sum();
        let eps = 1e-2f32;
        // Check a few weight entries.
        for &(a, b) in &[(0usize, 0usize), (2, 3), (1, 1)] {
            let mut lp = lin.clone();
            let mut lm = lin.clone();
            lp.weight.value[[a, b]] += eps;
            lm.weight.value[[a, b]] -= eps;
            let fd = (base(&lp, &x) - base(&lm, &x)) / (2.0 * eps);
            let an = lin.weight.grad[[a, b]];
            assert!((fd - an).abs() < 1e-2 * (1.0 + an.abs()), "fd {fd} an {an}");
        }
        // Input gradient.
        let mut xp = x.clone();
        xp[[0, 1]] += eps;
        let mut xm = x.clone();
        xm[[0, 1]] -= eps;
        let fd = (base(&lin, &xp) - base(&lin, &xm)) / (2.0 * eps);
        assert!((fd - dx[[0, 1]]).abs() < 1e-2 * (1.0 + dx[[0, 1]].abs()));
    }
}
