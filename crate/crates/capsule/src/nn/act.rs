//! Elementwise activations with cached masks/inputs for the backward pass.

use ndarray::ArrayD;

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<ArrayD<f32>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &ArrayD<f32>) -> ArrayD<f32> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn apply(x: &ArrayD<f32>) -> ArrayD<f32> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &ArrayD<f32>) -> ArrayD<f32> {
        let mask = self.mask.take().expect("forward before backward");
        dy * &mask
    }
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn gelu_scalar(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Tanh-approximated GELU.
#[derive(Debug, Clone, Default)]
pub struct Gelu {
    cache_x: Option<ArrayD<f32>>,
}

impl Gelu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &ArrayD<f32>) -> ArrayD<f32> {
        self.cache_x = Some(x.clone());
        x.mapv(gelu_scalar)
    }

    pub fn apply(x: &ArrayD<f32>) -> ArrayD<f32> {
        x.mapv(gelu_scalar)
    }

    pub fn backward(&mut self, dy: &ArrayD<f32>) -> ArrayD<f32> {
        let x = self.cache_x.take().expect("forward before backward");
        dy * &x.mapv(gelu_grad_scalar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_masks_negatives() {
        let mut r = Relu::new();
        let x = array![-1.0f32, 0.0, 2.0].into_dyn();
        assert_eq!(r.forward(&x), array![0.0f32, 0.0, 2.0].into_dyn());
        let dx = r.backward(&array![5.0f32, 5.0, 5.0].into_dyn());
        assert_eq!(dx, array![0.0f32, 0.0, 5.0].into_dyn());
    }

    #[test]
    fn gelu_matches_reference_points() {
        // Reference values of the tanh approximation.
        assert!((gelu_scalar(0.0) - 0.0).abs() < 1e-7);
        assert!((gelu_scalar(1.0) - 0.841192).abs() < 1e-5);
        assert!((gelu_scalar(-1.0) + 0.158808).abs() < 1e-5);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-2.0f32, -0.5, 0.0, 0.3, 1.7] {
            let eps = 1e-3;
            let fd = (gelu_scalar(x + eps) - gelu_scalar(x - eps)) / (2.0 * eps);
            let an = gelu_grad_scalar(x);
            assert!((fd - an).abs() < 1e-3, "x {x} fd {fd} an {an}");
        }
    }
}
