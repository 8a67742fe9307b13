//! Adam optimizer with per-parameter state keyed by parameter name.

use std::collections::HashMap;

use ndarray::ArrayD;

use super::param::Param;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step_count: u64,
    state: HashMap<String, (ArrayD<f32>, ArrayD<f32>)>, // (m, v)
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let (m, v) = self
                .state
                .entry(p.name.clone())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            debug_assert_eq!(m.raw_dim(), p.value.raw_dim(), "param {} resized", p.name);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }

    pub fn zero_grad(params: &mut [&mut Param]) {
        for p in params.iter_mut() {
            p.zero_grad();
        }
    }
}
