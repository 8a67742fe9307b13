//! Classification head: the only part of a model replaced between stages.

use ndarray::Array2;

use crate::nn::{Linear, Param, Relu};

#[derive(Debug, Clone)]
pub enum Head {
    Linear(Linear),
    TwoLayer {
        hidden: Linear,
        relu: Relu,
        out: Linear,
    },
}

impl Head {
    pub fn linear(in_dim: usize, num_classes: usize, seed: u64) -> Self {
        Head::Linear(Linear::new("head.out", in_dim, num_classes, seed))
    }

    pub fn two_layer(in_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Self {
        Head::TwoLayer {
            hidden: Linear::new("head.hidden", in_dim, hidden_dim, seed),
            relu: Relu::new(),
            out: Linear::new("head.out", hidden_dim, num_classes, seed),
        }
    }

    /// Width of the feature vector the final layer consumes.
    pub fn out_in_dim(&self) -> usize {
        match self {
            Head::Linear(l) => l.in_dim(),
            Head::TwoLayer { out, .. } => out.in_dim(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Head::Linear(l) => l.out_dim(),
            Head::TwoLayer { out, .. } => out.out_dim(),
        }
    }

    pub fn forward(&mut self, features: &Array2<f32>) -> Array2<f32> {
        match self {
            Head::Linear(l) => l.forward(features),
            Head::TwoLayer { hidden, relu, out } => {
                let h = hidden.forward(features);
                let a = relu
                    .forward(&h.into_dyn())
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                out.forward(&a)
            }
        }
    }

    /// Forward without caching.
    pub fn apply(&self, features: &Array2<f32>) -> Array2<f32> {
        match self {
            Head::Linear(l) => l.apply(features),
            Head::TwoLayer { hidden, out, .. } => {
                let h = hidden.apply(features);
                let a = Relu::apply(&h.into_dyn())
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                out.apply(&a)
            }
        }
    }

    pub fn backward(&mut self, dlogits: &Array2<f32>) -> Array2<f32> {
        match self {
            Head::Linear(l) => l.backward(dlogits),
            Head::TwoLayer { hidden, relu, out } => {
                let da = out.backward(dlogits);
                let dh = relu
                    .backward(&da.into_dyn())
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap();
                hidden.backward(&dh)
            }
        }
    }

    /// The output layer's rows, used when expanding the label space.
    pub fn output_layer(&self) -> &Linear {
        match self {
            Head::Linear(l) => l,
            Head::TwoLayer { out, .. } => out,
        }
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear {
        match self {
            Head::Linear(l) => l,
            Head::TwoLayer { out, .. } => out,
        }
    }

    /// Replace the output layer, keeping any hidden layer untouched.
    pub fn with_output_layer(self, out: Linear) -> Self {
        match self {
            Head::Linear(_) => Head::Linear(out),
            Head::TwoLayer { hidden, relu, .. } => Head::TwoLayer { hidden, relu, out },
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Head::Linear(l) => l.params_mut(),
            Head::TwoLayer { hidden, out, .. } => {
                let mut p = hidden.params_mut();
                p.extend(out.params_mut());
                p
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Head::Linear(l) => l.params(),
            Head::TwoLayer { hidden, out, .. } => {
                let mut p = hidden.params();
                p.extend(out.params());
                p
            }
        }
    }
}
