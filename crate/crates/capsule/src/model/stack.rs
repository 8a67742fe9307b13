//! Sequential NCHW op stacks with an index-addressable activation surface.
//!
//! GradCAM needs two things a plain sequential container does not give:
//! the activation produced at a chosen op, and the gradient arriving at
//! that same op from above. `ConvStack::forward_capture` and
//! `ConvStack::backward_to` provide both.

use ndarray::Array4;

use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2d, Param, Relu};

use super::resnet::{BasicBlock, Bottleneck};

#[derive(Debug, Clone)]
pub enum CnnOp {
    Conv(Conv2d),
    Bn(BatchNorm2d),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Basic(BasicBlock),
    Bottleneck(Bottleneck),
}

impl CnnOp {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        match self {
            CnnOp::Conv(c) => c.forward(x),
            CnnOp::Bn(b) => b.forward(x, train),
            CnnOp::Relu(r) => r
                .forward(&x.clone().into_dyn())
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap(),
            CnnOp::MaxPool(m) => m.forward(x),
            CnnOp::Basic(b) => b.forward(x, train),
            CnnOp::Bottleneck(b) => b.forward(x, train),
        }
    }

    fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        match self {
            CnnOp::Conv(c) => c.backward(dy),
            CnnOp::Bn(b) => b.backward(dy),
            CnnOp::Relu(r) => r
                .backward(&dy.clone().into_dyn())
                .into_dimensionality::<ndarray::Ix4>()
                .unwrap(),
            CnnOp::MaxPool(m) => m.backward(dy),
            CnnOp::Basic(b) => b.backward(dy),
            CnnOp::Bottleneck(b) => b.backward(dy),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            CnnOp::Conv(c) => c.params_mut(),
            CnnOp::Bn(b) => b.params_mut(),
            CnnOp::Basic(b) => b.params_mut(),
            CnnOp::Bottleneck(b) => b.params_mut(),
            CnnOp::Relu(_) | CnnOp::MaxPool(_) => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            CnnOp::Conv(c) => c.params(),
            CnnOp::Bn(b) => b.params(),
            CnnOp::Basic(b) => b.params(),
            CnnOp::Bottleneck(b) => b.params(),
            CnnOp::Relu(_) | CnnOp::MaxPool(_) => Vec::new(),
        }
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        match self {
            CnnOp::Bn(b) => vec![b],
            CnnOp::Basic(b) => b.batch_norms_mut(),
            CnnOp::Bottleneck(b) => b.batch_norms_mut(),
            _ => Vec::new(),
        }
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        match self {
            CnnOp::Bn(b) => vec![b],
            CnnOp::Basic(b) => b.batch_norms(),
            CnnOp::Bottleneck(b) => b.batch_norms(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvStack {
    pub ops: Vec<CnnOp>,
}

impl ConvStack {
    pub fn new(ops: Vec<CnnOp>) -> Self {
        ConvStack { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let mut h = x.clone();
        for op in &mut self.ops {
            h = op.forward(&h, train);
        }
        h
    }

    /// Forward that additionally returns the output of op `capture`.
    pub fn forward_capture(
        &mut self,
        x: &Array4<f32>,
        train: bool,
        capture: usize,
    ) -> (Array4<f32>, Array4<f32>) {
        assert!(capture < self.ops.len());
        let mut h = x.clone();
        let mut captured = None;
        for (i, op) in self.ops.iter_mut().enumerate() {
            h = op.forward(&h, train);
            if i == capture {
                captured = Some(h.clone());
            }
        }
        (h, captured.expect("capture index visited"))
    }

    /// Full backward; returns the gradient w.r.t. the stack input.
    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let mut g = dy.clone();
        for op in self.ops.iter_mut().rev() {
            g = op.backward(&g);
        }
        g
    }

    /// Backward from the top, stopping once the gradient w.r.t. the output
    /// of op `stop_at` is known; ops at and below `stop_at` are untouched.
    pub fn backward_to(&mut self, dy: &Array4<f32>, stop_at: usize) -> Array4<f32> {
        assert!(stop_at < self.ops.len());
        let mut g = dy.clone();
        for i in (stop_at + 1..self.ops.len()).rev() {
            g = self.ops[i].backward(&g);
        }
        g
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.ops.iter_mut().flat_map(|o| o.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.ops.iter().flat_map(|o| o.params()).collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        self.ops.iter_mut().flat_map(|o| o.batch_norms_mut()).collect()
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        self.ops.iter().flat_map(|o| o.batch_norms()).collect()
    }
}

/// A convolutional feature extractor: op stack followed by global average
/// pooling into a flat feature vector.
#[derive(Debug, Clone)]
pub struct CnnBranch {
    pub stack: ConvStack,
    pub gap: GlobalAvgPool,
    pub out_dim: usize,
}

impl CnnBranch {
    pub fn new(stack: ConvStack, out_dim: usize) -> Self {
        CnnBranch {
            stack,
            gap: GlobalAvgPool::new(),
            out_dim,
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> ndarray::Array2<f32> {
        let maps = self.stack.forward(x, train);
        self.gap.forward(&maps)
    }

    pub fn forward_capture(
        &mut self,
        x: &Array4<f32>,
        capture: usize,
    ) -> (ndarray::Array2<f32>, Array4<f32>) {
        let (maps, act) = self.stack.forward_capture(x, false, capture);
        (self.gap.forward(&maps), act)
    }

    pub fn backward(&mut self, dfeat: &ndarray::Array2<f32>) {
        let dmaps = self.gap.backward(dfeat);
        let _ = self.stack.backward(&dmaps);
    }

    /// Gradient w.r.t. the output of stack op `stop_at`.
    pub fn backward_to(&mut self, dfeat: &ndarray::Array2<f32>, stop_at: usize) -> Array4<f32> {
        let dmaps = self.gap.backward(dfeat);
        self.stack.backward_to(&dmaps, stop_at)
    }

    /// Index of the final spatial op (the default GradCAM target).
    pub fn last_op_index(&self) -> usize {
        self.stack.len() - 1
    }
}
