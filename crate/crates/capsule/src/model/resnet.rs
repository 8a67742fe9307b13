//! Residual blocks and ResNet-style feature extractors.

use ndarray::Array4;

use crate::nn::{BatchNorm2d, Conv2d, Param, Relu};

/// Two 3x3 convolutions with identity (or projected) skip.
#[derive(Debug, Clone)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu,
}

impl BasicBlock {
    pub fn new(name: &str, in_c: usize, out_c: usize, stride: usize, seed: u64) -> Self {
        let down = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(&format!("{name}.down.conv"), in_c, out_c, 1, stride, 0, seed),
                BatchNorm2d::new(&format!("{name}.down.bn"), out_c),
            ))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_c, out_c, 3, stride, 1, seed),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), out_c, out_c, 3, 1, 1, seed),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_c),
            down,
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let identity = match &mut self.down {
            Some((conv, bn)) => bn.forward(&conv.forward(x), train),
            None => x.clone(),
        };
        let mut h = self.conv1.forward(x);
        h = self.bn1.forward(&h, train);
        h = self
            .relu1
            .forward(&h.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        h = self.conv2.forward(&h);
        h = self.bn2.forward(&h, train);
        let sum = &h + &identity;
        self.relu_out
            .forward(&sum.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let dsum = self
            .relu_out
            .backward(&dy.clone().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let mut dh = self.bn2.backward(&dsum);
        dh = self.conv2.backward(&dh);
        dh = self
            .relu1
            .backward(&dh.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        dh = self.bn1.backward(&dh);
        let dx_main = self.conv1.backward(&dh);
        let dx_skip = match &mut self.down {
            Some((conv, bn)) => conv.backward(&bn.backward(&dsum)),
            None => dsum,
        };
        &dx_main + &dx_skip
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        if let Some((c, b)) = &mut self.down {
            p.extend(c.params_mut());
            p.extend(b.params_mut());
        }
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.conv1.params();
        p.extend(self.bn1.params());
        p.extend(self.conv2.params());
        p.extend(self.bn2.params());
        if let Some((c, b)) = &self.down {
            p.extend(c.params());
            p.extend(b.params());
        }
        p
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, b)) = &mut self.down {
            v.push(b);
        }
        v
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1, &self.bn2];
        if let Some((_, b)) = &self.down {
            v.push(b);
        }
        v
    }
}

/// 1x1 -> 3x3 -> 1x1 bottleneck with 4x expansion.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
    relu_out: Relu,
}

pub const BOTTLENECK_EXPANSION: usize = 4;

impl Bottleneck {
    pub fn new(name: &str, in_c: usize, mid_c: usize, stride: usize, seed: u64) -> Self {
        let out_c = mid_c * BOTTLENECK_EXPANSION;
        let down = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(&format!("{name}.down.conv"), in_c, out_c, 1, stride, 0, seed),
                BatchNorm2d::new(&format!("{name}.down.bn"), out_c),
            ))
        } else {
            None
        };
        Bottleneck {
            conv1: Conv2d::new(&format!("{name}.conv1"), in_c, mid_c, 1, 1, 0, seed),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), mid_c),
            relu1: Relu::new(),
            conv2: Conv2d::new(&format!("{name}.conv2"), mid_c, mid_c, 3, stride, 1, seed),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), mid_c),
            relu2: Relu::new(),
            conv3: Conv2d::new(&format!("{name}.conv3"), mid_c, out_c, 1, 1, 0, seed),
            bn3: BatchNorm2d::new(&format!("{name}.bn3"), out_c),
            down,
            relu_out: Relu::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let identity = match &mut self.down {
            Some((conv, bn)) => bn.forward(&conv.forward(x), train),
            None => x.clone(),
        };
        let mut h = self.bn1.forward(&self.conv1.forward(x), train);
        h = self
            .relu1
            .forward(&h.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        h = self.bn2.forward(&self.conv2.forward(&h), train);
        h = self
            .relu2
            .forward(&h.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        h = self.bn3.forward(&self.conv3.forward(&h), train);
        let sum = &h + &identity;
        self.relu_out
            .forward(&sum.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap()
    }

    pub fn backward(&mut self, dy: &Array4<f32>) -> Array4<f32> {
        let dsum = self
            .relu_out
            .backward(&dy.clone().into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let mut dh = self.bn3.backward(&dsum);
        dh = self.conv3.backward(&dh);
        dh = self
            .relu2
            .backward(&dh.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        dh = self.bn2.backward(&dh);
        dh = self.conv2.backward(&dh);
        dh = self
            .relu1
            .backward(&dh.into_dyn())
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        dh = self.bn1.backward(&dh);
        let dx_main = self.conv1.backward(&dh);
        let dx_skip = match &mut self.down {
            Some((conv, bn)) => conv.backward(&bn.backward(&dsum)),
            None => dsum,
        };
        &dx_main + &dx_skip
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        p.extend(self.conv3.params_mut());
        p.extend(self.bn3.params_mut());
        if let Some((c, b)) = &mut self.down {
            p.extend(c.params_mut());
            p.extend(b.params_mut());
        }
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.conv1.params();
        p.extend(self.bn1.params());
        p.extend(self.conv2.params());
        p.extend(self.bn2.params());
        p.extend(self.conv3.params());
        p.extend(self.bn3.params());
        if let Some((c, b)) = &self.down {
            p.extend(c.params());
            p.extend(b.params());
        }
        p
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2, &mut self.bn3];
        if let Some((_, b)) = &mut self.down {
            v.push(b);
        }
        v
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1, &self.bn2, &self.bn3];
        if let Some((_, b)) = &self.down {
            v.push(b);
        }
        v
    }
}

use super::stack::{CnnOp, ConvStack};

fn stem(name: &str, seed: u64) -> Vec<CnnOp> {
    vec![
        CnnOp::Conv(Conv2d::new(&format!("{name}.stem.conv"), 3, 64, 7, 2, 3, seed)),
        CnnOp::Bn(BatchNorm2d::new(&format!("{name}.stem.bn"), 64)),
        CnnOp::Relu(Relu::new()),
        CnnOp::MaxPool(crate::nn::MaxPool2d::new(3, 2, 1)),
    ]
}

/// ResNet-34 layout: basic blocks [3, 4, 6, 3], 512-dim pooled output.
pub fn resnet34_stack(name: &str, seed: u64) -> ConvStack {
    let mut ops = stem(name, seed);
    let plan: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    let mut in_c = 64;
    for (li, (out_c, blocks, first_stride)) in plan.into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 { first_stride } else { 1 };
            ops.push(CnnOp::Basic(BasicBlock::new(
                &format!("{name}.layer{}.{b}", li + 1),
                in_c,
                out_c,
                stride,
                seed,
            )));
            in_c = out_c;
        }
    }
    ConvStack::new(ops)
}

pub const RESNET34_DIM: usize = 512;

/// ResNet-50 layout: bottlenecks [3, 4, 6, 3], 2048-dim pooled output.
pub fn resnet50_stack(name: &str, seed: u64) -> ConvStack {
    let mut ops = stem(name, seed);
    let plan: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    let mut in_c = 64;
    for (li, (mid_c, blocks, first_stride)) in plan.into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 { first_stride } else { 1 };
            ops.push(CnnOp::Bottleneck(Bottleneck::new(
                &format!("{name}.layer{}.{b}", li + 1),
                in_c,
                mid_c,
                stride,
                seed,
            )));
            in_c = mid_c * BOTTLENECK_EXPANSION;
        }
    }
    ConvStack::new(ops)
}

pub const RESNET50_DIM: usize = 2048;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_block_preserves_shape_without_stride() {
        let mut blk = BasicBlock::new("b", 8, 8, 1, 1);
        let x = Array4::from_shape_fn((2, 8, 6, 6), |(a, b, i, j)| ((a + b + i + j) as f32).sin());
        let y = blk.forward(&x, true);
        assert_eq!(y.dim(), (2, 8, 6, 6));
    }

    #[test]
    fn basic_block_gradcheck_input() {
        let mut blk = BasicBlock::new("b", 3, 4, 2, 7);
        let x = Array4::from_shape_fn((2, 3, 6, 6), |(a, b, i, j)| {
            ((a * 5 + b * 3 + i * 2 + j) as f32 * 0.31).sin()
        });
        let y = blk.forward(&x, true);
        let r = Array4::from_shape_fn(y.dim(), |(a, b, i, j)| ((a + b + i + j) as f32 * 0.13).cos());
        let dx = blk.backward(&r);

        let mut probe = blk.clone();
        let loss = |b: &mut BasicBlock, xv: &Array4<f32>| (b.forward(xv, true) * &r).sum();
        let eps = 1e-2f32;
        for &idx in &[[0usize, 0, 0, 0], [1, 2, 3, 4], [0, 1, 5, 2]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&mut probe, &xp) - loss(&mut probe, &xm)) / (2.0 * eps);
            let an = dx[idx];
            assert!(
                (fd - an).abs() < 5e-2 * (1.0 + an.abs()),
                "idx {idx:?} fd {fd} an {an}"
            );
        }
    }

    #[test]
    fn bottleneck_expands_channels() {
        let mut blk = Bottleneck::new("b", 16, 8, 1, 3);
        let x = Array4::zeros((1, 16, 4, 4));
        let y = blk.forward(&x, false);
        assert_eq!(y.dim(), (1, 32, 4, 4));
    }
}
