//! Vision-transformer branch: patch embedding, class token, learned
//! positions, encoder blocks, final norm. The branch feature is the class
//! token after the last norm.

use ndarray::{s, Array2, Array3, Array4};

use crate::nn::{Conv2d, LayerNorm, Param, TransformerBlock};

#[derive(Debug, Clone)]
pub struct VitBranch {
    pub patch: Conv2d, // kernel = stride = patch size
    pub cls: Param,    // [1, 1, dim]
    pub pos: Param,    // [1, tokens + 1, dim]
    pub blocks: Vec<TransformerBlock>,
    pub ln: LayerNorm,
    pub dim: usize,
    pub patch_size: usize,
    pub grid: usize, // patches per side
}

#[derive(Debug, Clone, Copy)]
pub struct VitConfig {
    pub input_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f32,
}

impl VitConfig {
    /// The standard base variant: 16px patches, 768 wide, 12 blocks.
    pub fn base(input_size: usize) -> Self {
        VitConfig {
            input_size,
            patch_size: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
        }
    }

    /// Laptop-scale variant used by the tiny hybrid.
    pub fn tiny(input_size: usize) -> Self {
        VitConfig {
            input_size,
            patch_size: 4,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 2.0,
        }
    }
}

impl VitBranch {
    pub fn new(name: &str, cfg: VitConfig, seed: u64) -> Self {
        assert!(
            cfg.input_size % cfg.patch_size == 0,
            "input size must be a multiple of the patch size"
        );
        let grid = cfg.input_size / cfg.patch_size;
        let tokens = grid * grid;
        let blocks = (0..cfg.depth)
            .map(|i| {
                TransformerBlock::new(&format!("{name}.block{i}"), cfg.dim, cfg.heads, cfg.mlp_ratio, seed)
            })
            .collect();
        VitBranch {
            patch: Conv2d::new(
                &format!("{name}.patch"),
                3,
                cfg.dim,
                cfg.patch_size,
                cfg.patch_size,
                0,
                seed,
            ),
            cls: Param::normal(format!("{name}.cls"), &[1, 1, cfg.dim], 0.02, seed),
            pos: Param::normal(format!("{name}.pos"), &[1, tokens + 1, cfg.dim], 0.02, seed),
            blocks,
            ln: LayerNorm::new(&format!("{name}.ln"), cfg.dim),
            dim: cfg.dim,
            patch_size: cfg.patch_size,
            grid,
        }
    }

    fn to_tokens(&self, maps: &Array4<f32>) -> Array3<f32> {
        let (n, d, gh, gw) = maps.dim();
        maps.view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((n, gh * gw, d))
            .unwrap()
    }

    fn from_tokens(&self, tokens: &Array3<f32>) -> Array4<f32> {
        let (n, t, d) = tokens.dim();
        let g = self.grid;
        debug_assert_eq!(t, g * g);
        tokens
            .to_shape((n, g, g, d))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
    }

    /// Class-token features, [N, dim].
    pub fn forward(&mut self, x: &Array4<f32>, _train: bool) -> Array2<f32> {
        let n = x.dim().0;
        let maps = self.patch.forward(x); // [n, dim, g, g]
        let patches = self.to_tokens(&maps); // [n, t, dim]
        let t = patches.dim().1;

        let mut tokens = Array3::<f32>::zeros((n, t + 1, self.dim));
        let cls = self.cls.value.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let pos = self.pos.value.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        for ni in 0..n {
            tokens.slice_mut(s![ni, 0, ..]).assign(&cls.slice(s![0, 0, ..]));
            tokens
                .slice_mut(s![ni, 1.., ..])
                .assign(&patches.slice(s![ni, .., ..]));
        }
        tokens += &pos;

        let mut h = tokens;
        for blk in &mut self.blocks {
            h = blk.forward(&h);
        }
        let h = self.ln.forward(&h);
        h.slice(s![.., 0, ..]).to_owned()
    }

    pub fn backward(&mut self, dfeat: &Array2<f32>) {
        let (n, d) = dfeat.dim();
        let t = self.grid * self.grid;
        let mut dh = Array3::<f32>::zeros((n, t + 1, d));
        dh.slice_mut(s![.., 0, ..]).assign(dfeat);

        let mut g = self.ln.backward(&dh);
        for blk in self.blocks.iter_mut().rev() {
            g = blk.backward(&g);
        }

        // Position grads: sum over the batch.
        let mut dpos = self.pos.grad.view_mut().into_dimensionality::<ndarray::Ix3>().unwrap();
        for ni in 0..n {
            let gi = g.slice(s![ni, .., ..]);
            let mut acc = dpos.slice_mut(s![0, .., ..]);
            acc += &gi;
        }
        // Class-token grad: sum over the batch of token 0.
        let mut dcls = self.cls.grad.view_mut().into_dimensionality::<ndarray::Ix3>().unwrap();
        for ni in 0..n {
            let gi = g.slice(s![ni, 0, ..]);
            let mut acc = dcls.slice_mut(s![0, 0, ..]);
            acc += &gi;
        }

        let dpatches = g.slice(s![.., 1.., ..]).to_owned();
        let dmaps = self.from_tokens(&dpatches);
        let _ = self.patch.backward(&dmaps);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.patch.params_mut();
        p.push(&mut self.cls);
        p.push(&mut self.pos);
        for blk in &mut self.blocks {
            p.extend(blk.params_mut());
        }
        p.extend(self.ln.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.patch.params();
        p.push(&self.cls);
        p.push(&self.pos);
        for blk in &self.blocks {
            p.extend(blk.params());
        }
        p.extend(self.ln.params());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_vit_feature_shape() {
        let mut vit = VitBranch::new("vit", VitConfig::tiny(32), 5);
        let x = Array4::from_shape_fn((2, 3, 32, 32), |(a, b, i, j)| {
            ((a * 7 + b * 3 + i + j) as f32 * 0.05).sin()
        });
        let f = vit.forward(&x, false);
        assert_eq!(f.dim(), (2, 64));
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_input_yields_finite_features() {
        let mut vit = VitBranch::new("vit", VitConfig::tiny(32), 5);
        let x = Array4::zeros((1, 3, 32, 32));
        let f = vit.forward(&x, false);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn vit_param_gradcheck() {
        let cfg = VitConfig {
            input_size: 8,
            patch_size: 4,
            dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
        };
        let mut vit = VitBranch::new("vit", cfg, 17);
        let x = Array4::from_shape_fn((2, 3, 8, 8), |(a, b, i, j)| {
            ((a * 13 + b * 7 + i * 3 + j) as f32 * 0.21).sin()
        });
        let r = Array2::from_shape_fn((2, 8), |(a, b)| ((a * 3 + b) as f32 * 0.17).cos());
        let _f = vit.forward(&x, true);
        vit.backward(&r);

        let loss = |v: &mut VitBranch| (v.forward(&x, true) * &r).sum();
        let eps = 2e-2f32;
        // patch conv weight, cls, pos, a qkv weight
        let picks: Vec<(usize, Vec<usize>)> = vec![
            (0, vec![2, 1, 1, 0]),
            (2, vec![0, 0, 3]),
            (3, vec![0, 2, 5]),
        ];
        for (pi, idx) in picks {
            let an = vit.params()[pi].grad[idx.as_slice()];
            let mut vp = vit.clone();
            vp.params_mut()[pi].value[idx.as_slice()] += eps;
            let mut vm = vit.clone();
            vm.params_mut()[pi].value[idx.as_slice()] -= eps;
            let fd = (loss(&mut vp) - loss(&mut vm)) / (2.0 * eps);
            assert!(
                (fd - an).abs() < 5e-2 * (1.0 + an.abs()),
                "param {pi} idx {idx:?} fd {fd} an {an}"
            );
        }
    }
}
