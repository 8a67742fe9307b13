//! Multi-head self-attention and the pre-norm transformer block.

use ndarray::{Array2, Array3, s};

use super::act::Gelu;
use super::linear::Linear;
use super::norm::LayerNorm;
use super::param::Param;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
    pub dim: usize,
    cache: Option<AttnCache>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    qkv_out: Array3<f32>,       // [n, t, 3d]
    probs: Vec<Array2<f32>>,    // softmax(S) per (n, head)
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize, seed: u64) -> Self {
        assert!(dim % heads == 0, "dim must divide into heads");
        MultiHeadAttention {
            qkv: Linear::new(&format!("{name}.qkv"), dim, 3 * dim, seed),
            proj: Linear::new(&format!("{name}.proj"), dim, dim, seed),
            heads,
            dim,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array3<f32>) -> Array3<f32> {
        let (n, t, d) = x.dim();
        debug_assert_eq!(d, self.dim);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let qkv_out = self.qkv.forward_tokens(x); // [n, t, 3d]
        let mut ctx = Array3::<f32>::zeros((n, t, d));
        let mut probs = Vec::with_capacity(n * self.heads);
        for ni in 0..n {
            for h in 0..self.heads {
                let q = qkv_out.slice(s![ni, .., h * dh..(h + 1) * dh]).to_owned();
                let k = qkv_out.slice(s![ni, .., d + h * dh..d + (h + 1) * dh]).to_owned();
                let v = qkv_out
                    .slice(s![ni, .., 2 * d + h * dh..2 * d + (h + 1) * dh])
                    .to_owned();
                let mut scores = q.dot(&k.t());
                scores.mapv_inplace(|e| e * scale);
                let p = softmax_rows(&scores);
                let o = p.dot(&v); // [t, dh]
                ctx.slice_mut(s![ni, .., h * dh..(h + 1) * dh]).assign(&o);
                probs.push(p);
            }
        }
        self.cache = Some(AttnCache { qkv_out, probs });
        self.proj.forward_tokens(&ctx)
    }

    pub fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let AttnCache { qkv_out, probs } = self.cache.take().expect("forward before backward");
        let (n, t, d) = dy.dim();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();

        let dctx = self.proj.backward_tokens(dy); // [n, t, d]
        let mut dqkv = Array3::<f32>::zeros((n, t, 3 * d));
        for ni in 0..n {
            for h in 0..self.heads {
                let p = &probs[ni * self.heads + h];
                let q = qkv_out.slice(s![ni, .., h * dh..(h + 1) * dh]).to_owned();
                let k = qkv_out.slice(s![ni, .., d + h * dh..d + (h + 1) * dh]).to_owned();
                let v = qkv_out
                    .slice(s![ni, .., 2 * d + h * dh..2 * d + (h + 1) * dh])
                    .to_owned();
                let do_h = dctx.slice(s![ni, .., h * dh..(h + 1) * dh]).to_owned();

                let dp = do_h.dot(&v.t()); // [t, t]
                let dv = p.t().dot(&do_h); // [t, dh]
                // softmax backward per row: dS = P .* (dP - rowsum(dP .* P))
                let mut ds = Array2::<f32>::zeros((t, t));
                for r in 0..t {
                    let mut dot = 0.0f32;
                    for c in 0..t {
                        dot += dp[[r, c]] * p[[r, c]];
                    }
                    for c in 0..t {
                        ds[[r, c]] = p[[r, c]] * (dp[[r, c]] - dot);
                    }
                }
                let mut dq = ds.dot(&k);
                dq.mapv_inplace(|e| e * scale);
                let mut dk = ds.t().dot(&q);
                dk.mapv_inplace(|e| e * scale);

                dqkv.slice_mut(s![ni, .., h * dh..(h + 1) * dh]).assign(&dq);
                dqkv.slice_mut(s![ni, .., d + h * dh..d + (h + 1) * dh]).assign(&dk);
                dqkv
                    .slice_mut(s![ni, .., 2 * d + h * dh..2 * d + (h + 1) * dh])
                    .assign(&dv);
            }
        }
        self.qkv.backward_tokens(&dqkv)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.qkv.params_mut();
        p.extend(self.proj.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.qkv.params();
        p.extend(self.proj.params());
        p
    }
}

fn softmax_rows(scores: &Array2<f32>) -> Array2<f32> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Pre-norm transformer encoder block: x + attn(ln(x)), then x + mlp(ln(x)).
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub gelu: Gelu,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(name: &str, dim: usize, heads: usize, mlp_ratio: f32, seed: u64) -> Self {
        let hidden = (dim as f32 * mlp_ratio).round() as usize;
        TransformerBlock {
            ln1: LayerNorm::new(&format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads, seed),
            ln2: LayerNorm::new(&format!("{name}.ln2"), dim),
            fc1: Linear::new(&format!("{name}.mlp.fc1"), dim, hidden, seed),
            gelu: Gelu::new(),
            fc2: Linear::new(&format!("{name}.mlp.fc2"), hidden, dim, seed),
        }
    }

    pub fn forward(&mut self, x: &Array3<f32>) -> Array3<f32> {
        let a = self.ln1.forward(x);
        let x1 = x + &self.attn.forward(&a);
        let c = self.ln2.forward(&x1);
        let h = self.fc1.forward_tokens(&c);
        let g = self
            .gelu
            .forward(&h.into_dyn())
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let m = self.fc2.forward_tokens(&g);
        &x1 + &m
    }

    pub fn backward(&mut self, dy: &Array3<f32>) -> Array3<f32> {
        let dh = self.fc2.backward_tokens(dy);
        let dg = self
            .gelu
            .backward(&dh.into_dyn())
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap();
        let dc = self.fc1.backward_tokens(&dg);
        let dx1 = dy + &self.ln2.backward(&dc);
        let da = self.attn.backward(&dx1);
        &dx1 + &self.ln1.backward(&da)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.ln1.params_mut();
        p.extend(self.attn.params_mut());
        p.extend(self.ln2.params_mut());
        p.extend(self.fc1.params_mut());
        p.extend(self.fc2.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.ln1.params();
        p.extend(self.attn.params());
        p.extend(self.ln2.params());
        p.extend(self.fc1.params());
        p.extend(self.fc2.params());
        p
    }
}
