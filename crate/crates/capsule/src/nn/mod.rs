//! Minimal CPU neural-network engine: NCHW conv stacks, token transformers,
//! Adam, and cross-entropy. Everything is f32, single-threaded, and
//! deterministic given the seeds, which is what the training and
//! explainability contracts of this crate rely on.

pub mod act;
pub mod adam;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod param;
pub mod pool;

pub use act::{Gelu, Relu};
pub use adam::Adam;
pub use attention::{MultiHeadAttention, TransformerBlock};
pub use conv::Conv2d;
pub use linear::Linear;
pub use loss::{argmax_rows, cross_entropy, softmax};
pub use norm::{BatchNorm2d, LayerNorm};
pub use param::{seeded_rng, stable_hash, Param};
pub use pool::{GlobalAvgPool, MaxPool2d};
