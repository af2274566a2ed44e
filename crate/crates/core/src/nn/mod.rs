//! Transformer backbone with explicit forward and backward passes.

mod attention;
mod block;
mod layers;
mod model;
mod params;
mod scalar;

pub use attention::{AttentionCache, SelfAttention};
pub use block::{Block, BlockCache, BlockOutput, NormPlacement, Pass};
pub use layers::{
    dropout_mask, gelu, gelu_backward, normalize_rows, softmax_cross_entropy, softmax_rows,
    trunc_normal, LayerNorm, Linear, NormCache, NORM_EPS,
};
pub use model::{
    gather_visible, mean_pool, mean_pool_backward, scatter_rows, stack_segments, visible_rows,
    Classifier, ClassifierHead, ClassifierPass, Decoder, Encoder, EncoderOutput, LayerTap,
    ModelConfig, Skeleton2Vec, StudentPass, TokenBatch,
};
pub use params::{param_hash, Parameters, Tensor, TensorMut};
pub(crate) use params::{check_congruent, layout};
pub use scalar::Scalar;
