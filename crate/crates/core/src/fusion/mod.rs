//! Subject-level fusion of structural and functional node embeddings:
//! graph pooling, feature concatenation or bidirectional cross-attention,
//! and a two-layer MLP classifier.

mod cross;
mod mlp;
mod model;
mod pool;

pub use cross::{cross_attention_block, dual_cross_attention_fuse, CrossAttention, CrossAttentionCache};
pub use mlp::{mlp_classify, Mlp, MlpCache};
pub use model::{FusionConfig, FusionParams, FusionVariant, SubjectCache, SubjectGraphs};
pub use pool::{concat_fuse, global_average_pool, global_average_pool_backward, GraphEmbedding};
