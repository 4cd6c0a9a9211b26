//! Learned encoders: a 3D Vision Transformer over ROI patches and a
//! multi-head graph attention layer over brain graphs.

mod checkpoint;
mod gat;
mod vit;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_INDEX};
pub use gat::{gat_layer, GatCache, GatConfig, GatParams, NodeEmbeddings};
pub use vit::{
    stack_patches, vit_classify, vit_embed_patches, vit_final_representation, vit_roi_embeddings, BlockCache,
    VitBlock, VitConfig, VitParams, VitPass,
};
