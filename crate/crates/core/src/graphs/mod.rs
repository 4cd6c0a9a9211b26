//! Subject-specific brain graphs: cosine-similarity KNN graphs over ROI
//! embeddings and Fisher-z connectivity KNN graphs over ROI time series.

mod graph;
mod knn;
mod similarity;

pub use graph::{BrainGraph, Edge, Modality};
pub use knn::{build_functional_graph, build_structural_graph, knn_graph, DEFAULT_K};
pub use similarity::{cosine_similarity_matrix, fisher_z, pearson_fcn, SimilarityKind, SimilarityMatrix, FISHER_CLAMP};
