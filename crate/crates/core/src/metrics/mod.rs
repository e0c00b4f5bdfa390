//! Sparsity, connectivity, stability and cross-model similarity of
//! attribution graphs and circuits. Everything here is a pure function.

mod similarity;
mod sparsity;
mod structure;

pub use similarity::{
    cross_model_overlap, cross_role_overlap, jaccard, laplacian_eigenvalues, module_edge_mass,
    module_mass, similarity_report, spectral_distance, spectral_graph, spectrum_rmse,
    stability_series, top_k_nodes, ModuleEdge, RoleOverlap, SimilarityReport, WeightedEdges,
    DEFAULT_EIGENVALUES, DEFAULT_SPECTRAL_EDGES, DEFAULT_TOP_EDGES, DEFAULT_TOP_NODES,
};
pub use sparsity::{
    coverage_k, gini, node_mass, sparsity_report, topk_mass, SparsityReport, COVERAGE_LEVELS,
    TOPK_LEVELS,
};
pub use structure::{induced_digraph, structural_report, Digraph, StructuralReport};
