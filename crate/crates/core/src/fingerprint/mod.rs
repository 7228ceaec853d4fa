//! Subject identification from connectome similarity, its permutation test,
//! and the experiment drivers built on top.

mod identify;
mod permutation;
mod pipeline;

pub use identify::{identify, similarity_matrix, IdentificationResult, SimilarityMatrix};
pub use permutation::{permutation_test, PermutationReport};
pub use pipeline::{
    ablation, build_connectomes, grid_search, run_on_connectomes, run_pipeline, session_group_average, AblationReport,
    AblationRow, AeLayout, Band, GridCell, Method, PipelineConfig, Preprocess, RefineTarget, MIN_ABLATION_ROIS,
};
