mod config;
mod scoring;
mod search;

pub use config::{
    uniform_weights, RetrievalConfig, DEFAULT_LAYERS, DEFAULT_OUTPUT_RESOLUTION, DEFAULT_POOLING_FRACTION,
    DEFAULT_RHO, DEFAULT_TOP_K,
};
pub use scoring::{score_image, score_image_bruteforce, score_with, score_with_neighbors, ScoringPath};
pub use search::{
    candidate_set, distance_to_set, dot, global_topk, patch_score, CandidateSet, Neighbor, PatchMatch,
};
