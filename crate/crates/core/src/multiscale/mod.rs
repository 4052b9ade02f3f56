//! Cluster-level (meso) and network-level (macro) scoring and adaptive fusion.

mod fusion;
mod louvain;

pub use fusion::{
    attention_pool, fuse, fuse_backward, population_std, FusionCache, FusionMode, FusionParams, ScoreBundle, POOL_DIM,
};
pub use louvain::{louvain, louvain_adjacency, modularity, Clustering};
