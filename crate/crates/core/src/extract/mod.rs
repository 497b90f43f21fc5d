//! Skeleton-to-graph extraction and rule-based cleaning.

pub mod clean;
pub mod thin;
pub mod vectorize;

pub use clean::{collapse_short_junction_edges, prune_dead_ends, simplify_degree2, CleaningConfig};
pub use thin::{guo_hall, thin, zhang_suen, ThinningAlgorithm};
pub use vectorize::{vectorize, SkeletonMask};
