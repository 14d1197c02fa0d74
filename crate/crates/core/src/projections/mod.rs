//! Projections onto the doubly-stochastic set and onto permutations.

mod hungarian;
mod sinkhorn;

pub use hungarian::{hungarian, Permutation};
pub use sinkhorn::{
    is_doubly_stochastic, max_marginal_deviation, sinkhorn, sinkhorn_log_with, SinkhornConfig,
    SinkhornResult,
};
