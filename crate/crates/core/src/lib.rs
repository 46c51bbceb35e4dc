//! Bayes-optimal prediction over model trees.
//!
//! A model tree routes an explanatory vector through a perfect binary tree of
//! depth `d_max` by midpoint bisection on the feature assigned to each inner
//! node, and explains the response with a conjugate model at the leaf it
//! reaches. The tree shape and the leaf parameters are integrated out exactly
//! for a fixed feature assignment ([`meta_tree`]); the feature assignment
//! itself is sampled with Metropolis–Hastings ([`mcmc`], [`remc`]) and the
//! per-sample predictives are averaged into the Bayes decision
//! ([`predictor`]). [`exact_oracle`] enumerates every assignment on small
//! instances to check all of the above.

pub mod error;
pub mod exact_oracle;
pub mod harness;
pub mod leaf_models;
pub mod math;
pub mod mcmc;
pub mod meta_tree;
pub mod predictor;
pub mod remc;
pub mod subspace_router;
pub mod tree_topology;

pub use error::{Error, Result};
pub use leaf_models::{LeafModel, LeafModelSpec, Loss, PredictiveDistribution};
pub use meta_tree::{MetaTreeState, Observations};
pub use subspace_router::{FeatureAssignment, FeatureSpaceConfig};
pub use tree_topology::{FullSubtree, NodeId, TreeShapeConfig};
