//! Ball cluster learning.
//!
//! Trains a small embedding network so that samples of one identity fall
//! inside a ball of a shared, learned squared radius `b`, then clusters
//! unseen data with complete-linkage agglomerative clustering stopped at
//! `tau = 4b`. The number of clusters and the assignment both fall out of
//! the cut.
//!
//! Modules:
//! - [`geometry`]: embedding spaces, squared distances, centroids.
//! - [`losses`]: the ball loss and baseline metric-learning losses, with
//!   analytic gradients.
//! - [`trainer`]: MLP embedding network, SGD with momentum, training and
//!   pair-constrained fine-tuning.
//! - [`clusterer`]: complete-linkage HAC, k-means, X-means and G-means.
//! - [`metrics`]: NMI, weighted clustering purity, threshold sweeps.
//! - [`data`]: track datasets, synthetic generation, the `BCLT` file format
//!   and pair mining.

mod binio;
pub mod clusterer;
pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{EmbeddingSpace, Matrix, SpaceKind};
