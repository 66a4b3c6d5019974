//! Clustering: complete-linkage HAC with threshold or K cuts, plus the
//! k-means family used as baselines (k-means++, X-means, G-means).

mod gmeans;
mod hac;
mod kmeans;
mod threshold;
mod xmeans;

pub use gmeans::{anderson_darling, anderson_darling_p_value, gmeans, DEFAULT_SIGNIFICANCE};
pub use hac::{cut_k, cut_threshold, hac_complete, Dendrogram, Merge};
pub use kmeans::{kmeans, kmeans_detailed, KMeansResult, MAX_LLOYD_ITERATIONS};
pub use threshold::select_threshold_on_validation;
pub use xmeans::{bic_spherical, xmeans};

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Flat clustering: `labels[i]` in `[0, num_clusters)`, every cluster used.
///
/// Labels are canonical: clusters are numbered in order of their first
/// sample, so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Canonicalizes arbitrary labels.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(raw: &[L]) -> Self {
        let mut map: HashMap<L, usize> = HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = map.len();
                *map.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            labels,
            num_clusters: map.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            num_clusters: n,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices per cluster.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// `true` when every cluster of `self` lies inside one cluster of `coarser`.
    pub fn refines(&self, coarser: &ClusterAssignment) -> Result<bool> {
        if self.len() != coarser.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: coarser.len(),
            });
        }
        let mut parent = vec![usize::MAX; self.num_clusters];
        for (fine, coarse) in self.labels.iter().zip(&coarser.labels) {
            if parent[*fine] == usize::MAX {
                parent[*fine] = *coarse;
            } else if parent[*fine] != *coarse {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
