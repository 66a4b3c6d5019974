//! Validation-based threshold selection for losses that do not learn a
//! usable clustering threshold.

use super::hac::hac_complete;
use crate::error::{Error, Result};
use crate::geometry::Matrix;

/// Returns a squared-distance threshold whose complete-linkage cut of
/// `points` yields `true_k` clusters: the midpoint between the last merge
/// that must apply and the first that must not.
///
/// When the two bracketing linkages tie, no threshold separates them and the
/// cut will merge past `true_k`.
pub fn select_threshold_on_validation(points: &Matrix, true_k: usize) -> Result<f64> {
    let n = points.rows();
    if true_k == 0 || true_k > n {
        return Err(Error::invalid(format!("true K = {true_k} outside [1, {n}]")));
    }
    let dendrogram = hac_complete(points)?;
    let links: Vec<f64> = dendrogram.linkages().collect();
    let applied = n - true_k;
    Ok(match (applied.checked_sub(1).map(|i| links[i]), links.get(applied)) {
        (None, None) => 0.0,
        (None, Some(&first)) => first / 2.0,
        (Some(last), None) => last * 1.5 + 1e-12,
        (Some(last), Some(&next)) => 0.5 * (last + next),
    })
}
