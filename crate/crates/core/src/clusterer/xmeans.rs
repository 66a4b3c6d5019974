//! X-means: grow the number of clusters by 2-means splits that improve the
//! Bayesian Information Criterion of an identical-spherical-variance
//! Gaussian model.

use rand::Rng;

use super::kmeans::{kmeans_detailed, lloyd, MAX_LLOYD_ITERATIONS};
use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist_unchecked, Matrix};

/// BIC of a hard clustering under a spherical Gaussian mixture sharing one
/// variance, with `K (D + 1)` free parameters. Higher is better.
///
/// Returns `-inf` when there are no more points than clusters (the variance
/// estimate is undefined).
pub fn bic_spherical(points: &Matrix, labels: &[usize], centers: &Matrix) -> f64 {
    let r = points.rows() as f64;
    let m = points.cols() as f64;
    let k = centers.rows();
    if points.rows() <= k {
        return f64::NEG_INFINITY;
    }
    let mut sizes = vec![0usize; k];
    let mut sse = 0.0;
    for (i, &c) in labels.iter().enumerate() {
        sizes[c] += 1;
        sse += sq_dist_unchecked(points.row(i), centers.row(c));
    }
    let variance = (sse / (r - k as f64)).max(f64::MIN_POSITIVE);
    let kf = k as f64;
    let log_likelihood: f64 = sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let rn = s as f64;
            rn * rn.ln()
                - rn * r.ln()
                - 0.5 * rn * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * rn * m * variance.ln()
                - 0.5 * (rn - kf)
        })
        .sum();
    let params = kf * (m + 1.0);
    log_likelihood - 0.5 * params * r.ln()
}

fn mean_row(points: &Matrix) -> Matrix {
    let mut mean = Matrix::zeros(1, points.cols());
    for row in points.iter_rows() {
        for (s, v) in mean.row_mut(0).iter_mut().zip(row) {
            *s += v;
        }
    }
    let n = points.rows() as f64;
    for s in mean.row_mut(0) {
        *s /= n;
    }
    mean
}

pub fn xmeans(points: &Matrix, k_max: usize, rng: &mut impl Rng) -> Result<ClusterAssignment> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::invalid("cannot cluster zero points"));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let mut centers = mean_row(points);
    loop {
        let fit = lloyd(points, centers, MAX_LLOYD_ITERATIONS);
        let k = fit.centers.rows();
        let mut members = vec![Vec::new(); k];
        for (i, &c) in fit.labels.iter().enumerate() {
            members[c].push(i);
        }
        let mut next: Vec<Vec<f64>> = Vec::new();
        let mut total = k;
        for (c, idx) in members.iter().enumerate() {
            let parent = fit.centers.row(c).to_vec();
            if total + 1 > k_max || idx.len() < 2 {
                next.push(parent);
                continue;
            }
            let sub = points.select_rows(idx);
            let parent_bic = bic_spherical(&sub, &vec![0; idx.len()], &Matrix::from_rows(&[&parent])?);
            let child = kmeans_detailed(&sub, 2, rng)?;
            let child_bic = bic_spherical(&sub, &child.labels, &child.centers);
            if child_bic > parent_bic {
                next.push(child.centers.row(0).to_vec());
                next.push(child.centers.row(1).to_vec());
                total += 1;
            } else {
                next.push(parent);
            }
        }
        if next.len() == k {
            return Ok(fit.assignment());
        }
        centers = Matrix::from_rows(&next)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize, sd: f64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..per {
                rows.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    /// BIC written out term by term for the one- and two-cluster models.
    fn oracle_bic(points: &Matrix, labels: &[usize], k: usize) -> f64 {
        let r = points.rows() as f64;
        let m = points.cols() as f64;
        let mut sums = vec![vec![0.0; points.cols()]; k];
        let mut counts = vec![0.0; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1.0;
            for j in 0..points.cols() {
                sums[l][j] += points.get(i, j);
            }
        }
        let mut sse = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..points.cols() {
                let mu = sums[l][j] / counts[l];
                sse += (points.get(i, j) - mu).powi(2);
            }
        }
        let var = sse / (r - k as f64);
        let mut ll = 0.0;
        for &rn in &counts {
            ll += -rn / 2.0 * (2.0 * std::f64::consts::PI).ln() - rn * m / 2.0 * var.ln() - (rn - k as f64) / 2.0
                + rn * rn.ln()
                - rn * r.ln();
        }
        ll - (k as f64 * (m + 1.0)) / 2.0 * r.ln()
    }

    #[test]
    fn bic_matches_oracle() {
        let pts = blobs(1, &[[0.0, 0.0], [5.0, 5.0]], 30, 0.5);
        let labels: Vec<usize> = (0..60).map(|i| i / 30).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = kmeans_detailed(&pts, 2, &mut rng).unwrap();
        let ours = bic_spherical(&pts, &fit.labels, &fit.centers);
        // k-means on two far blobs recovers the generating split (up to label swap)
        let relabeled: Vec<usize> = if fit.labels[0] == 0 {
            labels.clone()
        } else {
            labels.iter().map(|l| 1 - l).collect()
        };
        assert_eq!(fit.labels, relabeled);
        assert!((ours - oracle_bic(&pts, &labels, 2)).abs() < 1e-9);
        let one = mean_row(&pts);
        let ours1 = bic_spherical(&pts, &vec![0; 60], &one);
        assert!((ours1 - oracle_bic(&pts, &vec![0; 60], 1)).abs() < 1e-9);
        assert!(ours > ours1);
    }

    #[test]
    fn single_blob_stays_whole() {
        for seed in 0..10 {
            let pts = blobs(seed, &[[1.0, -1.0]], 200, 0.3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(xmeans(&pts, 10, &mut rng).unwrap().num_clusters(), 1);
        }
    }

    #[test]
    fn two_far_blobs_split() {
        for seed in 0..10 {
            let pts = blobs(seed, &[[0.0, 0.0], [10.0, 0.0]], 100, 0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = xmeans(&pts, 10, &mut rng).unwrap();
            assert_eq!(a.num_clusters(), 2);
            let truth = ClusterAssignment::from_labels(&(0..200).map(|i| i / 100).collect::<Vec<_>>());
            assert_eq!(a, truth);
        }
    }

    #[test]
    fn cap_binds() {
        let pts = blobs(3, &[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 50, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(xmeans(&pts, 1, &mut rng).unwrap().num_clusters(), 1);
        assert!(xmeans(&pts, 2, &mut rng).unwrap().num_clusters() <= 2);
    }
}
