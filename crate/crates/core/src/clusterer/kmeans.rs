//! k-means++ seeding followed by Lloyd iterations.

use rand::Rng;

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist_unchecked, Matrix};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Index of the center each point is assigned to.
    pub labels: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    /// Inertia after every Lloyd update, in order.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn assignment(&self) -> ClusterAssignment {
        ClusterAssignment::from_labels(&self.labels)
    }
}

pub fn kmeans(points: &Matrix, k: usize, rng: &mut impl Rng) -> Result<ClusterAssignment> {
    Ok(kmeans_detailed(points, k, rng)?.assignment())
}

pub fn kmeans_detailed(points: &Matrix, k: usize, rng: &mut impl Rng) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside [1, {n}]")));
    }
    let centers = plus_plus(points, k, rng);
    Ok(lloyd(points, centers, MAX_LLOYD_ITERATIONS))
}

/// k-means++ seeding: each next center is drawn with probability
/// proportional to the squared distance to the nearest chosen center.
pub(crate) fn plus_plus(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist_unchecked(points.row(i), points.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if r < w {
                    break;
                }
                r -= w;
            }
            pick.expect("positive total weight")
        } else {
            // every remaining point duplicates a center
            let free: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        taken[next] = true;
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(sq_dist_unchecked(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn nearest_center(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist_unchecked(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd iterations from the given centers until the assignment stops
/// changing or `max_iter` is reached. An empty cluster takes over the point
/// farthest from its current center.
pub(crate) fn lloyd(points: &Matrix, mut centers: Matrix, max_iter: usize) -> KMeansResult {
    let n = points.rows();
    let k = centers.rows();
    let d = points.cols();
    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut dists = vec![0.0; n];

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let (c, dist) = nearest_center(points.row(i), &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = dist;
        }
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| sizes[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                sizes[labels[i]] -= 1;
                labels[i] = c;
                sizes[c] = 1;
                dists[i] = 0.0;
                changed = true;
            }
        }

        let mut sums = Matrix::zeros(k, d);
        for i in 0..n {
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / sizes[c] as f64;
            }
        }
        history.push(inertia(points, &labels, &centers));
        if !changed {
            break;
        }
    }
    KMeansResult {
        inertia: *history.last().unwrap_or(&0.0),
        labels,
        centers,
        inertia_history: history,
        iterations,
    }
}

pub(crate) fn inertia(points: &Matrix, labels: &[usize], centers: &Matrix) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist_unchecked(points.row(i), centers.row(c)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_equals_n_is_identity() {
        let pts = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.5, 7.0, 9.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let res = kmeans_detailed(&pts, 5, &mut rng).unwrap();
        assert_eq!(res.assignment().num_clusters(), 5);
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn separated_blobs_for_every_seed() {
        let mut data = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for i in 0..40 {
            let center = if i < 20 { 0.0 } else { 100.0 };
            data.push(center + rng.random_range(-1.0..1.0));
        }
        let pts = Matrix::from_vec(40, 1, data).unwrap();
        let truth = ClusterAssignment::from_labels(&(0..40).map(|i| i < 20).collect::<Vec<_>>());
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(kmeans(&pts, 2, &mut rng).unwrap(), truth);
        }
    }

    #[test]
    fn inertia_never_increases() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pts = Matrix::from_vec(100, 3, data).unwrap();
            let res = kmeans_detailed(&pts, 7, &mut rng).unwrap();
            assert!(res.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            assert_eq!(res.assignment().num_clusters(), 7);
        }
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let pts = Matrix::from_vec(6, 1, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = kmeans_detailed(&pts, 4, &mut rng).unwrap();
        assert_eq!(res.assignment().num_clusters(), 4);
    }

    #[test]
    fn deterministic_and_validated() {
        let pts = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let a = kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = kmeans(&pts, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(kmeans(&pts, 0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
        assert!(kmeans(&pts, 5, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }
}
