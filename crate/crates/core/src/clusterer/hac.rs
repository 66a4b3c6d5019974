//! Complete-linkage agglomerative clustering on squared Euclidean distances.
//!
//! The linkage of two clusters is the largest squared distance over their
//! cross pairs; after a merge it is updated with the Lance-Williams rule
//! `D(U+V, W) = max(D(U, W), D(V, W))`. Each active cluster keeps a pointer
//! to its nearest neighbour so a step only rescans rows whose pointer was
//! invalidated by the merge.
//!
//! Ties are broken by the smallest `(min id, max id)` pair, which makes the
//! dendrogram unique.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::geometry::{sq_dist_unchecked, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Smaller of the two merged cluster ids.
    pub a: usize,
    pub b: usize,
    /// Complete linkage (a squared distance) at which `a` and `b` merged.
    pub linkage: f64,
    pub new_id: usize,
}

/// Merge history. Leaves are `0..N`, the cluster created by merge `s` is
/// `N + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub leaf_count: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn linkages(&self) -> impl Iterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.linkage)
    }

    /// One merge per line: `idA idB linkage newId`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.merges {
            // `{:?}` on f64 is the shortest representation that round-trips
            let _ = writeln!(s, "{} {} {:?} {}", m.a, m.b, m.linkage, m.new_id);
        }
        s
    }

    pub fn from_text(text: &str, leaf_count: usize) -> Result<Self> {
        let mut merges = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let line_start = offset;
            offset += line.len() as u64 + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |what: &str| Error::Parse {
                offset: line_start,
                message: format!("bad dendrogram line {line:?}: {what}"),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(parse_err("expected 4 fields"));
            }
            let a = fields[0].parse().map_err(|_| parse_err("idA"))?;
            let b = fields[1].parse().map_err(|_| parse_err("idB"))?;
            let linkage = fields[2].parse().map_err(|_| parse_err("linkage"))?;
            let new_id = fields[3].parse().map_err(|_| parse_err("newId"))?;
            merges.push(Merge { a, b, linkage, new_id });
        }
        if leaf_count > 0 && merges.len() >= leaf_count {
            return Err(Error::Parse {
                offset: 0,
                message: format!("{} merges for {leaf_count} leaves", merges.len()),
            });
        }
        Ok(Self { leaf_count, merges })
    }

    /// Applies the first `count` merges.
    fn cut_after(&self, count: usize) -> ClusterAssignment {
        let n = self.leaf_count;
        // parent pointers over all 2N-1 cluster ids
        let mut parent: Vec<usize> = (0..n + self.merges.len()).collect();
        for m in &self.merges[..count] {
            parent[m.a] = m.new_id;
            parent[m.b] = m.new_id;
        }
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                let up = parent[parent[x]];
                parent[x] = up;
                x = up;
            }
            x
        }
        let roots: Vec<usize> = (0..n).map(|i| root(&mut parent, i)).collect();
        ClusterAssignment::from_labels(&roots)
    }
}

/// Condensed upper-triangular distance storage.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    fn from_points(points: &Matrix) -> Self {
        let n = points.rows();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (i + 1..n)
                    .map(|j| sq_dist_unchecked(points.row(i), points.row(j)))
                    .collect()
            })
            .collect();
        Self { n, data: rows.concat() }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = self.index(i, j);
        self.data[idx] = v;
    }
}

type Key = (f64, usize, usize);

#[inline]
fn less(a: Key, b: Key) -> bool {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    }
}

pub fn hac_complete(points: &Matrix) -> Result<Dendrogram> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::invalid("cannot cluster zero points"));
    }
    let mut dist = Condensed::from_points(points);
    // slot -> current cluster id
    let mut ids: Vec<usize> = (0..n).collect();
    let mut active = vec![true; n];
    let mut nn: Vec<usize> = vec![usize::MAX; n];
    let mut nn_key: Vec<Key> = vec![(f64::INFINITY, usize::MAX, usize::MAX); n];

    let key = |dist: &Condensed, ids: &[usize], i: usize, j: usize| -> Key {
        let (lo, hi) = if ids[i] < ids[j] {
            (ids[i], ids[j])
        } else {
            (ids[j], ids[i])
        };
        (dist.get(i, j), lo, hi)
    };
    let rescan = |dist: &Condensed, ids: &[usize], active: &[bool], i: usize| -> (usize, Key) {
        let mut best = usize::MAX;
        let mut best_key: Key = (f64::INFINITY, usize::MAX, usize::MAX);
        for j in 0..n {
            if j == i || !active[j] {
                continue;
            }
            let k = key(dist, ids, i, j);
            if best == usize::MAX || less(k, best_key) {
                best = j;
                best_key = k;
            }
        }
        (best, best_key)
    };

    for i in 0..n {
        let (j, k) = rescan(&dist, &ids, &active, i);
        nn[i] = j;
        nn_key[i] = k;
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best = usize::MAX;
        for i in 0..n {
            if active[i] && (best == usize::MAX || less(nn_key[i], nn_key[best])) {
                best = i;
            }
        }
        let (keep, gone) = (best, nn[best]);
        let linkage = nn_key[best].0;
        let new_id = n + step;
        merges.push(Merge {
            a: ids[keep].min(ids[gone]),
            b: ids[keep].max(ids[gone]),
            linkage,
            new_id,
        });

        active[gone] = false;
        ids[keep] = new_id;
        for x in 0..n {
            if active[x] && x != keep {
                let merged = dist.get(keep, x).max(dist.get(gone, x));
                dist.set(keep, x, merged);
            }
        }

        let (j, k) = rescan(&dist, &ids, &active, keep);
        nn[keep] = j;
        nn_key[keep] = k;
        for x in 0..n {
            if !active[x] || x == keep {
                continue;
            }
            if nn[x] == keep || nn[x] == gone {
                let (j, k) = rescan(&dist, &ids, &active, x);
                nn[x] = j;
                nn_key[x] = k;
            } else {
                let k = key(&dist, &ids, x, keep);
                if less(k, nn_key[x]) {
                    nn[x] = keep;
                    nn_key[x] = k;
                }
            }
        }
    }
    Ok(Dendrogram { leaf_count: n, merges })
}

/// Applies every merge whose linkage is at most `tau`. Within each returned
/// cluster all pairwise squared distances are then at most `tau`.
pub fn cut_threshold(d: &Dendrogram, tau: f64) -> ClusterAssignment {
    // complete-linkage merge heights are non-decreasing, so this is a prefix
    let count = d.merges.iter().take_while(|m| m.linkage <= tau).count();
    d.cut_after(count)
}

/// Applies the first `N - k` merges.
pub fn cut_k(d: &Dendrogram, k: usize) -> Result<ClusterAssignment> {
    let n = d.leaf_count;
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside [1, {n}]")));
    }
    if n - k > d.merges.len() {
        return Err(Error::invalid(format!(
            "dendrogram has only {} merges, cannot reach {k} clusters",
            d.merges.len()
        )));
    }
    Ok(d.cut_after(n - k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Re-scans every active cluster pair with the raw point distances at each step.
    fn brute_force(points: &Matrix) -> Dendrogram {
        let n = points.rows();
        let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
        let mut merges = Vec::new();
        for step in 0..n - 1 {
            let mut best: Option<(Key, usize, usize)> = None;
            for u in 0..clusters.len() {
                for v in u + 1..clusters.len() {
                    let mut link: f64 = 0.0;
                    for &p in &clusters[u].1 {
                        for &q in &clusters[v].1 {
                            link = link.max(sq_dist_unchecked(points.row(p), points.row(q)));
                        }
                    }
                    let (a, b) = (clusters[u].0, clusters[v].0);
                    let k = (link, a.min(b), a.max(b));
                    if best.is_none_or(|(bk, _, _)| less(k, bk)) {
                        best = Some((k, u, v));
                    }
                }
            }
            let ((link, a, b), u, v) = best.unwrap();
            let mut members = clusters[u].1.clone();
            members.extend(&clusters[v].1);
            clusters.remove(v);
            clusters.remove(u);
            clusters.push((n + step, members));
            merges.push(Merge {
                a,
                b,
                linkage: link,
                new_id: n + step,
            });
        }
        Dendrogram { leaf_count: n, merges }
    }

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn single_leaf() {
        let d = hac_complete(&line(&[3.0])).unwrap();
        assert!(d.merges.is_empty());
        assert_eq!(cut_threshold(&d, 1.0).num_clusters(), 1);
        assert!(hac_complete(&Matrix::zeros(0, 2)).is_err());
    }

    #[test]
    fn four_point_hand_trace() {
        // dyadic coordinates keep the two tight pairs exactly tied
        let d = hac_complete(&line(&[0.0, 0.5, 10.0, 10.5])).unwrap();
        assert_eq!(d.merges.len(), 3);
        assert_eq!((d.merges[0].a, d.merges[0].b, d.merges[0].new_id), (0, 1, 4));
        assert_eq!((d.merges[1].a, d.merges[1].b, d.merges[1].new_id), (2, 3, 5));
        assert_eq!(d.merges[0].linkage, 0.25);
        assert_eq!(d.merges[1].linkage, 0.25);
        assert_eq!((d.merges[2].a, d.merges[2].b), (4, 5));
        assert_eq!(d.merges[2].linkage, 110.25);

        let two = ClusterAssignment::from_labels(&[0, 0, 1, 1]);
        assert_eq!(cut_threshold(&d, 1.0), two);
        assert_eq!(cut_k(&d, 2).unwrap(), two);
        assert_eq!(cut_threshold(&d, 0.001), ClusterAssignment::singletons(4));
        assert_eq!(cut_threshold(&d, 200.0).num_clusters(), 1);
        assert_eq!(cut_k(&d, 4).unwrap(), ClusterAssignment::singletons(4));
        assert_eq!(cut_k(&d, 1).unwrap().num_clusters(), 1);
        assert!(cut_k(&d, 0).is_err());
        assert!(cut_k(&d, 5).is_err());
    }

    #[test]
    fn matches_brute_force_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let n = rng.random_range(2..24);
            // integer grid coordinates force plenty of exact ties
            let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(0..4) as f64).collect();
            let pts = Matrix::from_vec(n, 2, data).unwrap();
            assert_eq!(hac_complete(&pts).unwrap(), brute_force(&pts), "trial {trial}");
        }
    }

    #[test]
    fn text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = hac_complete(&Matrix::from_vec(10, 3, data).unwrap()).unwrap();
        let text = d.to_text();
        assert_eq!(text.lines().count(), 9);
        assert_eq!(Dendrogram::from_text(&text, 10).unwrap(), d);
        assert!(Dendrogram::from_text("0 1 x 2\n", 3).is_err());
    }

    #[test]
    fn linkage_non_decreasing_and_cut_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(2..40);
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let pts = Matrix::from_vec(n, 3, data).unwrap();
            let d = hac_complete(&pts).unwrap();
            assert!(d.merges.windows(2).all(|w| w[0].linkage <= w[1].linkage));
            let mut prev: Option<ClusterAssignment> = None;
            for t in 0..10 {
                let tau = 0.3 * t as f64;
                let cut = cut_threshold(&d, tau);
                for members in cut.clusters() {
                    for &p in &members {
                        for &q in &members {
                            assert!(sq_dist_unchecked(pts.row(p), pts.row(q)) <= tau);
                        }
                    }
                }
                if let Some(p) = &prev {
                    assert!(p.refines(&cut).unwrap());
                }
                prev = Some(cut);
            }
        }
    }
}
