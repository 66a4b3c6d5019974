//! Embedding spaces, squared Euclidean distances, projection and centroids.
//!
//! Everything downstream works on squared distances. Square roots are only
//! taken when a radius (rather than a squared radius) is reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a hypersphere member sum is treated as zero.
pub const DEGENERATE_SUM_NORM: f64 = 1e-8;
/// Norm below which a raw vector cannot be projected onto the sphere.
pub const DEGENERATE_INPUT_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    /// Plain `R^D`.
    Euclidean,
    /// The unit sphere `S^{D-1}`; embeddings are l2-normalized.
    Hypersphere,
}

impl SpaceKind {
    pub fn code(self) -> u8 {
        match self {
            SpaceKind::Euclidean => 0,
            SpaceKind::Hypersphere => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SpaceKind::Euclidean),
            1 => Some(SpaceKind::Hypersphere),
            _ => None,
        }
    }
}

impl std::str::FromStr for SpaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(SpaceKind::Euclidean),
            "hypersphere" | "sphere" => Ok(SpaceKind::Hypersphere),
            other => Err(Error::invalid(format!("unknown embedding space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpace {
    pub kind: SpaceKind,
    pub dim: usize,
}

impl EmbeddingSpace {
    pub fn new(kind: SpaceKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        Ok(Self { kind, dim })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(SpaceKind::Euclidean, dim).expect("dim >= 1")
    }

    pub fn hypersphere(dim: usize) -> Self {
        Self::new(SpaceKind::Hypersphere, dim).expect("dim >= 1")
    }

    pub fn is_hypersphere(&self) -> bool {
        self.kind == SpaceKind::Hypersphere
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }
}

/// Dense row-major matrix. Rows are samples (embeddings, features).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Squared Euclidean distance between two equally sized vectors.
pub fn sq_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(sq_dist_unchecked(a, b))
}

/// Squared distance without the length check. Callers guarantee equal lengths.
#[inline]
pub fn sq_dist_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub values: Vec<f64>,
    pub member_count: usize,
    /// The normalizer: member count in Euclidean space, norm of the member
    /// sum on the hypersphere.
    pub normalizer: f64,
}

/// Centroid of `members` with respect to squared distance, constrained to the
/// space: the arithmetic mean in `R^D`, the renormalized sum on the sphere.
pub fn centroid<R: AsRef<[f64]>>(members: &[R], space: &EmbeddingSpace) -> Result<Centroid> {
    if members.is_empty() {
        return Err(Error::invalid("centroid of an empty member list"));
    }
    let mut sum = vec![0.0; space.dim];
    for m in members {
        let m = m.as_ref();
        space.check_dim(m.len())?;
        for (s, v) in sum.iter_mut().zip(m) {
            *s += v;
        }
    }
    let normalizer = match space.kind {
        SpaceKind::Euclidean => members.len() as f64,
        SpaceKind::Hypersphere => {
            let norm = l2_norm(&sum);
            if norm < DEGENERATE_SUM_NORM {
                return Err(Error::DegenerateCentroid { sum, norm });
            }
            norm
        }
    };
    for s in &mut sum {
        *s /= normalizer;
    }
    Ok(Centroid {
        values: sum,
        member_count: members.len(),
        normalizer,
    })
}

/// Maps a raw network output into the space: identity for `R^D`,
/// l2-normalization for the sphere.
pub fn project(raw: &[f64], space: &EmbeddingSpace) -> Result<Vec<f64>> {
    space.check_dim(raw.len())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite embedding coordinate"));
    }
    match space.kind {
        SpaceKind::Euclidean => Ok(raw.to_vec()),
        SpaceKind::Hypersphere => {
            let norm = l2_norm(raw);
            if norm <= DEGENERATE_INPUT_NORM {
                return Err(Error::DegenerateInput { norm });
            }
            Ok(raw.iter().map(|v| v / norm).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn sq_dist_examples() {
        assert_eq!(sq_dist(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        let f = [0.3, -1.2, 7.0];
        assert_eq!(sq_dist(&f, &f).unwrap(), 0.0);
        assert!(matches!(
            sq_dist(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sq_dist_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_vec(&mut rng, 64);
            let b = random_vec(&mut rng, 64);
            let mut oracle = 0.0;
            for j in 0..64 {
                oracle += (a[j] - b[j]) * (a[j] - b[j]);
            }
            let got = sq_dist(&a, &b).unwrap();
            assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
        }
    }

    #[test]
    fn centroid_examples() {
        let e = EmbeddingSpace::euclidean(2);
        let s = EmbeddingSpace::hypersphere(2);
        assert_eq!(centroid(&[[1.0, 0.0]], &e).unwrap().values, vec![1.0, 0.0]);
        let c = centroid(&[[1.0, 0.0], [0.0, 1.0]], &s).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((c.values[0] - h).abs() < 1e-15 && (c.values[1] - h).abs() < 1e-15);

        let empty: [[f64; 2]; 0] = [];
        assert!(matches!(centroid(&empty, &e), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            centroid(&[[1.0, 0.0], [-1.0, 0.0]], &s),
            Err(Error::DegenerateCentroid { .. })
        ));
        assert!(matches!(
            centroid(&[[1.0, 0.0, 0.0]], &e),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn euclidean_centroid_matches_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let space = EmbeddingSpace::euclidean(3);
        let members: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 3)).collect();
        let mut acc = [0.0; 3];
        for m in &members {
            for j in 0..3 {
                acc[j] += m[j];
            }
        }
        let c = centroid(&members, &space).unwrap();
        for j in 0..3 {
            assert!((c.values[j] - acc[j] / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn project_examples() {
        let s = EmbeddingSpace::hypersphere(2);
        let e = EmbeddingSpace::euclidean(2);
        let p = project(&[3.0, 4.0], &s).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project(&[3.0, 4.0], &e).unwrap(), vec![3.0, 4.0]);
        assert!(matches!(project(&[0.0, 0.0], &s), Err(Error::DegenerateInput { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s8 = EmbeddingSpace::hypersphere(8);
        for _ in 0..20 {
            let v = project(&random_vec(&mut rng, 8), &s8).unwrap();
            assert!((l2_norm(&v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let a = random_vec(&mut rng, 6);
            let b = random_vec(&mut rng, 6);
            let c = random_vec(&mut rng, 6);
            let ab = sq_dist_unchecked(&a, &b).sqrt();
            let bc = sq_dist_unchecked(&b, &c).sqrt();
            let ac = sq_dist_unchecked(&a, &c).sqrt();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    fn cost(members: &[Vec<f64>], mu: &[f64]) -> f64 {
        members.iter().map(|m| sq_dist_unchecked(m, mu)).sum()
    }

    #[test]
    fn centroid_minimizes_squared_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let d = 4;
            let members: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, d)).collect();
            let mu = centroid(&members, &EmbeddingSpace::euclidean(d)).unwrap().values;
            let base = cost(&members, &mu);
            let delta = project(&random_vec(&mut rng, d), &EmbeddingSpace::hypersphere(d)).unwrap();
            let moved: Vec<f64> = mu.iter().zip(&delta).map(|(m, x)| m + 1e-3 * x).collect();
            assert!(cost(&members, &moved) > base);

            let sphere = EmbeddingSpace::hypersphere(d);
            let members: Vec<Vec<f64>> = members.iter().map(|m| project(m, &sphere).unwrap()).collect();
            let mu = centroid(&members, &sphere).unwrap().values;
            let base = cost(&members, &mu);
            // tangent direction, then back onto the sphere
            let r = random_vec(&mut rng, d);
            let along = dot(&r, &mu);
            let t: Vec<f64> = r.iter().zip(&mu).map(|(x, m)| x - along * m).collect();
            let t = project(&t, &sphere).unwrap();
            let moved: Vec<f64> = mu.iter().zip(&t).map(|(m, x)| m + 1e-3 * x).collect();
            let moved = project(&moved, &sphere).unwrap();
            assert!(cost(&members, &moved) > base);
        }
    }

    proptest! {
        #[test]
        fn sq_dist_symmetric_nonnegative(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            let ab = sq_dist(&a, &b).unwrap();
            let ba = sq_dist(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn project_is_idempotent(raw in prop::collection::vec(-10.0f64..10.0, 4)) {
            prop_assume!(l2_norm(&raw) > 1e-6);
            for space in [EmbeddingSpace::euclidean(4), EmbeddingSpace::hypersphere(4)] {
                let once = project(&raw, &space).unwrap();
                let twice = project(&once, &space).unwrap();
                for (x, y) in once.iter().zip(&twice) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
