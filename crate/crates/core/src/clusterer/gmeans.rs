//! G-means: split a cluster whenever its members, projected onto the
//! direction joining its 2-means children, fail an Anderson-Darling
//! normality test.

use rand::Rng;
use statrs::function::erf::erfc;

use super::kmeans::{kmeans_detailed, lloyd, MAX_LLOYD_ITERATIONS};
use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::geometry::{dot, Matrix};

pub const DEFAULT_SIGNIFICANCE: f64 = 1e-4;

/// Clusters smaller than this are never tested.
const MIN_TEST_SIZE: usize = 8;

/// `ln Phi(z)` and `ln(1 - Phi(z))` without cancellation in the tails.
fn ln_cdf_pair(z: f64) -> (f64, f64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let lower = (0.5 * erfc(-z * s)).max(f64::MIN_POSITIVE).ln();
    let upper = (0.5 * erfc(z * s)).max(f64::MIN_POSITIVE).ln();
    (lower, upper)
}

/// Anderson-Darling statistic `A^2` for normality with mean and variance
/// estimated from the sample (sample standard deviation, `n - 1`).
/// Returns `None` for fewer than two samples or zero spread.
pub fn anderson_darling(sample: &[f64]) -> Option<f64> {
    let n = sample.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let var = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(var > 0.0) {
        return None;
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let logs: Vec<(f64, f64)> = z.iter().map(|&v| ln_cdf_pair(v)).collect();
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (logs[i].0 + logs[n - 1 - i].1))
        .sum();
    Some(-nf - s / nf)
}

/// Upper-tail p-value of the small-sample corrected statistic
/// `A*^2 = A^2 (1 + 4/n - 25/n^2)` for the estimated-parameters case, using
/// the piecewise approximation of D'Agostino and Stephens.
pub fn anderson_darling_p_value(a2: f64, n: usize) -> f64 {
    let nf = n as f64;
    let a = a2 * (1.0 + 4.0 / nf - 25.0 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    p.clamp(0.0, 1.0)
}

pub fn gmeans(points: &Matrix, significance: f64, k_max: usize, rng: &mut impl Rng) -> Result<ClusterAssignment> {
    if !(significance > 0.0 && significance < 0.5) {
        return Err(Error::invalid(format!("significance {significance} outside (0, 0.5)")));
    }
    if points.rows() == 0 {
        return Err(Error::invalid("cannot cluster zero points"));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let mut centers = Matrix::from_rows(&[column_means(points)])?;
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
            if total + 1 > k_max || idx.len() < MIN_TEST_SIZE {
                next.push(parent);
                continue;
            }
            let sub = points.select_rows(idx);
            let child = kmeans_detailed(&sub, 2, rng)?;
            let dir: Vec<f64> = child
                .centers
                .row(0)
                .iter()
                .zip(child.centers.row(1))
                .map(|(a, b)| a - b)
                .collect();
            let len2 = dot(&dir, &dir);
            let reject = len2 > 0.0 && {
                let proj: Vec<f64> = sub.iter_rows().map(|x| dot(x, &dir) / len2).collect();
                anderson_darling(&proj).is_some_and(|a2| anderson_darling_p_value(a2, proj.len()) < significance)
            };
            if reject {
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

fn column_means(points: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; points.cols()];
    for row in points.iter_rows() {
        for (s, v) in mean.iter_mut().zip(row) {
            *s += v;
        }
    }
    let n = points.rows() as f64;
    mean.iter_mut().for_each(|s| *s /= n);
    mean
}
