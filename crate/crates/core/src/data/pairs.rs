//! Automatic constraints for fine-tuning: tracks visible at the same time
//! are different people, two views of one track are the same person.

use rand::seq::index::sample;
use rand::Rng;

use super::{Track, TrackDataset};
use crate::error::{Error, Result};
use crate::geometry::{sq_dist_unchecked, Matrix};
use crate::trainer::MlpModel;

/// Two frame-subsampled views of track `a == b`, with their squared
/// embedding distance under the model used for mining.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivePair {
    pub track_a: usize,
    pub track_b: usize,
    pub orig_sq_dist: f64,
}

/// Track indices into the mined dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub positives: Vec<PositivePair>,
    /// `(a, b)` with `a < b`.
    pub negatives: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn is_empty(&self) -> bool {
        self.positives.is_empty() && self.negatives.is_empty()
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// Every index pair `(a, b)`, `a < b`, whose inclusive spans intersect.
pub fn overlapping_pairs(dataset: &TrackDataset) -> Result<Vec<(usize, usize)>> {
    if !dataset.has_spans() {
        return Err(Error::UnsupportedDataset(
            "pair mining needs a time span on every track".into(),
        ));
    }
    let spans: Vec<(i64, i64)> = dataset.tracks().iter().map(|t| t.span.expect("checked")).collect();
    // sweep in order of start time; only spans starting before `end` can overlap
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].0, i));
    let mut out = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        let end = spans[i].1;
        for &j in &order[pos + 1..] {
            if spans[j].0 > end {
                break;
            }
            out.push((i.min(j), i.max(j)));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Mean feature of a uniformly chosen half (at least one) of the frames.
pub fn random_half_mean(track: &Track, rng: &mut impl Rng) -> Vec<f64> {
    let n = track.frames.len();
    let k = (n / 2).max(1);
    let idx = sample(rng, n, k);
    let mut mean = vec![0.0; track.frames[0].len()];
    for i in idx.iter() {
        for (m, v) in mean.iter_mut().zip(&track.frames[i]) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    mean
}

fn subsample<T: Copy>(items: Vec<T>, max: usize, rng: &mut impl Rng) -> Vec<T> {
    if items.len() <= max {
        return items;
    }
    let mut idx = sample(rng, items.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i]).collect()
}

/// Negatives from overlapping spans, positives from tracks with at least two
/// frames; each list is uniformly subsampled to `max_pairs`. Labels are not
/// consulted.
pub fn mine_pairs(dataset: &TrackDataset, model: &MlpModel, max_pairs: usize, rng: &mut impl Rng) -> Result<PairSet> {
    let negatives = subsample(overlapping_pairs(dataset)?, max_pairs, rng);
    let multi: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.tracks()[i].frames.len() >= 2)
        .collect();
    let chosen = subsample(multi, max_pairs, rng);
    let mut views = Matrix::zeros(2 * chosen.len(), dataset.input_dim());
    for (p, &t) in chosen.iter().enumerate() {
        let track = &dataset.tracks()[t];
        views.row_mut(2 * p).copy_from_slice(&random_half_mean(track, rng));
        views.row_mut(2 * p + 1).copy_from_slice(&random_half_mean(track, rng));
    }
    let emb = if chosen.is_empty() {
        Matrix::zeros(0, model.output_dim())
    } else {
        model.forward_batch(&views)?
    };
    let positives = chosen
        .iter()
        .enumerate()
        .map(|(p, &t)| PositivePair {
            track_a: t,
            track_b: t,
            orig_sq_dist: sq_dist_unchecked(emb.row(2 * p), emb.row(2 * p + 1)),
        })
        .collect();
    Ok(PairSet { positives, negatives })
}
