//! Track datasets: synthetic generation, the `BCLT` file format, track-level
//! embeddings and automatic pair mining for fine-tuning.

mod io;
mod pairs;
mod synth;

pub use io::{
    dataset_from_bytes, dataset_to_bytes, load_features, manifest_path, save_features, write_manifest, DatasetManifest,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use pairs::{mine_pairs, overlapping_pairs, random_half_mean, PairSet, PositivePair};
pub use synth::{synth_generate, synth_generate_episodes, zipf_track_counts, Nuisance, SynthSpec, Timeline};

use crate::error::{Error, Result};
use crate::geometry::Matrix;
use crate::trainer::MlpModel;

/// A face track: frames of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub label: usize,
    /// One feature vector per frame.
    pub frames: Vec<Vec<f32>>,
    /// Inclusive frame-index interval in the source video, if known.
    pub span: Option<(i64, i64)>,
}

impl Track {
    /// Mean of the frame features.
    pub fn mean_feature(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.frames.first().map_or(0, Vec::len)];
        for f in &self.frames {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += *v as f64;
            }
        }
        let n = self.frames.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn frame(&self, i: usize) -> Vec<f64> {
        self.frames[i].iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackDataset {
    input_dim: usize,
    identity_count: usize,
    tracks: Vec<Track>,
}

impl TrackDataset {
    /// Validates frame dimensions, non-empty tracks and label range.
    pub fn new(input_dim: usize, identity_count: usize, tracks: Vec<Track>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        for t in &tracks {
            if t.frames.is_empty() {
                return Err(Error::invalid(format!("track {} has no frames", t.id)));
            }
            if let Some(f) = t.frames.iter().find(|f| f.len() != input_dim) {
                return Err(Error::DimensionMismatch {
                    expected: input_dim,
                    got: f.len(),
                });
            }
            if t.label >= identity_count {
                return Err(Error::invalid(format!(
                    "track {} has label {} outside [0, {identity_count})",
                    t.id, t.label
                )));
            }
            if let Some((s, e)) = t.span {
                if s > e || s < 0 {
                    return Err(Error::invalid(format!("track {} has bad span ({s}, {e})", t.id)));
                }
            }
        }
        Ok(Self {
            input_dim,
            identity_count,
            tracks,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn identity_count(&self) -> usize {
        self.identity_count
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.tracks.iter().map(|t| t.label).collect()
    }

    pub fn frame_count(&self) -> usize {
        self.tracks.iter().map(|t| t.frames.len()).sum()
    }

    pub fn has_spans(&self) -> bool {
        !self.tracks.is_empty() && self.tracks.iter().all(|t| t.span.is_some())
    }

    /// Number of distinct labels actually present.
    pub fn present_identities(&self) -> usize {
        let mut seen = vec![false; self.identity_count];
        self.tracks.iter().for_each(|t| seen[t.label] = true);
        seen.iter().filter(|&&s| s).count()
    }

    /// Per-track mean features, one row per track.
    pub fn mean_features(&self) -> Matrix {
        let mut m = Matrix::zeros(self.len(), self.input_dim);
        for (i, t) in self.tracks.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&t.mean_feature());
        }
        m
    }

    /// Tracks selected by index, identities re-labelled densely.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let tracks: Vec<Track> = idx.iter().map(|&i| self.tracks[i].clone()).collect();
        let labels: Vec<usize> = tracks.iter().map(|t| t.label).collect();
        let dense = crate::clusterer::ClusterAssignment::from_labels(&labels);
        let tracks = tracks
            .into_iter()
            .zip(dense.labels())
            .map(|(t, &l)| Track { label: l, ..t })
            .collect();
        Self::new(self.input_dim, dense.num_clusters(), tracks)
    }
}

/// Averages the raw frame features, then embeds the mean.
pub fn track_embedding(model: &MlpModel, track: &Track) -> Result<Vec<f64>> {
    if track.frames.is_empty() {
        return Err(Error::invalid(format!("track {} has no frames", track.id)));
    }
    model.forward(&track.mean_feature())
}

/// [`track_embedding`] for every track, one row each.
pub fn embed_tracks(model: &MlpModel, dataset: &TrackDataset) -> Result<Matrix> {
    model.forward_batch(&dataset.mean_features())
}
