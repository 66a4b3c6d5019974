//! Synthetic track datasets with a long-tailed number of tracks per identity.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Track, TrackDataset};
use crate::error::{Error, Result};

const MAX_CENTER_ATTEMPTS: usize = 100_000;

/// Extra coordinates holding a per-track random offset shared by all of the
/// track's frames; they carry no identity information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    pub dims: usize,
    pub std: f64,
}

/// Places tracks on a frame-index timeline: tracks of one identity follow each
/// other without overlapping, different identities start at random offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    /// Identities start somewhere in `[0, horizon)`.
    pub horizon: i64,
    /// Gap between consecutive tracks of an identity, uniform in `[1, max_gap]`.
    pub max_gap: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_identities: usize,
    /// Exponent `s` of the track-count law `count(rank r) ~ r^-s`.
    pub zipf_s: f64,
    /// Track count of the rank-1 identity.
    pub max_tracks: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Identity-bearing dimensions; the feature dimension adds nuisance dims.
    pub dim: usize,
    /// Minimum center distance as a multiple of `within_std`.
    pub separation: f64,
    pub within_std: f64,
    pub nuisance: Option<Nuisance>,
    pub timeline: Option<Timeline>,
}

impl SynthSpec {
    pub fn new(num_identities: usize, dim: usize) -> Self {
        Self {
            num_identities,
            zipf_s: 1.2,
            max_tracks: 40,
            frames_min: 1,
            frames_max: 8,
            dim,
            separation: 8.0,
            within_std: 0.1,
            nuisance: None,
            timeline: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dim + self.nuisance.map_or(0, |n| n.dims)
    }

    fn validate(&self) -> Result<()> {
        if self.num_identities == 0 {
            return Err(Error::invalid("need at least one identity"));
        }
        if self.dim < 2 {
            return Err(Error::invalid("dim must be at least 2"));
        }
        if self.max_tracks == 0 {
            return Err(Error::invalid("max_tracks must be positive"));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::invalid(format!(
                "bad frame range [{}, {}]",
                self.frames_min, self.frames_max
            )));
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return Err(Error::invalid("zipf exponent must be finite and non-negative"));
        }
        if !(self.within_std >= 0.0 && self.within_std.is_finite()) || !(self.separation >= 0.0) {
            return Err(Error::invalid("within_std and separation must be non-negative"));
        }
        if let Some(n) = self.nuisance {
            if !(n.std >= 0.0 && n.std.is_finite()) {
                return Err(Error::invalid("nuisance std must be non-negative"));
            }
        }
        if let Some(t) = self.timeline {
            if t.horizon < 1 || t.max_gap < 1 {
                return Err(Error::invalid("timeline horizon and max_gap must be positive"));
            }
        }
        Ok(())
    }
}

/// Tracks per identity: identity `r - 1` gets `max(1, round(max_tracks * r^-s))`.
pub fn zipf_track_counts(num_identities: usize, max_tracks: usize, s: f64) -> Vec<usize> {
    (1..=num_identities)
        .map(|r| ((max_tracks as f64) * (r as f64).powf(-s)).round().max(1.0) as usize)
        .collect()
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn synth_generate(spec: &SynthSpec, rng: &mut impl Rng) -> Result<TrackDataset> {
    Ok(synth_generate_episodes(spec, 1, rng)?.pop().expect("one episode"))
}

/// Several datasets sharing the same identity centers, like episodes of one
/// series: each has its own tracks, frames and timeline.
pub fn synth_generate_episodes(spec: &SynthSpec, episodes: usize, rng: &mut impl Rng) -> Result<Vec<TrackDataset>> {
    spec.validate()?;
    let min_dist = spec.separation * spec.within_std;
    if min_dist > 2.0 && spec.num_identities > 1 {
        return Err(Error::Infeasible(format!(
            "centers on the unit sphere are at most 2 apart, separation needs {min_dist}"
        )));
    }
    let min_d2 = min_dist * min_dist;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_identities);
    let mut attempts = 0;
    while centers.len() < spec.num_identities {
        attempts += 1;
        if attempts > MAX_CENTER_ATTEMPTS {
            return Err(Error::Infeasible(format!(
                "placed only {} of {} centers {min_dist} apart after {MAX_CENTER_ATTEMPTS} attempts",
                centers.len(),
                spec.num_identities
            )));
        }
        let c = unit_vector(spec.dim, rng);
        let far = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() >= min_d2);
        if far {
            centers.push(c);
        }
    }

    let noise = Normal::new(0.0, spec.within_std).map_err(|e| Error::invalid(e.to_string()))?;
    let nuisance = match spec.nuisance {
        Some(n) => Some((
            n.dims,
            Normal::new(0.0, n.std).map_err(|e| Error::invalid(e.to_string()))?,
        )),
        None => None,
    };
    (0..episodes)
        .map(|_| episode(spec, &centers, &noise, nuisance.as_ref(), rng))
        .collect()
}

fn episode(
    spec: &SynthSpec,
    centers: &[Vec<f64>],
    noise: &Normal<f64>,
    nuisance: Option<&(usize, Normal<f64>)>,
    rng: &mut impl Rng,
) -> Result<TrackDataset> {
    let counts = zipf_track_counts(spec.num_identities, spec.max_tracks, spec.zipf_s);
    let mut tracks = Vec::with_capacity(counts.iter().sum());
    for (label, (&count, center)) in counts.iter().zip(centers).enumerate() {
        let mut cursor = spec.timeline.map(|t| rng.random_range(0..t.horizon));
        for _ in 0..count {
            let frames_n = rng.random_range(spec.frames_min..=spec.frames_max);
            let offset: Vec<f64> = nuisance
                .map(|(dims, dist)| (0..*dims).map(|_| dist.sample(rng)).collect())
                .unwrap_or_default();
            let frames = (0..frames_n)
                .map(|_| {
                    center
                        .iter()
                        .map(|c| (c + noise.sample(rng)) as f32)
                        .chain(offset.iter().map(|&o| o as f32))
                        .collect()
                })
                .collect();
            let span = match (spec.timeline, cursor.as_mut()) {
                (Some(t), Some(start)) => {
                    let s = *start;
                    let e = s + frames_n as i64 - 1;
                    *start = e + rng.random_range(1..=t.max_gap) + 1;
                    Some((s, e))
                }
                _ => None,
            };
            tracks.push(Track {
                id: tracks.len() as u64,
                label,
                frames,
                span,
            });
        }
    }
    TrackDataset::new(spec.input_dim(), spec.num_identities, tracks)
}
