//! The `BCLT` feature file.
//!
//! Little-endian layout:
//!
//! ```text
//! "BCLT"            4 bytes
//! version = 1       u32
//! inputDim          u32
//! trackCount        u32
//! per track:
//!   trackId         u64
//!   identityLabel   u32
//!   frameCount      u32
//!   spanStart       i64   (-1 when absent)
//!   spanEnd         i64   (-1 when absent)
//!   frames          frameCount x inputDim f32
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SynthSpec, Track, TrackDataset};
use crate::binio::Reader;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"BCLT";
pub const FEATURE_VERSION: u32 = 1;

pub fn dataset_to_bytes(ds: &TrackDataset) -> Result<Vec<u8>> {
    let to_u32 =
        |v: usize, what: &str| u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")));
    let mut out = Vec::with_capacity(16 + ds.len() * 32 + ds.frame_count() * ds.input_dim() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.input_dim(), "input dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.len(), "track count")?.to_le_bytes());
    for t in ds.tracks() {
        out.extend_from_slice(&t.id.to_le_bytes());
        out.extend_from_slice(&to_u32(t.label, "label")?.to_le_bytes());
        out.extend_from_slice(&to_u32(t.frames.len(), "frame count")?.to_le_bytes());
        let (s, e) = t.span.unwrap_or((-1, -1));
        out.extend_from_slice(&s.to_le_bytes());
        out.extend_from_slice(&e.to_le_bytes());
        for f in &t.frames {
            for v in f {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses a `BCLT` buffer. The identity count is one more than the largest
/// label.
pub fn dataset_from_bytes(buf: &[u8]) -> Result<TrackDataset> {
    let mut r = Reader::new(buf);
    r.expect_magic(FEATURE_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(r.error_at(at, format!("unsupported feature file version {version}")));
    }
    let at = r.offset();
    let dim = r.u32("input dim")? as usize;
    if dim == 0 {
        return Err(r.error_at(at, "input dim is zero"));
    }
    let count = r.u32("track count")? as usize;
    let mut tracks = Vec::with_capacity(count.min(r.remaining() / 32 + 1));
    for _ in 0..count {
        let id = r.u64("track id")?;
        let label = r.u32("identity label")? as usize;
        let at = r.offset();
        let frames_n = r.u32("frame count")? as usize;
        if frames_n == 0 {
            return Err(r.error_at(at, format!("track {id} has zero frames")));
        }
        let at = r.offset();
        let start = r.i64("span start")?;
        let end = r.i64("span end")?;
        let span = match (start, end) {
            (-1, -1) => None,
            (s, e) if 0 <= s && s <= e => Some((s, e)),
            (s, e) => return Err(r.error_at(at, format!("track {id} has bad span ({s}, {e})"))),
        };
        let needed = frames_n.saturating_mul(dim).saturating_mul(4);
        if r.remaining() < needed {
            return Err(r.error(format!(
                "truncated frames of track {id}: need {needed} bytes, {} left",
                r.remaining()
            )));
        }
        let mut frames = Vec::with_capacity(frames_n);
        for _ in 0..frames_n {
            let mut f = Vec::with_capacity(dim);
            for _ in 0..dim {
                f.push(r.f32("feature")?);
            }
            frames.push(f);
        }
        tracks.push(Track {
            id,
            label,
            frames,
            span,
        });
    }
    r.finish()?;
    let identity_count = tracks.iter().map(|t| t.label + 1).max().unwrap_or(0);
    TrackDataset::new(dim, identity_count, tracks)
}

pub fn save_features(ds: &TrackDataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<TrackDataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}

/// Provenance written next to a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: Option<u64>,
    pub generator: Option<SynthSpec>,
    pub track_count: usize,
    pub identity_count: usize,
    pub input_dim: usize,
}

/// `data.bclt` -> `data.bclt.json`.
pub fn manifest_path(features: &Path) -> PathBuf {
    let mut s = features.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_manifest(features: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(manifest_path(features), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, Timeline};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Two tracks written byte by byte from the layout table.
    fn fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"BCLT");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes()); // dim
        b.extend_from_slice(&2u32.to_le_bytes()); // tracks
                                                  // track 7, label 1, 1 frame, no span
        b.extend_from_slice(&7u64.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&(-1i64).to_le_bytes());
        b.extend_from_slice(&(-1i64).to_le_bytes());
        b.extend_from_slice(&1.5f32.to_le_bytes());
        b.extend_from_slice(&(-2.0f32).to_le_bytes());
        // track 9, label 0, 2 frames, span 10..=11
        b.extend_from_slice(&9u64.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&10i64.to_le_bytes());
        b.extend_from_slice(&11i64.to_le_bytes());
        for v in [0.0f32, 0.25, 0.5, 0.75] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn fixture_parses_to_documented_structure() {
        let ds = dataset_from_bytes(&fixture()).unwrap();
        assert_eq!(ds.input_dim(), 2);
        assert_eq!(ds.identity_count(), 2);
        let t = ds.tracks();
        assert_eq!((t[0].id, t[0].label, t[0].span), (7, 1, None));
        assert_eq!(t[0].frames, vec![vec![1.5, -2.0]]);
        assert_eq!((t[1].id, t[1].label, t[1].span), (9, 0, Some((10, 11))));
        assert_eq!(t[1].frames, vec![vec![0.0, 0.25], vec![0.5, 0.75]]);
        assert_eq!(dataset_to_bytes(&ds).unwrap(), fixture());
    }

    #[test]
    fn generated_round_trip_is_bit_identical() {
        for seed in 0..5 {
            let mut spec = SynthSpec::new(6, 5);
            spec.timeline = (seed % 2 == 0).then_some(Timeline {
                horizon: 50,
                max_gap: 5,
            });
            let ds = synth_generate(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let bytes = dataset_to_bytes(&ds).unwrap();
            let back = dataset_from_bytes(&bytes).unwrap();
            assert_eq!(back, ds);
            assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corruption_names_the_offset() {
        let good = fixture();
        for cut in 0..good.len() {
            match dataset_from_bytes(&good[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut bad = good.clone();
        bad[1] = b'X';
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Parse { offset: 4, .. })));
        let mut bad = good.clone();
        bad[16 + 12] = 0; // frame count of the first track
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Parse { offset: 28, .. })));
        let mut long = good;
        long.push(1);
        assert!(matches!(dataset_from_bytes(&long), Err(Error::Parse { .. })));
    }

    #[test]
    fn file_round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bclt");
        let ds = dataset_from_bytes(&fixture()).unwrap();
        save_features(&ds, &path).unwrap();
        assert_eq!(load_features(&path).unwrap(), ds);
        let m = DatasetManifest {
            name: "x".into(),
            seed: Some(3),
            generator: Some(SynthSpec::new(2, 2)),
            track_count: 2,
            identity_count: 2,
            input_dim: 2,
        };
        write_manifest(&path, &m).unwrap();
        let text = std::fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(text.contains("\"seed\": 3"));
        assert!(text.contains("\"zipf_s\": 1.2"));
    }
}
