//! `BCLM` model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `"BCLM"` | 4 bytes |
//! | version (1) | u32 |
//! | space kind (0 Euclidean, 1 hypersphere) | u8 |
//! | layer count (4) | u32 |
//! | widths `input, h1, h2, h3, output` | 5 x u32 |
//! | raw radius `b̂` | f64 |
//! | per layer: weights `out x in` row-major, then bias | f64 ... |

use std::path::Path;

use super::mlp::{Dense, MlpModel, LAYER_COUNT};
use crate::binio::Reader;
use crate::error::Result;
use crate::geometry::{Matrix, SpaceKind};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCLM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(41 + 8 * model.parameter_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.space().kind.code());
    out.extend_from_slice(&(LAYER_COUNT as u32).to_le_bytes());
    for w in model.architecture().widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&model.raw_radius().to_le_bytes());
    for layer in model.layers() {
        for v in layer.weights.as_slice().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn model_from_bytes(buf: &[u8]) -> Result<MlpModel> {
    let mut r = Reader::new(buf);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error_at(at, format!("unsupported checkpoint version {version}")));
    }
    let at = r.offset();
    let code = r.u8("space kind")?;
    let kind = SpaceKind::from_code(code).ok_or_else(|| r.error_at(at, format!("unknown space kind {code}")))?;
    let at = r.offset();
    let count = r.u32("layer count")?;
    if count as usize != LAYER_COUNT {
        return Err(r.error_at(at, format!("expected {LAYER_COUNT} layers, found {count}")));
    }
    let mut widths = [0usize; LAYER_COUNT + 1];
    for w in &mut widths {
        let at = r.offset();
        *w = r.u32("layer width")? as usize;
        if *w == 0 {
            return Err(r.error_at(at, "zero layer width"));
        }
    }
    let raw_radius = r.f64("raw radius")?;
    let mut layers = Vec::with_capacity(LAYER_COUNT);
    for l in 0..LAYER_COUNT {
        let (inp, out) = (widths[l], widths[l + 1]);
        let needed = (inp * out + out).saturating_mul(8);
        if r.remaining() < needed {
            return Err(r.error(format!(
                "truncated layer {l}: need {needed} bytes, {} left",
                r.remaining()
            )));
        }
        let mut weights = Vec::with_capacity(inp * out);
        for _ in 0..inp * out {
            weights.push(r.f64("weight")?);
        }
        let mut bias = Vec::with_capacity(out);
        for _ in 0..out {
            bias.push(r.f64("bias")?);
        }
        layers.push(Dense {
            weights: Matrix::from_vec(out, inp, weights)?,
            bias,
        });
    }
    r.finish()?;
    MlpModel::from_parts(layers, raw_radius, kind)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    model_from_bytes(&std::fs::read(path)?)
}
