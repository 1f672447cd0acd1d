//! `rcn.json` + `rcn.bin`: tensors in [`TENSOR_NAMES`] order, each
//! row-major little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RcnParams, TENSOR_NAMES};
use crate::error::{Error, Result};

pub const RCN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RcnManifest {
    version: u32,
    face_count: usize,
    activation: String,
    tensors: Vec<TensorEntry>,
}

pub fn save_rcn(params: &RcnParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = RcnManifest {
        version: RCN_FORMAT_VERSION,
        face_count: params.face_count(),
        activation: "silu".into(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(params.shapes())
            .map(|(n, s)| TensorEntry {
                name: n.to_string(),
                shape: s,
            })
            .collect(),
    };
    let bin: Vec<u8> = params
        .tensors()
        .iter()
        .flat_map(|t| t.iter().flat_map(|x| (*x as f32).to_le_bytes()))
        .collect();
    crate::util::write_atomic(&dir.join("rcn.bin"), &bin)?;
    crate::util::write_atomic(&dir.join("rcn.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

pub fn load_rcn(dir: &Path) -> Result<RcnParams> {
    let json_path = dir.join("rcn.json");
    let bin_path = dir.join("rcn.bin");
    let m: RcnManifest =
        serde_json::from_str(&fs::read_to_string(&json_path)?).map_err(|e| Error::format(&json_path, e.to_string()))?;
    if m.version != RCN_FORMAT_VERSION {
        return Err(Error::format(&json_path, format!("unsupported version {}", m.version)));
    }
    let mut params = RcnParams::new(0, 0).zeros_like();
    params.tri_embed = ndarray::Array2::zeros((m.face_count, super::EMBED_DIM));
    let want: Vec<(String, Vec<usize>)> = TENSOR_NAMES.iter().map(|n| n.to_string()).zip(params.shapes()).collect();
    let got: Vec<(String, Vec<usize>)> = m.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
    if want != got || m.activation != "silu" {
        return Err(Error::format(&json_path, "tensor layout does not match this network"));
    }
    let bin = fs::read(&bin_path)?;
    let total = params.value_count();
    if bin.len() != 4 * total {
        return Err(Error::format(&bin_path, format!("{} bytes, expected {}", bin.len(), 4 * total)));
    }
    let mut vals = bin.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = vals.next().expect("length checked");
        }
    }
    params.validate().map_err(|e| Error::format(&bin_path, e.to_string()))?;
    Ok(params)
}
