//! `body.json` + `body.bin` bundle files.
//!
//! The manifest lists each array with its byte offset into `body.bin`, its
//! element type (`f32` or `i32`, little-endian) and its element count. Arrays
//! are row-major. Kinematic parents use `-1` for the root. Optional arrays
//! (shape basis, joint regressor) are simply left out of the field list.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BodyBundle;
use crate::error::{Error, Result};

pub const BODY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct FieldEntry {
    name: String,
    dtype: String,
    offset: usize,
    length: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct Manifest {
    version: u32,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "F")]
    f: usize,
    #[serde(rename = "J")]
    j: usize,
    #[serde(rename = "S")]
    s: usize,
    fields: Vec<FieldEntry>,
}

enum Array {
    F32(Vec<f64>),
    I32(Vec<i64>),
}

fn encode(bundle: &BodyBundle) -> (Manifest, Vec<u8>) {
    let mut arrays: Vec<(&str, Array)> = vec![
        ("rest_vertices", Array::F32(bundle.rest_vertices.iter().flatten().copied().collect())),
        (
            "faces",
            Array::I32(bundle.faces.iter().flatten().map(|&i| i as i64).collect()),
        ),
        (
            "joint_rest_positions",
            Array::F32(bundle.joint_rest_positions.iter().flatten().copied().collect()),
        ),
        (
            "kinematic_parents",
            Array::I32(bundle.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect()),
        ),
        ("skin_weights", Array::F32(bundle.skin_weights.clone())),
    ];
    if let Some(b) = &bundle.shape_basis {
        arrays.push(("shape_basis", Array::F32(b.clone())));
    }
    if let Some(r) = &bundle.joint_regressor {
        arrays.push(("joint_regressor", Array::F32(r.clone())));
    }
    let mut bin = Vec::new();
    let mut fields = Vec::new();
    for (name, arr) in arrays {
        let offset = bin.len();
        let (dtype, length) = match arr {
            Array::F32(v) => {
                for x in &v {
                    bin.extend_from_slice(&(*x as f32).to_le_bytes());
                }
                ("f32", v.len())
            }
            Array::I32(v) => {
                for x in &v {
                    bin.extend_from_slice(&(*x as i32).to_le_bytes());
                }
                ("i32", v.len())
            }
        };
        fields.push(FieldEntry {
            name: name.into(),
            dtype: dtype.into(),
            offset,
            length,
        });
    }
    let manifest = Manifest {
        version: BODY_FORMAT_VERSION,
        v: bundle.vertex_count(),
        f: bundle.face_count(),
        j: bundle.joint_count(),
        s: bundle.shape_count(),
        fields,
    };
    (manifest, bin)
}

/// Writes `body.json` and `body.bin` into `dir`.
pub fn save_body(bundle: &BodyBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir)?;
    let (manifest, bin) = encode(bundle);
    fs::write(dir.join("body.bin"), bin)?;
    fs::write(dir.join("body.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Hex SHA-256 of the bundle's binary encoding.
pub fn bundle_hash(bundle: &BodyBundle) -> String {
    let (manifest, bin) = encode(bundle);
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&manifest).unwrap_or_default());
    h.update(&bin);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads a bundle written by [`save_body`] or the SMPL converter.
pub fn load_body(dir: &Path) -> Result<BodyBundle> {
    let json_path = dir.join("body.json");
    let bin_path = dir.join("body.bin");
    let ferr = |reason: String| Error::format(&json_path, reason);
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&json_path)?)
        .map_err(|e| ferr(e.to_string()))?;
    if manifest.version != BODY_FORMAT_VERSION {
        return Err(ferr(format!("unsupported version {}", manifest.version)));
    }
    let bin = fs::read(&bin_path)?;
    let field = |name: &str, want: usize, dtype: &str, required: bool| -> Result<Option<&[u8]>> {
        let Some(e) = manifest.fields.iter().find(|e| e.name == name) else {
            return if required {
                Err(ferr(format!("missing field {name}")))
            } else {
                Ok(None)
            };
        };
        if e.dtype != dtype {
            return Err(ferr(format!("field {name} has dtype {}, expected {dtype}", e.dtype)));
        }
        if e.length != want {
            return Err(ferr(format!("field {name} has {} elements, expected {want}", e.length)));
        }
        let end = e.offset.checked_add(4 * e.length).filter(|&end| end <= bin.len());
        match end {
            Some(end) => Ok(Some(&bin[e.offset..end])),
            None => Err(Error::format(&bin_path, format!("field {name} runs past the end of the file"))),
        }
    };
    let f32s = |b: &[u8]| -> Vec<f64> {
        b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect()
    };
    let i32s = |b: &[u8]| -> Vec<i32> {
        b.chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    let (v, f, j, s) = (manifest.v, manifest.f, manifest.j, manifest.s);
    let triples = |x: Vec<f64>| -> Vec<[f64; 3]> { x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() };

    let rest = triples(f32s(field("rest_vertices", 3 * v, "f32", true)?.unwrap()));
    let face_idx = i32s(field("faces", 3 * f, "i32", true)?.unwrap());
    if face_idx.iter().any(|&i| i < 0) {
        return Err(ferr("negative face index".into()));
    }
    let faces = face_idx
        .chunks_exact(3)
        .map(|c| [c[0] as u32, c[1] as u32, c[2] as u32])
        .collect();
    let joints = triples(f32s(field("joint_rest_positions", 3 * j, "f32", true)?.unwrap()));
    let parents = i32s(field("kinematic_parents", j, "i32", true)?.unwrap())
        .into_iter()
        .map(|p| usize::try_from(p).ok())
        .collect();
    let skin_weights = f32s(field("skin_weights", v * j, "f32", true)?.unwrap());
    let shape_basis = match field("shape_basis", 3 * v * s, "f32", s > 0)? {
        Some(b) if s > 0 => Some(f32s(b)),
        _ => None,
    };
    let joint_regressor = field("joint_regressor", j * v, "f32", false)?.map(f32s);

    let bundle = BodyBundle {
        rest_vertices: rest,
        faces,
        joint_rest_positions: joints,
        parents,
        skin_weights,
        shape_basis,
        joint_regressor,
    };
    bundle.validate().map_err(|e| ferr(e.to_string()))?;
    Ok(bundle)
}
