//! `avatar.json` + `avatar.bin` checkpoint files.
//!
//! `avatar.bin` is splat-major little-endian 32-bit data, 38 values per
//! splat: face index (as `i32`), u, v, d, s0, s1, qw, qx, qy, qz, opacity,
//! then the 27 SH coefficients (basis-major, RGB innermost), all `f32`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AvatarModel, SplatEmbedding};
use crate::body::{joint_tri_set, Body};
use crate::error::{Error, Result};
use crate::math::{Quat, ShCoeffs};

pub const AVATAR_FORMAT_VERSION: u32 = 1;
pub const AVATAR_FLOATS_PER_SPLAT: usize = 38;

const FIELDS: [&str; 12] = ["k", "u", "v", "d", "s0", "s1", "qw", "qx", "qy", "qz", "alpha", "sh[27]"];

#[derive(Debug, Serialize, Deserialize)]
struct AvatarManifest {
    version: u32,
    splat_count: usize,
    fields: Vec<String>,
    bundle_hash: String,
    joint_radius: f64,
    beta: Vec<f64>,
}

fn encode(model: &AvatarModel) -> Vec<u8> {
    let mut bin = Vec::with_capacity(model.len() * AVATAR_FLOATS_PER_SPLAT * 4);
    for s in &model.splats {
        bin.extend_from_slice(&(s.face as i32).to_le_bytes());
        let q = s.rot.to_array();
        let vals = [s.u, s.v, s.d, s.scale[0], s.scale[1], q[0], q[1], q[2], q[3], s.opacity];
        for x in vals.iter().chain(s.sh.flat().iter()) {
            bin.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    bin
}

pub fn save_avatar(model: &AvatarModel, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = AvatarManifest {
        version: AVATAR_FORMAT_VERSION,
        splat_count: model.len(),
        fields: FIELDS.iter().map(|s| s.to_string()).collect(),
        bundle_hash: model.body.hash.clone(),
        joint_radius: model.joint_radius,
        beta: model.beta.clone(),
    };
    crate::util::write_atomic(&dir.join("avatar.bin"), &encode(model))?;
    crate::util::write_atomic(&dir.join("avatar.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

/// Loads an avatar and binds it to `body`, whose hash must match the one recorded.
pub fn load_avatar(dir: &Path, body: Arc<Body>) -> Result<AvatarModel> {
    let json_path = dir.join("avatar.json");
    let bin_path = dir.join("avatar.bin");
    let m: AvatarManifest = serde_json::from_str(&fs::read_to_string(&json_path)?)
        .map_err(|e| Error::format(&json_path, e.to_string()))?;
    if m.version != AVATAR_FORMAT_VERSION {
        return Err(Error::format(&json_path, format!("unsupported version {}", m.version)));
    }
    if m.fields != FIELDS {
        return Err(Error::format(&json_path, "unexpected field layout"));
    }
    if m.bundle_hash != body.hash {
        return Err(Error::format(&json_path, "checkpoint was trained on a different body bundle"));
    }
    let bin = fs::read(&bin_path)?;
    let stride = AVATAR_FLOATS_PER_SPLAT * 4;
    if bin.len() != m.splat_count * stride {
        return Err(Error::format(
            &bin_path,
            format!("{} bytes for {} splats, expected {}", bin.len(), m.splat_count, m.splat_count * stride),
        ));
    }
    let splats = bin
        .chunks_exact(stride)
        .map(|c| {
            let word = |i: usize| [c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]];
            let f = |i: usize| f32::from_le_bytes(word(i)) as f64;
            let face = i32::from_le_bytes(word(0));
            let sh: Vec<f64> = (11..38).map(f).collect();
            SplatEmbedding {
                face: face.max(0) as u32,
                u: f(1),
                v: f(2),
                d: f(3),
                scale: [f(4), f(5)],
                rot: Quat::new(f(6), f(7), f(8), f(9)),
                opacity: f(10),
                sh: ShCoeffs::from_flat(&sh),
            }
        })
        .collect();
    let joint_set = joint_tri_set(&body.bundle, m.joint_radius)?;
    let model = AvatarModel {
        body,
        splats,
        joint_set,
        joint_radius: m.joint_radius,
        beta: m.beta,
    };
    model.validate().map_err(|e| Error::format(&bin_path, e.to_string()))?;
    Ok(model)
}
