//! Checkpoint directory:
//!
//! ```text
//! avatar.json, avatar.bin   splat parameters
//! rcn.json, rcn.bin         network parameters
//! body/                     the body bundle the avatar is bound to
//! state.json                iteration, config and its hash, density history
//! optim.bin                 Adam moments, f64 little-endian:
//!                           splat m, splat v, network m, network v
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig, TrainState, SPLAT_PARAMS};
use crate::body::{load_body, save_body, Body};
use crate::error::{Error, Result};
use crate::rcn::{load_rcn, save_rcn};
use crate::splat::{load_avatar, save_avatar};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct OptimHeader {
    splat_step: u64,
    splat_values: usize,
    rcn_step: u64,
    rcn_values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateFile {
    version: u32,
    iteration: u64,
    stage: u8,
    splat_count: usize,
    bundle_hash: String,
    config_hash: String,
    config: TrainConfig,
    stabilized: bool,
    count_history: Vec<(u64, usize)>,
    optim: OptimHeader,
}

pub fn save_checkpoint(state: &TrainState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_avatar(&state.model, dir)?;
    save_rcn(&state.rcn, dir)?;
    save_body(&state.model.body.bundle, &dir.join("body"))?;
    let file = StateFile {
        version: CHECKPOINT_FORMAT_VERSION,
        iteration: state.iteration,
        stage: state.stage(),
        splat_count: state.model.len(),
        bundle_hash: state.model.body.hash.clone(),
        config_hash: state.config.hash(),
        config: state.config.clone(),
        stabilized: state.stabilized,
        count_history: state.count_history.clone(),
        optim: OptimHeader {
            splat_step: state.splat_adam.step,
            splat_values: state.splat_adam.len(),
            rcn_step: state.rcn_adam.step,
            rcn_values: state.rcn_adam.len(),
        },
    };
    let a = &state.splat_adam;
    let r = &state.rcn_adam;
    let bin: Vec<u8> = [&a.m, &a.v, &r.m, &r.v]
        .into_iter()
        .flat_map(|b| b.iter().flat_map(|x| x.to_le_bytes()))
        .collect();
    crate::util::write_atomic(&dir.join("optim.bin"), &bin)?;
    crate::util::write_atomic(&dir.join("state.json"), serde_json::to_string_pretty(&file)?.as_bytes())
}

/// Reads a checkpoint together with the body bundle stored beside it.
pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let path = dir.join("state.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    let f: StateFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if f.version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", f.version)));
    }
    if f.config.hash() != f.config_hash {
        return Err(Error::format(&path, "config does not match its recorded hash"));
    }
    let body = Arc::new(Body::new(load_body(&dir.join("body"))?)?);
    if body.hash != f.bundle_hash {
        return Err(Error::format(&path, "stored body bundle does not match the checkpoint"));
    }
    let model = load_avatar(dir, body)?;
    let rcn = load_rcn(dir)?;
    if model.len() != f.splat_count || f.optim.splat_values != f.splat_count * SPLAT_PARAMS {
        return Err(Error::format(&path, "splat count disagrees with avatar.bin"));
    }
    if f.optim.rcn_values != rcn.value_count() {
        return Err(Error::format(&path, "optimizer size disagrees with rcn.bin"));
    }
    let mut state = TrainState::from_parts(f.config, model, rcn, f.iteration)?;
    let opath = dir.join("optim.bin");
    let bytes = std::fs::read(&opath)?;
    let (ns, nr) = (f.optim.splat_values, f.optim.rcn_values);
    if bytes.len() != 8 * 2 * (ns + nr) {
        return Err(Error::format(&opath, format!("{} bytes, expected {}", bytes.len(), 16 * (ns + nr))));
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let (sm, rest) = vals.split_at(ns);
    let (sv, rest) = rest.split_at(ns);
    let (rm, rv) = rest.split_at(nr);
    state.splat_adam = Adam {
        step: f.optim.splat_step,
        m: sm.to_vec(),
        v: sv.to_vec(),
    };
    state.rcn_adam = Adam {
        step: f.optim.rcn_step,
        m: rm.to_vec(),
        v: rv.to_vec(),
    };
    state.count_history = f.count_history;
    state.stabilized = f.stabilized;
    Ok(state)
}
