use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{save_checkpoint, train_step, TrainState};
use crate::dataset::{load_frames, DatasetManifest, FrameSample};
use crate::error::{Error, Result};
use crate::losses::{psnr, LossReport, PerceptualLoss};
use crate::raster::RgbImage;

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Fills the `lpips` loss slot when set.
    pub perceptual: Option<Arc<dyn PerceptualLoss>>,
    /// Also checkpoint every this many iterations (0: only at the stage
    /// switch and at the end).
    pub checkpoint_interval: u64,
    /// Print a one-line summary every this many iterations (0: silent).
    pub print_interval: u64,
}

/// One line of `train.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: u64,
    pub stage: u8,
    pub frame: usize,
    pub loss: LossReport,
    pub splats: usize,
    pub walks: usize,
    /// Held-out PSNR, on evaluation iterations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    /// Density-control verdict, on pruning iterations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stabilized: Option<bool>,
}

/// Training frame used at `iteration`; depends only on the seed and the
/// iteration, so resumed runs see the same sequence.
pub fn frame_for_iteration(seed: u64, iteration: u64, count: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.gen_range(0..count)
}

#[derive(Serialize)]
struct FailureDump<'a> {
    iteration: u64,
    stage: u8,
    frame: usize,
    splats: usize,
    error: String,
    last_record: Option<&'a LogRecord>,
}

fn held_out_psnr(state: &TrainState, frame: &FrameSample) -> Result<f64> {
    let out = state.render(&frame.pose, &frame.camera)?;
    psnr(&RgbImage::new(out.width, out.height, out.color)?, &frame.composited())
}

/// Trains `state` on the manifest's training split until both stages are
/// done, writing `train.jsonl` and the checkpoint into `out` (the stage-1
/// result also goes to `out/stage1`). A non-finite loss stops the run and
/// leaves `failure.json` next to the log.
pub fn run_training(mut state: TrainState, manifest: &DatasetManifest, out: &Path, opts: &RunOptions) -> Result<TrainState> {
    if manifest.split.train.is_empty() {
        return Err(Error::InvalidInput("dataset has no training frames".into()));
    }
    std::fs::create_dir_all(out)?;
    let frames = load_frames(manifest, &manifest.split.train)?;
    let eval_id = manifest.split.test.first().copied().unwrap_or(manifest.split.train[0]);
    let eval_frame = crate::dataset::load_frame(manifest, eval_id)?;
    let log_path = out.join("train.jsonl");
    let file = if state.iteration == 0 {
        File::create(&log_path)?
    } else {
        OpenOptions::new().append(true).create(true).open(&log_path)?
    };
    let mut log = BufWriter::new(file);
    let perceptual = opts.perceptual.as_deref();
    let mut last: Option<LogRecord> = None;
    let cfg = state.config.clone();
    while !state.finished() {
        let idx = frame_for_iteration(cfg.seed, state.iteration, frames.len());
        let frame = &frames[idx];
        let history_len = state.count_history.len();
        let report = match train_step(&mut state, frame, perceptual) {
            Ok(r) => r,
            Err(e) => {
                log.flush()?;
                let dump = FailureDump {
                    iteration: state.iteration,
                    stage: state.stage(),
                    frame: frame.id,
                    splats: state.model.len(),
                    error: e.to_string(),
                    last_record: last.as_ref(),
                };
                crate::util::write_atomic(&out.join("failure.json"), serde_json::to_string_pretty(&dump)?.as_bytes())?;
                return Err(e);
            }
        };
        let done = state.iteration;
        let psnr = if cfg.eval_interval > 0 && done % cfg.eval_interval == 0 {
            Some(held_out_psnr(&state, &eval_frame)?)
        } else {
            None
        };
        let record = LogRecord {
            iteration: report.iteration,
            stage: report.stage,
            frame: frame.id,
            loss: report.loss,
            splats: state.model.len(),
            walks: report.walks,
            psnr,
            stabilized: (state.count_history.len() > history_len).then_some(state.stabilized),
        };
        serde_json::to_writer(&mut log, &record)?;
        log.write_all(b"\n")?;
        if opts.print_interval > 0 && (done % opts.print_interval == 0 || state.finished()) {
            let p = record.psnr.map(|p| format!(" psnr {p:.2}")).unwrap_or_default();
            eprintln!(
                "iter {done}/{} stage {} loss {:.5} splats {}{p}",
                cfg.total_iters(),
                record.stage,
                record.loss.total,
                record.splats
            );
        }
        last = Some(record);
        if done == cfg.stage1_iters && cfg.stage2_iters > 0 {
            save_checkpoint(&state, &out.join("stage1"))?;
        }
        if opts.checkpoint_interval > 0 && done % opts.checkpoint_interval == 0 && !state.finished() {
            log.flush()?;
            save_checkpoint(&state, out)?;
        }
    }
    log.flush()?;
    save_checkpoint(&state, out)?;
    Ok(state)
}

/// Shape coefficients of the first training frame, trimmed to the body.
pub fn dataset_beta(body: &crate::body::Body, manifest: &DatasetManifest) -> Result<Vec<f64>> {
    let Some(&first) = manifest.split.train.first() else {
        return Ok(vec![]);
    };
    let beta = &manifest.record(first)?.beta;
    if body.bundle.shape_basis.is_none() {
        return Ok(vec![]);
    }
    Ok(beta.iter().copied().take(body.bundle.shape_count()).collect())
}
