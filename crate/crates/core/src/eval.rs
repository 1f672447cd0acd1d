//! Held-out image metrics in the layout of a method-comparison table: one
//! row per subject with mean PSNR, SSIM and LPIPS, plus the per-frame values.

use serde::{Deserialize, Serialize};

use crate::dataset::{load_frames, DatasetManifest};
use crate::error::{Error, Result};
use crate::losses::{psnr, ssim, PerceptualLoss};
use crate::raster::RgbImage;
use crate::train::TrainState;

pub const EVAL_REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub id: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when no perceptual model was supplied.
    pub lpips: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub method: String,
    pub split: String,
    pub columns: Vec<String>,
    pub rows: Vec<SubjectRow>,
    pub frames: Vec<FrameMetrics>,
}

/// Frame ids of a named split (`train` or `test`).
pub fn split_ids<'a>(manifest: &'a DatasetManifest, split: &str) -> Result<&'a [usize]> {
    match split {
        "train" => Ok(&manifest.split.train),
        "test" => Ok(&manifest.split.test),
        other => Err(Error::InvalidInput(format!("unknown split {other:?}, expected train or test"))),
    }
}

/// Renders every frame of `split` and scores it against the masked capture.
pub fn evaluate(state: &TrainState, manifest: &DatasetManifest, split: &str, perceptual: Option<&dyn PerceptualLoss>) -> Result<EvalReport> {
    let ids = split_ids(manifest, split)?;
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!("split {split:?} has no frames")));
    }
    let mut frames = Vec::with_capacity(ids.len());
    for f in load_frames(manifest, ids)? {
        let out = state.render(&f.pose, &f.camera)?;
        let pred = RgbImage::new(out.width, out.height, out.color)?;
        let target = f.composited();
        let lpips = perceptual.map(|p| p.loss_and_grad(&pred, &target).map(|(v, _)| v)).transpose()?;
        frames.push(FrameMetrics {
            id: f.id,
            psnr: psnr(&pred, &target)?,
            ssim: ssim(&pred, &target)?,
            lpips,
        });
    }
    let n = frames.len() as f64;
    let subject = manifest
        .dir
        .file_name()
        .map_or_else(|| "subject".to_string(), |s| s.to_string_lossy().into_owned());
    let row = SubjectRow {
        subject,
        frames: frames.len(),
        psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        lpips: frames.iter().map(|f| f.lpips).sum::<Option<f64>>().map(|s| s / n),
    };
    Ok(EvalReport {
        version: EVAL_REPORT_VERSION,
        method: "surfel-avatar".into(),
        split: split.into(),
        columns: ["PSNR", "SSIM", "LPIPS"].map(String::from).to_vec(),
        rows: vec![row],
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{make_mini_body, Body, MiniBodySpec};
    use crate::dataset::{load_manifest, make_synthetic_dataset, SyntheticConfig};
    use crate::train::TrainConfig;
    use std::sync::Arc;

    #[test]
    fn report_layout() {
        let body = Arc::new(Body::new(make_mini_body(&MiniBodySpec::arm(), 0).unwrap()).unwrap());
        let d = tempfile::tempdir().unwrap();
        let cfg = SyntheticConfig {
            train_views: 2,
            test_views: 2,
            width: 24,
            height: 24,
            splats: 60,
            ..SyntheticConfig::default()
        };
        make_synthetic_dataset(body.clone(), &cfg, d.path()).unwrap();
        let m = load_manifest(d.path()).unwrap();
        let tc = TrainConfig {
            splats: 60,
            joint_radius: 0.05,
            ..TrainConfig::default()
        };
        let state = TrainState::new(tc, body, vec![]).unwrap();
        let r = evaluate(&state, &m, "test", None).unwrap();
        assert_eq!(r.frames.len(), 2);
        assert_eq!(r.rows.len(), 1);
        let mean = (r.frames[0].psnr + r.frames[1].psnr) / 2.0;
        assert!((r.rows[0].psnr - mean).abs() < 1e-12);
        assert!(r.rows[0].ssim <= 1.0);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["rows"][0]["lpips"].is_null());
        assert_eq!(json["columns"], serde_json::json!(["PSNR", "SSIM", "LPIPS"]));
        assert!(matches!(evaluate(&state, &m, "val", None), Err(Error::InvalidInput(_))));
    }
}
