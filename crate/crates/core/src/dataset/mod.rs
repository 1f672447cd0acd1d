//! On-disk capture layout: `dataset.json`, `frames/%05d.png`, `masks/%05d.png`.
//!
//! ```text
//! {
//!   "version": 1,
//!   "camera": { "fx", "fy", "cx", "cy", "world_to_camera": 4x4 row-major, "width", "height" },
//!   "frames": [ { "id", "image", "mask", "theta": [72], "beta": [10], "translation": [3] } ],
//!   "split": { "train": [ids], "test": [ids] }
//! }
//! ```
//!
//! Image paths are relative to the dataset directory. Images are sRGB PNGs
//! and are converted to linear values on load; masks are binarised at 0.5.

mod synthetic;

pub use synthetic::{
    ground_truth_avatar, make_synthetic_dataset, render_avatar, synthetic_camera, synthetic_pose, SyntheticConfig,
};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::Pose;
use crate::math::vec::Vec3;
use crate::error::{Error, Result};
use crate::raster::{load_mask_png, Camera, RgbImage};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const THETA_LEN: usize = 72;
pub const BETA_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: usize,
    pub image: String,
    pub mask: String,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub translation: Vec<f64>,
}

impl FrameRecord {
    pub fn pose(&self) -> Pose {
        Pose {
            theta: self.theta.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            translation: [self.translation[0], self.translation[1], self.translation[2]],
            beta: self.beta.clone(),
        }
    }

    /// Record for `pose`, padding theta to 72 and beta to 10 entries.
    pub fn from_pose(id: usize, pose: &Pose) -> Result<Self> {
        if pose.theta.len() * 3 > THETA_LEN || pose.beta.len() > BETA_LEN {
            return Err(Error::Dimension("pose does not fit the 72/10 layout".into()));
        }
        let mut beta = pose.beta.clone();
        beta.resize(BETA_LEN, 0.0);
        Ok(FrameRecord {
            id,
            image: format!("frames/{id:05}.png"),
            mask: format!("masks/{id:05}.png"),
            theta: pose.theta_flat(THETA_LEN),
            beta,
            translation: pose.translation.to_vec(),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    camera: serde_json::Value,
    frames: Vec<FrameRecord>,
    split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub dir: PathBuf,
    pub camera: Camera,
    pub frames: Vec<FrameRecord>,
    pub split: Split,
}

/// One decoded frame.
#[derive(Clone, Debug)]
pub struct FrameSample {
    pub id: usize,
    pub image: RgbImage,
    pub mask: Vec<bool>,
    pub pose: Pose,
    pub camera: Camera,
}

impl FrameSample {
    /// The image with everything outside the mask set to black.
    pub fn composited(&self) -> RgbImage {
        let mut img = self.image.clone();
        for (i, m) in self.mask.iter().enumerate() {
            if !m {
                img.data[3 * i..3 * i + 3].fill(0.0);
            }
        }
        img
    }
}

impl DatasetManifest {
    pub fn record(&self, id: usize) -> Result<&FrameRecord> {
        self.frames
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::InvalidInput(format!("no frame with id {id}")))
    }

    /// Serialises to `dir/dataset.json`. Frame files are not touched.
    pub fn save(&self) -> Result<()> {
        let file = ManifestFile {
            version: DATASET_FORMAT_VERSION,
            camera: serde_json::to_value(self.camera)?,
            frames: self.frames.clone(),
            split: self.split.clone(),
        };
        std::fs::create_dir_all(&self.dir)?;
        crate::util::write_atomic(&self.dir.join("dataset.json"), serde_json::to_string_pretty(&file)?.as_bytes())
    }
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    let bad = |field: String, reason: String| Error::format(&path, format!("{field}: {reason}"));
    if file.version != DATASET_FORMAT_VERSION {
        return Err(bad("version".into(), format!("unsupported value {}", file.version)));
    }
    let camera: Camera = serde_json::from_value(file.camera).map_err(|e| bad("camera".into(), e.to_string()))?;
    let mut ids = HashSet::new();
    for (i, f) in file.frames.iter().enumerate() {
        let field = |name: &str| format!("frames[{i}].{name}");
        if !ids.insert(f.id) {
            return Err(bad(field("id"), format!("duplicate id {}", f.id)));
        }
        for (name, vals, want) in [
            ("theta", &f.theta, THETA_LEN),
            ("beta", &f.beta, BETA_LEN),
            ("translation", &f.translation, 3),
        ] {
            if vals.len() != want {
                return Err(bad(field(name), format!("expected {want} values, found {}", vals.len())));
            }
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(bad(field(name), "non-finite value".into()));
            }
        }
        for (name, rel) in [("image", &f.image), ("mask", &f.mask)] {
            if !dir.join(rel).is_file() {
                return Err(bad(field(name), format!("missing file {rel}")));
            }
        }
    }
    let train: HashSet<usize> = file.split.train.iter().copied().collect();
    for (name, list) in [("split.train", &file.split.train), ("split.test", &file.split.test)] {
        if let Some(id) = list.iter().find(|id| !ids.contains(id)) {
            return Err(bad(name.into(), format!("unknown frame id {id}")));
        }
    }
    if let Some(id) = file.split.test.iter().find(|id| train.contains(id)) {
        return Err(bad("split".into(), format!("frame {id} is in both train and test")));
    }
    Ok(DatasetManifest {
        dir: dir.to_path_buf(),
        camera,
        frames: file.frames,
        split: file.split,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseJson {
    Nested(Pose),
    Flat {
        theta: Vec<f64>,
        #[serde(default)]
        beta: Vec<f64>,
        #[serde(default)]
        translation: Option<Vec3>,
    },
}

impl PoseJson {
    fn into_pose(self) -> std::result::Result<Pose, String> {
        match self {
            PoseJson::Nested(p) => Ok(p),
            PoseJson::Flat { theta, beta, translation } => {
                if theta.len() % 3 != 0 {
                    return Err(format!("flat theta has {} values, not a multiple of 3", theta.len()));
                }
                Ok(Pose {
                    theta: theta.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                    translation: translation.unwrap_or([0.0; 3]),
                    beta,
                })
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PoseFile {
    Many(Vec<PoseJson>),
    One(PoseJson),
}

/// Reads one pose or a non-empty JSON array of poses. `theta` is either a list of
/// per-joint axis-angle triples or a flat list (e.g. the 72 values of a
/// frame record); `beta` and `translation` default to zero.
pub fn load_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path)?;
    let file: PoseFile = serde_json::from_str(&text).map_err(|e| Error::format(path, format!("not a pose record or array: {e}")))?;
    let list = match file {
        PoseFile::Many(v) => v,
        PoseFile::One(p) => vec![p],
    };
    let poses = list
        .into_iter()
        .map(PoseJson::into_pose)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::format(path, e))?;
    if poses.is_empty() {
        return Err(Error::format(path, "no poses"));
    }
    if let Some(i) = poses.iter().position(|p| !p.is_finite()) {
        return Err(Error::format(path, format!("pose {i} has non-finite values")));
    }
    Ok(poses)
}

/// Reads a camera from a bare camera object or from a `dataset.json`.
pub fn load_camera(path: &Path) -> Result<Camera> {
    let text = std::fs::read_to_string(path)?;
    let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if let Some(c) = v.get_mut("camera") {
        v = c.take();
    }
    serde_json::from_value(v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_frame(manifest: &DatasetManifest, id: usize) -> Result<FrameSample> {
    let rec = manifest.record(id)?;
    let cam = manifest.camera;
    let image = RgbImage::load_png(&manifest.dir.join(&rec.image))?;
    let mask_path = manifest.dir.join(&rec.mask);
    let (mw, mh, mask) = load_mask_png(&mask_path)?;
    if (image.width, image.height) != (cam.width, cam.height) || (mw, mh) != (cam.width, cam.height) {
        return Err(Error::format(
            &mask_path,
            format!("frame {id}: image/mask size does not match the {}x{} camera", cam.width, cam.height),
        ));
    }
    let mask: Vec<bool> = mask.into_iter().map(|m| m >= 0.5).collect();
    if !mask.iter().any(|m| *m) {
        return Err(Error::format(&mask_path, format!("frame {id}: mask is empty")));
    }
    Ok(FrameSample {
        id,
        image,
        mask,
        pose: rec.pose(),
        camera: cam,
    })
}

pub fn load_frames(manifest: &DatasetManifest, ids: &[usize]) -> Result<Vec<FrameSample>> {
    ids.par_iter().map(|&id| load_frame(manifest, id)).collect()
}
