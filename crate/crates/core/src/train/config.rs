use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Multipliers on the base learning rate, one per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrScale {
    pub bary: f64,
    pub offset: f64,
    pub scale: f64,
    pub rot: f64,
    pub opacity: f64,
    pub sh: f64,
    pub rcn: f64,
}

impl Default for LrScale {
    fn default() -> Self {
        LrScale {
            bary: 0.1,
            offset: 1.0,
            scale: 1.0,
            rot: 1.0,
            opacity: 5.0,
            sh: 1.0,
            rcn: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage1_iters: u64,
    pub stage2_iters: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub losses: LossWeights,
    pub lr_scale: LrScale,
    /// Number of splats placed at initialisation; never exceeded.
    pub splats: usize,
    pub joint_radius: f64,
    pub prune_opacity: f64,
    pub prune_interval: u64,
    pub stabilization_window: u64,
    /// Relative change in splat count below which the count is stable.
    pub stabilization_tolerance: f64,
    /// Held-out PSNR is logged every this many iterations (0 disables).
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_iters: 30_000,
            stage2_iters: 10_000,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            losses: LossWeights::default(),
            lr_scale: LrScale::default(),
            splats: 30_000,
            joint_radius: crate::body::DEFAULT_JOINT_RADIUS,
            prune_opacity: 0.005,
            prune_interval: 500,
            stabilization_window: 2000,
            stabilization_tolerance: 0.01,
            eval_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        let s = &self.lr_scale;
        let rates = [self.learning_rate, s.bary, s.offset, s.scale, s.rot, s.opacity, s.sh, s.rcn];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::InvalidInput("Adam needs 0 <= beta < 1 and eps > 0".into()));
        }
        if self.splats == 0 || !(self.joint_radius > 0.0) {
            return Err(Error::InvalidInput("need at least one splat and a positive joint radius".into()));
        }
        if !(0.0..=1.0).contains(&self.prune_opacity) || !(self.stabilization_tolerance >= 0.0) {
            return Err(Error::InvalidInput("prune opacity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn total_iters(&self) -> u64 {
        self.stage1_iters + self.stage2_iters
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(text).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
