//! Training losses, their gradients, and the PSNR/SSIM metrics.
//!
//! Every loss returns its value together with the gradient with respect to
//! its continuous inputs. Threshold selections (which splats violate a scale
//! bound, which pixels have a usable depth normal) are treated as constants.

use serde::{Deserialize, Serialize};

use crate::body::JointTriSet;
use crate::error::{Error, Result};
use crate::math::tape::{GradTape, Real};
use crate::math::vec::{self, Vec3};
use crate::math::Quat;
use crate::raster::{Camera, ImageGrads, RenderOutput, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub l1: f64,
    pub mse: f64,
    pub lpips: f64,
    pub scaling: f64,
    pub joint: f64,
    pub normal: f64,
    pub rcn: f64,
    /// Absolute scale above which an elongated splat is penalised.
    pub eps_s: f64,
    /// Anisotropy ratio above which a large splat is penalised.
    pub eps_r: f64,
    /// Scale bound for splats on joint triangles.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            mse: 10.0,
            lpips: 0.01,
            scaling: 20.0,
            joint: 10.0,
            normal: 0.01,
            rcn: 0.1,
            eps_s: 0.008,
            eps_r: 5.0,
            tau: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.l1, self.mse, self.lpips, self.scaling, self.joint, self.normal, self.rcn, self.eps_s, self.eps_r, self.tau,
        ];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput("loss weights and thresholds must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub mse: f64,
    pub lpips: f64,
    pub scaling: f64,
    pub joint: f64,
    pub normal: f64,
    pub rcn: f64,
    pub total: f64,
}

/// Fills in `total` as the weighted sum of the terms.
pub fn total_loss(mut r: LossReport, w: &LossWeights) -> LossReport {
    r.total = w.l1 * r.l1
        + w.mse * r.mse
        + w.lpips * r.lpips
        + w.scaling * r.scaling
        + w.joint * r.joint
        + w.normal * r.normal
        + w.rcn * r.rcn;
    r
}

/// A perceptual image term plugged into the `lpips` slot. None ships with
/// this crate; without one the term is zero.
pub trait PerceptualLoss: Send + Sync {
    /// Loss value and gradient with respect to `pred` (linear RGB, row-major).
    fn loss_and_grad(&self, pred: &RgbImage, target: &RgbImage) -> Result<(f64, Vec<f64>)>;
}

fn check_image_pair(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != target.len() || pred.len() != 3 * mask.len() {
        return Err(Error::Dimension(format!(
            "prediction {} / target {} values for {} mask pixels",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let n = mask.iter().filter(|m| **m).count();
    if n == 0 {
        return Err(Error::InvalidInput("mask selects no pixels".into()));
    }
    Ok(n)
}

/// Mean absolute and mean squared error over the masked pixels (all three
/// channels of each).
pub fn l1_mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<(f64, f64)> {
    let n = check_image_pair(pred, target, mask)?;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..3 {
            let e = pred[3 * i + c] - target[3 * i + c];
            l1 += e.abs();
            l2 += e * e;
        }
    }
    let count = (3 * n) as f64;
    Ok((l1 / count, l2 / count))
}

/// Gradient of `w_l1·L1 + w_mse·MSE` with respect to `pred`.
pub fn l1_mse_grad(pred: &[f64], target: &[f64], mask: &[bool], w_l1: f64, w_mse: f64) -> Result<Vec<f64>> {
    let n = check_image_pair(pred, target, mask)?;
    let count = (3 * n) as f64;
    let mut g = vec![0.0; pred.len()];
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for c in 0..3 {
            let k = 3 * i + c;
            let e = pred[k] - target[k];
            let sign = if e > 0.0 {
                1.0
            } else if e < 0.0 {
                -1.0
            } else {
                0.0
            };
            g[k] = (w_l1 * sign + w_mse * 2.0 * e) / count;
        }
    }
    Ok(g)
}

fn max_min(s: [f64; 2]) -> (usize, f64, f64) {
    if s[0] >= s[1] {
        (0, s[0], s[1])
    } else {
        (1, s[1], s[0])
    }
}

/// Mean of the larger scale over splats that are both large (`> eps_s`) and
/// elongated (ratio `> eps_r`). Returns the value and per-splat gradients.
pub fn scaling_loss(scales: &[[f64; 2]], eps_s: f64, eps_r: f64) -> (f64, Vec<[f64; 2]>) {
    let violating: Vec<usize> = scales
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let (_, hi, lo) = max_min(**s);
            hi > eps_s && hi > eps_r * lo
        })
        .map(|(i, _)| i)
        .collect();
    mean_of_max(scales, &violating)
}

/// Mean of the larger scale over joint-triangle splats whose larger scale
/// exceeds `tau`.
pub fn joint_loss(faces: &[u32], scales: &[[f64; 2]], joint_set: &JointTriSet, tau: f64) -> Result<(f64, Vec<[f64; 2]>)> {
    if faces.len() != scales.len() {
        return Err(Error::Dimension(format!("{} faces for {} scales", faces.len(), scales.len())));
    }
    let violating: Vec<usize> = (0..scales.len())
        .filter(|&i| joint_set.contains(faces[i] as usize) && max_min(scales[i]).1 > tau)
        .collect();
    Ok(mean_of_max(scales, &violating))
}

fn mean_of_max(scales: &[[f64; 2]], set: &[usize]) -> (f64, Vec<[f64; 2]>) {
    let mut g = vec![[0.0; 2]; scales.len()];
    if set.is_empty() {
        return (0.0, g);
    }
    let n = set.len() as f64;
    let mut sum = 0.0;
    for &i in set {
        let (k, hi, _) = max_min(scales[i]);
        sum += hi;
        g[i][k] = 1.0 / n;
    }
    (sum / n, g)
}

/// `|1 - mean⟨q_lbs, q_rcn⟩|` with each pair brought into the same
/// hemisphere. Returns the value and the gradients with respect to `q_lbs`
/// and `q_rcn`.
pub fn rcn_loss(q_lbs: &[Quat], q_rcn: &[Quat]) -> Result<(f64, Vec<[f64; 4]>, Vec<[f64; 4]>)> {
    if q_lbs.len() != q_rcn.len() {
        return Err(Error::Dimension(format!("{} LBS vs {} compensated rotations", q_lbs.len(), q_rcn.len())));
    }
    let n = q_lbs.len();
    if n == 0 {
        return Ok((0.0, Vec::new(), Vec::new()));
    }
    let dots: Vec<f64> = q_lbs.iter().zip(q_rcn).map(|(a, b)| a.dot(*b)).collect();
    let mean = dots.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let r = 1.0 - mean;
    let outer = if r > 0.0 {
        -1.0
    } else if r < 0.0 {
        1.0
    } else {
        0.0
    };
    let mut g_lbs = Vec::with_capacity(n);
    let mut g_rcn = Vec::with_capacity(n);
    for ((a, b), d) in q_lbs.iter().zip(q_rcn).zip(&dots) {
        let k = outer * d.signum() / n as f64;
        g_lbs.push(b.to_array().map(|x| k * x));
        g_rcn.push(a.to_array().map(|x| k * x));
    }
    Ok((r.abs(), g_lbs, g_rcn))
}

/// Alpha below which a pixel's normalised depth is not trusted.
pub const NORMAL_ALPHA_MIN: f64 = 0.5;

/// Which pixels take part in the normal loss: interior pixels whose own
/// alpha and those of their four neighbours reach [`NORMAL_ALPHA_MIN`].
pub fn normal_loss_mask(out: &RenderOutput) -> Vec<bool> {
    let (w, h) = (out.width, out.height);
    let ok = |x: usize, y: usize| out.alpha[y * w + x] >= NORMAL_ALPHA_MIN;
    (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x >= 1 && y >= 1 && x + 1 < w && y + 1 < h && ok(x, y) && ok(x - 1, y) && ok(x + 1, y) && ok(x, y - 1) && ok(x, y + 1)
        })
        .collect()
}

/// Unit normal at an interior pixel from central differences of the depth
/// buffer, oriented toward the camera.
pub fn depth_normal(out: &RenderOutput, cam: &Camera, x: usize, y: usize) -> Vec3 {
    let p = |x: usize, y: usize| vec::scale(cam.ray(x as f64 + 0.5, y as f64 + 0.5), out.depth[y * out.width + x]);
    let dx = vec::sub(p(x + 1, y), p(x - 1, y));
    let dy = vec::sub(p(x, y + 1), p(x, y - 1));
    vec::normalize(vec::cross(dy, dx))
}

/// Normal consistency between blended splat normals and the normal of the
/// rendered depth map: `Σ_i w_i (1 - n_iᵀN)` per pixel, summed and divided
/// by the pixel count. Because `Σ w_i = alpha` and `Σ w_i n_i` is the normal
/// buffer, the per-pixel term is `alpha - normal·N`.
pub fn normal_loss(out: &RenderOutput, cam: &Camera) -> Result<(f64, ImageGrads)> {
    let (w, h) = (out.width, out.height);
    if (w, h) != (cam.width, cam.height) {
        return Err(Error::Dimension("render output and camera sizes differ".into()));
    }
    let np = (w * h) as f64;
    let mask = normal_loss_mask(out);
    let mut grads = ImageGrads::zeros(w * h);
    let mut total = 0.0;
    let tape = GradTape::new();
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (x, y) = (i % w, i / w);
        let nb = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)];
        tape.clear();
        let d = nb.map(|(qx, qy)| tape.var(out.depth[qy * w + qx]));
        let p: [[_; 3]; 4] = std::array::from_fn(|k| {
            let r = cam.ray(nb[k].0 as f64 + 0.5, nb[k].1 as f64 + 0.5);
            vec::scale(vec::lift(r), d[k])
        });
        let dx = vec::sub(p[0], p[1]);
        let dy = vec::sub(p[2], p[3]);
        let cr = vec::cross(dy, dx);
        if vec::norm(vec::value(cr)) < 1e-12 {
            continue;
        }
        let n_depth = vec::normalize(cr);
        let rendered = [out.normal[3 * i], out.normal[3 * i + 1], out.normal[3 * i + 2]];
        let proj = vec::dot(vec::lift(rendered), n_depth);
        total += out.alpha[i] - proj.value();
        grads.alpha[i] += 1.0 / np;
        for c in 0..3 {
            grads.normal[3 * i + c] -= n_depth[c].value() / np;
        }
        let adj = tape.backward(&[(proj, -1.0 / np)]);
        for (k, (qx, qy)) in nb.iter().enumerate() {
            grads.depth[qy * w + qx] += adj.of(d[k]);
        }
    }
    Ok((total / np, grads))
}

pub const PSNR_CAP: f64 = 100.0;

pub fn psnr(pred: &RgbImage, target: &RgbImage) -> Result<f64> {
    same_shape(pred, target)?;
    let mse = pred.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.data.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// PSNR restricted to masked pixels.
pub fn masked_psnr(pred: &RgbImage, target: &RgbImage, mask: &[bool]) -> Result<f64> {
    let (_, mse) = l1_mse(&pred.data, &target.data, mask)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

/// Intersection over union of the `alpha >= 0.5` regions of two alpha
/// maps. Two empty masks count as a perfect match.
pub fn mask_iou(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        let (p, q) = (*x >= 0.5, *y >= 0.5);
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn same_shape(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{} images",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian filter over the valid region of one channel.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|j| k[j] * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over the valid 11×11 Gaussian windows of each
/// channel, averaged over channels. Values are assumed to lie in `[0, 1]`.
pub fn ssim(pred: &RgbImage, target: &RgbImage) -> Result<f64> {
    same_shape(pred, target)?;
    let (w, h) = (pred.width, pred.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let k = gaussian_window();
    let mut acc = 0.0;
    for c in 0..3 {
        let a: Vec<f64> = pred.data.iter().skip(c).step_by(3).copied().collect();
        let b: Vec<f64> = target.data.iter().skip(c).step_by(3).copied().collect();
        let prod = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).collect::<Vec<_>>();
        let (ma, ow, oh) = filter_valid(&a, w, h, &k);
        let (mb, _, _) = filter_valid(&b, w, h, &k);
        let (saa, _, _) = filter_valid(&prod(&a, &a), w, h, &k);
        let (sbb, _, _) = filter_valid(&prod(&b, &b), w, h, &k);
        let (sab, _, _) = filter_valid(&prod(&a, &b), w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            let va = saa[i] - ma[i] * ma[i];
            let vb = sbb[i] - mb[i] * mb[i];
            let cov = sab[i] - ma[i] * mb[i];
            sum += ((2.0 * ma[i] * mb[i] + c1) * (2.0 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
        }
        acc += sum / (ow * oh) as f64;
    }
    Ok(acc / 3.0)
}
