use crate::error::{Error, Result};
use crate::math::vec::Vec3;
use crate::raster::Camera;

/// Pixels with at least this alpha carry a depth sample; the rest are free space.
pub const FOREGROUND_ALPHA: f64 = 0.5;

/// Regular grid of truncated signed distances, normalised to `[-1, 1]`
/// (negative inside). Samples sit at `origin + voxel_size·(i, j, k)`, with
/// `i` varying fastest in the flat buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Vec3,
    /// Distance, in world units, that maps to ±1.
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    /// Number of observations fused into each sample.
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    /// Empty volume: every sample is free space with zero weight.
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && truncation > 0.0) || !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("voxel size and truncation must be positive".into()));
        }
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidInput(format!("volume needs at least 2 samples per axis, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(TsdfVolume {
            dims,
            voxel_size,
            origin,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Samples an analytic signed distance function.
    pub fn from_sdf(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64, sdf: impl Fn(Vec3) -> f64) -> Result<Self> {
        let mut v = Self::new(origin, voxel_size, dims, truncation)?;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = v.index(i, j, k);
                    v.tsdf[idx] = (sdf(v.point(i, j, k)) / truncation).clamp(-1.0, 1.0);
                    v.weight[idx] = 1.0;
                }
            }
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tsdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tsdf.is_empty()
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size;
        [self.origin[0] + h * i as f64, self.origin[1] + h * j as f64, self.origin[2] + h * k as f64]
    }

    /// Fuses one rendered view. Foreground pixels contribute the truncated
    /// distance along the optical axis; samples more than the truncation
    /// behind the surface are left alone. Background pixels mark the samples
    /// projecting onto them as free space.
    pub fn integrate(&mut self, cam: &Camera, depth: &[f64], alpha: &[f64]) -> Result<()> {
        let np = cam.pixel_count();
        if depth.len() != np || alpha.len() != np {
            return Err(Error::Dimension(format!(
                "depth {} and alpha {} for a {}x{} view",
                depth.len(),
                alpha.len(),
                cam.width,
                cam.height
            )));
        }
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let pc = cam.to_camera(self.point(i, j, k));
                    if pc[2] <= crate::raster::NEAR_PLANE {
                        continue;
                    }
                    let [u, v] = cam.project(pc);
                    if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
                        continue;
                    }
                    let px = u as usize + cam.width * v as usize;
                    let obs = if alpha[px] < FOREGROUND_ALPHA {
                        1.0
                    } else {
                        let sdf = depth[px] - pc[2];
                        if sdf < -self.truncation {
                            continue;
                        }
                        (sdf / self.truncation).min(1.0)
                    };
                    let idx = self.index(i, j, k);
                    let w = self.weight[idx];
                    self.tsdf[idx] = (self.tsdf[idx] * w + obs) / (w + 1.0);
                    self.weight[idx] = w + 1.0;
                }
            }
        }
        Ok(())
    }

    /// Sets every sample that received no observation to `value`.
    pub fn fill_unobserved(&mut self, value: f64) {
        for (t, w) in self.tsdf.iter_mut().zip(&self.weight) {
            if *w == 0.0 {
                *t = value;
            }
        }
    }

    /// Marks the outer layer of samples as free space so that the extracted
    /// surface is closed.
    pub fn seal_boundary(&mut self) {
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                        let idx = self.index(i, j, k);
                        self.tsdf[idx] = 1.0;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wall_view() -> (Camera, Vec<f64>, Vec<f64>) {
        let cam = Camera::look_at([0.0, 0.0, 2.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 40.0, 40.0, 32, 32).unwrap();
        // a wall at world z = 0 covering the left half of the image
        let alpha: Vec<f64> = (0..32 * 32).map(|p| if p % 32 < 16 { 1.0 } else { 0.0 }).collect();
        let depth = alpha.iter().map(|a| if *a > 0.0 { 2.0 } else { 0.0 }).collect();
        (cam, depth, alpha)
    }

    #[test]
    fn empty_volume_is_free_space() {
        let v = TsdfVolume::new([0.0; 3], 0.1, [3, 4, 5], 0.3).unwrap();
        assert_eq!(v.len(), 60);
        assert!(v.tsdf.iter().all(|t| *t == 1.0));
        assert!(v.weight.iter().all(|w| *w == 0.0));
        assert!(TsdfVolume::new([0.0; 3], 0.1, [1, 4, 5], 0.3).is_err());
        assert!(TsdfVolume::new([0.0; 3], 0.0, [3, 4, 5], 0.3).is_err());
    }

    #[test]
    fn plane_view_has_its_zero_crossing_at_the_depth() {
        let (cam, depth, alpha) = wall_view();
        let mut v = TsdfVolume::new([-0.5, -0.5, -0.5], 0.05, [21, 21, 21], 0.2).unwrap();
        v.integrate(&cam, &depth, &alpha).unwrap();
        // the camera looks down -z, so camera depth 2 is world z = 0
        let i = 3;
        for (k, z) in [(7, -0.15), (8, -0.1), (10, 0.0), (12, 0.1), (14, 0.2), (16, 0.3)] {
            let idx = v.index(i, 10, k);
            let expect = (z / 0.2f64).clamp(-1.0, 1.0);
            assert!((v.tsdf[idx] - expect).abs() < 1e-9, "z {z}: {}", v.tsdf[idx]);
            assert_eq!(v.weight[idx], 1.0);
        }
        // behind the truncation band: untouched
        assert_eq!(v.weight[v.index(i, 10, 0)], 0.0);
        // free space on the right half
        let idx = v.index(18, 10, 2);
        assert_eq!((v.tsdf[idx], v.weight[idx]), (1.0, 1.0));
    }

    #[test]
    fn fusion_is_order_independent() {
        let (cam_a, depth_a, alpha_a) = wall_view();
        let cam_b = Camera::look_at([1.5, 0.2, 1.5], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 30.0, 30.0, 32, 32).unwrap();
        let depth_b = vec![2.0; 32 * 32];
        let alpha_b: Vec<f64> = (0..32 * 32).map(|p| if (p / 32) < 20 { 0.9 } else { 0.1 }).collect();
        let cam_c = Camera::look_at([-1.0, 1.0, 1.8], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 35.0, 35.0, 32, 32).unwrap();
        let depth_c: Vec<f64> = (0..32 * 32).map(|p| 2.0 + 0.01 * (p % 7) as f64).collect();
        let alpha_c = vec![1.0; 32 * 32];
        let views = [(&cam_a, &depth_a, &alpha_a), (&cam_b, &depth_b, &alpha_b), (&cam_c, &depth_c, &alpha_c)];
        let fuse = |order: [usize; 3]| {
            let mut v = TsdfVolume::new([-0.5, -0.5, -0.5], 0.05, [21, 21, 21], 0.2).unwrap();
            for o in order {
                let (c, d, a) = views[o];
                v.integrate(c, d, a).unwrap();
            }
            v
        };
        let base = fuse([0, 1, 2]);
        for order in [[2, 1, 0], [1, 0, 2], [2, 0, 1]] {
            let other = fuse(order);
            assert_eq!(other.weight, base.weight);
            for (a, b) in other.tsdf.iter().zip(&base.tsdf) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn integrate_checks_buffer_sizes() {
        let (cam, depth, _) = wall_view();
        let mut v = TsdfVolume::new([0.0; 3], 0.1, [3, 3, 3], 0.3).unwrap();
        assert!(matches!(v.integrate(&cam, &depth, &[0.0; 4]), Err(Error::Dimension(_))));
    }

    #[test]
    fn values_stay_in_range() {
        let v = TsdfVolume::from_sdf([-1.0; 3], 0.1, [21, 21, 21], 0.25, |p| p[0] * 10.0).unwrap();
        assert!(v.tsdf.iter().all(|t| t.abs() <= 1.0));
    }
}
